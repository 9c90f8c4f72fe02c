#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sdelab/field.hpp"
#include "sdelab/path.hpp"
#include "sdelab/scale.hpp"
#include "sdelab/solvers.hpp"

namespace sdelab {

enum class ModelTag {
  ReflectedBM,
  CircleProcess,
  PassThroughCircle,
  PenalizedSDE,
  DegenerateIndicator,
  SqrtCappedApprox,
  NoisePerturbApprox,
  PathDependent,
  TwoDimPathDependent,
  ShiftedSystem,
  ShiftedSystemApprox,
};

// Which of the two global solutions a non-unique model follows.
enum class Branch { Full, Stopped };

std::string to_string(ModelTag tag);
ModelTag parse_model_tag(const std::string& name);

class ModelError : public std::invalid_argument {
 public:
  ModelError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Parameters of one model. Fields a tag does not use are ignored.
//
//   x0          xi, the starting angle of circle models, or y^1 of shifted systems
//   y2          y^2 of shifted systems
//   eps         approximation parameter (> 0)
//   lo, hi      reflection interval of ReflectedBM
//   drift       b(x) = drift + drift_slope * x for PenalizedSDE
//   sigma       constant diffusion of PenalizedSDE (> 0)
//   bump        penalty of PenalizedSDE; empty means no penalty
struct ModelSpec {
  ModelTag tag = ModelTag::PenalizedSDE;
  double x0 = 0.0;
  double y2 = 0.0;
  double eps = 0.1;
  double lo = -3.141592653589793;
  double hi = 3.141592653589793;
  double drift = 0.0;
  double drift_slope = 0.0;
  double sigma = 1.0;
  std::optional<BumpSpec> bump;
  Branch branch = Branch::Full;
  CopyStart copy_start = CopyStart::TrapPoint;

  void validate() const;

  // Flat key/value form used by experiment configs.
  std::map<std::string, std::string> to_config() const;
  static ModelSpec from_config(const std::map<std::string, std::string>& kv);
};

struct Model {
  ModelSpec spec;
  CoefficientField field;
  std::vector<double> x0;
  std::optional<StopRule> stop;
  // The state is the reflection into [lo, hi] of the free solution.
  std::optional<std::pair<double, double>> fold;
  bool circle = false;
  std::size_t output_dim = 1;
  // Distance at which the origin counts as reached: twice the penalty support
  // half-width, since grid nodes almost never land inside the support itself.
  double contact_radius = 0.0;
};

Model build_model(const ModelSpec& spec);

// One sample path of the model, on the model's output coordinates.
SamplePath simulate(const Model& model, const TimeGrid& grid, SeedSpec seed);

ScalarFn drift_function(const ModelSpec& spec);
ScalarFn sigma_function(const ModelSpec& spec);

struct ReferencePair {
  SamplePath full;
  SamplePath stopped;
  HitResult hit;  // first zero of `full`, linear-interp refined
  std::optional<std::size_t> freeze_index;
};

// The two explicit global solutions xi + B_t and xi + B_{t ^ tau_0} of
// dX = 1_{X != 0} dB. Freezing happens at grid resolution: from the first node
// where xi + B reaches or crosses 0 the stopped path is exactly 0.
ReferencePair reference_solutions(double xi, const SamplePath& driver);

struct ShiftedVariant {
  bool exact = true;
  double eps = 0.0;
  static ShiftedVariant exact_solution() { return {true, 0.0}; }
  static ShiftedVariant approx(double eps) { return {false, eps}; }
};

struct ShiftedPair {
  SamplePath y1;
  SamplePath y2;
  std::optional<std::size_t> freeze_index;
  SamplePath sum() const;
};

// Shifted two-component system. The regime flag |y1| > 1 is fixed by the
// initial condition. The exact variant evaluates the closed form on the
// driver of channel 0; the approximate variant integrates the eps-family with
// drivers on channels 0 and 1.
ShiftedPair shifted_solve(double y1, double y2, const TimeGrid& grid, SeedSpec seed,
                          ShiftedVariant variant);

}  // namespace sdelab
