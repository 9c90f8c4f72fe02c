#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdelab/field.hpp"
#include "sdelab/path.hpp"
#include "sdelab/rng.hpp"

namespace sdelab {

class NonFiniteStateError : public std::runtime_error {
 public:
  NonFiniteStateError(std::size_t step, std::span<const double> state);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Explicit Euler-Maruyama stepping for a CoefficientField.
//
// Each grid step draws one N(0, dt) increment per driver from channel d of the
// path's seed, so the coarse increments never depend on refinement. When the
// field declares a stiff zone, steps longer than the zone's max_step are
// refined with draws from the refinement channel:
//   - a step that starts in the zone, ends in it, or jumps over it is split at
//     the Brownian-bridge midpoint of its increment, recursively;
//   - a step with both ends on one side is tested for touching the zone with
//     the bridge probability exp(-2 d0 d1 / (sigma^2 h)). If it touches, the
//     first touch time is drawn exactly (tau / (h - tau) is inverse Gaussian
//     with mean d0 / d1 and shape d0^2 / (sigma^2 h)), the step is cut there and
//     the remainder continues from the zone edge.
// Every elementary step is reported to a leaf callback, which may end the
// advance.
class EulerStepper {
 public:
  using State = std::array<double, kMaxDim>;

  EulerStepper(const CoefficientField& field, SeedSpec seed);

  const CoefficientField& field() const { return *field_; }

  // Magnitude of the first row of the diffusion matrix at (t, x, aux).
  double local_sigma(double t, std::span<const double> x, double aux) const;

  // Advance over one grid step [t, t + dt]. `step_index` is only used for
  // diagnostics. The leaf is called as
  //   bool leaf(double t0, double h, const State& before, const State& after,
  //             double sigma_before)
  // and returning true stops the advance at that elementary step.
  template <class Leaf>
  bool advance(double t, double dt, std::size_t step_index, State& x, double& aux, Leaf&& leaf);

  bool advance(double t, double dt, std::size_t step_index, State& x, double& aux) {
    return advance(t, dt, step_index, x, aux,
                   [](double, double, const State&, const State&, double) { return false; });
  }

 private:
  using Noise = std::array<double, kMaxDrivers>;

  template <class Leaf>
  bool step_interval(double t, double h, const Noise& w, std::size_t step_index, State& x,
                     double& aux, int depth, Leaf& leaf);

  enum class ZoneAction { Accept, Split, Touch };
  // For Touch, `edge` receives the zone edge on the side of the step.
  ZoneAction zone_action(double x, double x_next, double sigma, double h, double& edge);
  // tau in [0, h]: first time a bridge from distance d0 to d1 touches a level.
  double touch_time(double d0, double d1, double sigma, double h);

  const CoefficientField* field_;
  std::array<Stream, kMaxDrivers> drivers_;
  Stream refine_;
};

// Reflection of y into [a, b] by unfolding: with L = b - a and
// m = (y - a) mod 2L, returns a + m if m <= L and a + 2L - m otherwise.
double fold_reflect(double y, double a, double b);

enum class HitMethod { Grid, LinearInterp, Bridge };

struct HitResult {
  bool hit = false;  // false means censored within the horizon
  double tau = 0.0;
  std::size_t grid_index = 0;
  int approach_side = 1;
  HitMethod method = HitMethod::Grid;
};

// First passage of a one-dimensional path through `level`.
//
// Scans for the first sign change of (state - level) or an exact equality and
// refines tau by linear interpolation. With `bridge`, each earlier step whose
// endpoints lie on the same side is tested for an unobserved crossing with the
// Brownian-bridge probability exp(-2 d_k d_{k+1} / (sigma_k^2 dt)), using the
// path's left-node sigma and one uniform from `gen` per tested step.
HitResult first_hit(const SamplePath& path, double level, bool bridge, Stream& gen);

SamplePath euler_maruyama(const CoefficientField& field, std::span<const double> x0,
                          const TimeGrid& grid, SeedSpec seed);
SamplePath euler_maruyama(const CoefficientField& field, double x0, const TimeGrid& grid,
                          SeedSpec seed);

// Freeze rule for solve_stopped. Level and Combination fire at the first node
// where weights . x equals `level` or has changed sign relative to it since the
// previous node; the component `adjust` is then reset so that the combination
// equals `level` exactly. With `armed_by_aux`, they only fire once the aux
// channel has reached `aux_threshold` at the left node. AuxThreshold fires at
// the first node where aux >= aux_threshold.
struct StopRule {
  enum class Kind { Level, Combination, AuxThreshold };

  Kind kind = Kind::Level;
  double level = 0.0;
  std::array<double, kMaxDim> weights{1.0, 0.0};
  std::size_t adjust = 0;
  double aux_threshold = 1.0;
  bool armed_by_aux = false;

  static StopRule level_hit(double level);
  static StopRule combination_hit(std::array<double, kMaxDim> weights, double level,
                                  std::size_t adjust);
  static StopRule aux_reaches(double threshold);
};

struct StoppedSolution {
  SamplePath path;
  std::optional<std::size_t> stop_index;
};

// Euler-Maruyama up to the node where `stop` fires, frozen from there on.
// Nodes before the stop index are bit-identical to euler_maruyama with the
// same seed.
StoppedSolution solve_stopped(const CoefficientField& field, std::span<const double> x0,
                              const TimeGrid& grid, SeedSpec seed, const StopRule& stop);

// Where the fresh copies of the trapped angle process start.
enum class CopyStart {
  TrapPoint,  // angle pi: the same point (-1, 0) the trapped copy reached
  Origin,     // angle 0, the literal "copies of Y^{+,0}" reading
};

struct BoundaryEvent {
  std::size_t node;  // first node after the boundary contact
  int side;          // +1 contact from the upper half-plane, -1 from the lower
  bool restart;      // a fresh copy was concatenated at this node
};

struct CirclePath {
  SamplePath path;  // (cos angle, sin angle)
  std::vector<double> angle;
  std::vector<BoundaryEvent> events;
};

// Angle process reflected at pi and trapped at -pi; at each trap a fresh
// independent copy is concatenated. The output passes through (-1, 0) from
// the lower to the upper half-plane and is reflected from above.
CirclePath passthrough_circle(const TimeGrid& grid, double x0, SeedSpec seed,
                              CopyStart start = CopyStart::TrapPoint);

// Brownian motion on [-pi, pi] reflected at both ends, mapped to the circle.
CirclePath reflected_circle(const TimeGrid& grid, double x0, SeedSpec seed);

// ---------------------------------------------------------------------------

template <class Leaf>
bool EulerStepper::advance(double t, double dt, std::size_t step_index, State& x, double& aux,
                           Leaf&& leaf) {
  Noise w{};
  const double scale = std::sqrt(dt);
  for (std::size_t d = 0; d < field_->n_drivers; ++d) w[d] = scale * drivers_[d].normal();
  return step_interval(t, dt, w, step_index, x, aux, 0, leaf);
}

template <class Leaf>
bool EulerStepper::step_interval(double t, double h, const Noise& w, std::size_t step_index,
                                 State& x, double& aux, int depth, Leaf& leaf) {
  const CoefficientField& f = *field_;
  const std::size_t dim = f.dim;
  const std::size_t nd = f.n_drivers;
  const std::span<const double> xs(x.data(), dim);

  std::array<double, kMaxDim> b{};
  std::array<double, kMaxDim * kMaxDrivers> load{};
  f.drift(t, xs, aux, std::span<double>(b.data(), dim));
  f.diffusion(t, xs, aux, std::span<double>(load.data(), dim * nd));

  State next = x;
  for (std::size_t i = 0; i < dim; ++i) {
    double noise = 0.0;
    for (std::size_t d = 0; d < nd; ++d) noise += load[i * nd + d] * w[d];
    next[i] = x[i] + b[i] * h + noise;
  }
  double sigma2 = 0.0;
  for (std::size_t d = 0; d < nd; ++d) sigma2 += load[d] * load[d];
  const double sigma = std::sqrt(sigma2);

  ZoneAction action = ZoneAction::Accept;
  double edge = 0.0;
  if (f.stiff_zone && depth < 48 && h > f.stiff_zone->max_step) {
    action = zone_action(x[0], next[0], sigma, h, edge);
  }
  double tau = 0.0;
  if (action == ZoneAction::Touch) {
    tau = touch_time(std::abs(edge - x[0]), std::abs(edge - next[0]), sigma, h);
    if (!(tau > 0.0 && tau < h)) action = ZoneAction::Split;
  }
  if (action == ZoneAction::Touch) {
    // Stiff zones carry a single driver, so the path reaches `edge` at tau
    // exactly when the driver has moved by (edge - x - b tau) / L there.
    const double w_tau = (edge - x[0] - b[0] * tau) / load[0];
    if (f.aux_rate) aux += f.aux_rate(t, xs) * tau;
    const State before = x;
    x[0] = edge;
    if (leaf(t, tau, before, x, sigma)) return true;
    const Noise rest{w[0] - w_tau, 0.0};
    return step_interval(t + tau, h - tau, rest, step_index, x, aux, depth + 1, leaf);
  }
  if (action == ZoneAction::Split) {
    Noise first{};
    Noise second{};
    const double half_sd = 0.5 * std::sqrt(h);
    for (std::size_t d = 0; d < nd; ++d) {
      first[d] = 0.5 * w[d] + half_sd * refine_.normal();
      second[d] = w[d] - first[d];
    }
    if (step_interval(t, 0.5 * h, first, step_index, x, aux, depth + 1, leaf)) return true;
    return step_interval(t + 0.5 * h, 0.5 * h, second, step_index, x, aux, depth + 1, leaf);
  }

  for (std::size_t i = 0; i < dim; ++i) {
    if (!std::isfinite(next[i])) throw NonFiniteStateError(step_index, {next.data(), dim});
  }
  if (f.aux_rate) aux += f.aux_rate(t, xs) * h;
  const State before = x;
  x = next;
  return leaf(t, h, before, x, sigma);
}

}  // namespace sdelab
