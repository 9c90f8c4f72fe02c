#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sdelab/models.hpp"
#include "sdelab/path.hpp"
#include "sdelab/scale.hpp"

namespace sdelab {

inline constexpr double kZ95 = 1.959963984540054;

struct EstimateCI {
  enum class Kind { ProportionWilson, MeanNormal };

  double value = 0.0;
  double half_width = 0.0;
  std::size_t n_samples = 0;
  Kind kind = Kind::MeanNormal;
  // Plain standard error (binomial or sample), used by the 3-stderr verdicts.
  double std_error = 0.0;
  // Interval endpoints; asymmetric around `value` for Wilson intervals.
  double low = 0.0;
  double high = 0.0;

  double lower() const { return low; }
  double upper() const { return high; }
};

// Wilson score interval at 95%; `value` is the raw ratio successes / n.
EstimateCI proportion_ci(std::size_t successes, std::size_t n);
// Sample mean with normal-approximation interval; sums in index order.
EstimateCI mean_ci(std::span<const double> samples);

struct KSResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n1 = 0;
  std::size_t n2 = 0;
};

// Asymptotic Kolmogorov survival function Q(lambda), series truncated at 100
// terms.
double kolmogorov_sf(double lambda);

KSResult ks_two_sample(std::span<const double> a, std::span<const double> b);

struct RunOptions {
  int threads = 1;
  bool bridge = true;
};

struct ExitEstimate {
  EstimateCI prob;  // exit at r among exited paths
  std::size_t exit_left = 0;
  std::size_t exit_right = 0;
  std::size_t censored = 0;
  bool censor_warning = false;  // more than half the paths never exited
  bool bridge = true;
};

// Monte Carlo P(exit (l, r) through r) for a one-dimensional diffusion model
// started at q.x. Paths run until they leave (l, r) or the grid ends; with
// the bridge option every elementary step is also tested for an unobserved
// crossing of either boundary.
ExitEstimate mc_exit_prob(const ModelSpec& spec, const ExitQuery& q, std::size_t n_paths,
                          const TimeGrid& grid, std::uint64_t master_seed, RunOptions opts = {});

// Mean over paths of sum_k dt 1(|X_k - center| <= eps), k = 0..n_steps-1.
EstimateCI occupation_fraction(const ModelSpec& spec, double eps, const TimeGrid& grid,
                               std::size_t n_paths, std::uint64_t master_seed,
                               RunOptions opts = {}, double center = 0.0);
// The same for several band widths, evaluated on one set of paths.
std::vector<EstimateCI> occupation_fractions(const ModelSpec& spec, std::span<const double> eps,
                                             const TimeGrid& grid, std::size_t n_paths,
                                             std::uint64_t master_seed, RunOptions opts = {},
                                             double center = 0.0);

// E int_0^T P(|x0 + B_t - center| <= eps) dt by quadrature.
double brownian_occupation_expectation(double eps, double horizon, double x0 = 0.0,
                                       double center = 0.0);

// A path producer that reads its noise from the standard channels of a seed.
struct CoupledSolver {
  std::string name;
  std::size_t n_drivers = 1;
  std::function<SamplePath(const TimeGrid&, SeedSpec)> run;
};

CoupledSolver model_solver(const ModelSpec& spec);
// xi + B on channel 0, full or stopped at its first zero.
CoupledSolver reference_solver(double xi, Branch branch);

// E[max_k |A_k - B_k|^2] on component 0 with A and B driven by the same
// seeds. Differing driver counts are an error unless `allow_extra_drivers`,
// in which case the extra channels act as independent noise for one side.
EstimateCI coupled_sup_distance(const CoupledSolver& a, const CoupledSolver& b,
                                const TimeGrid& grid, std::size_t n_paths,
                                std::uint64_t master_seed, RunOptions opts = {},
                                bool allow_extra_drivers = false);

struct ProbeResult {
  std::vector<double> left;   // post-hit displacements, approached from below
  std::vector<double> right;  // approached from above
  KSResult ks;
  EstimateCI crossing_fraction;
  std::size_t censored = 0;
  std::size_t ties = 0;
  bool inconclusive = false;  // fewer than 100 hits on one side
};

// Post-hit behaviour at a target. Paths start alternately at level + |x0| and
// level - |x0| (by stream id).
//
// One-dimensional models: the hit node is the first node within the model's
// contact radius of `level`, or past it. The approach side is the sign of the
// node before. The compared samples are X(hit + lag) - X(hit), and a crossing
// is X(hit + lag) - level having the sign opposite to the approach side.
//
// Circle process: the target is the point (-1, 0), the hit node is the first
// boundary contact of the angle, the side is the half-plane just before it,
// and both the samples and the crossing test use the vertical coordinate at
// hit + lag.
//
// Exact zeros in the crossing test are counted as ties and dropped.
ProbeResult strong_markov_probe(const ModelSpec& spec, double level, double lag,
                                std::size_t n_paths, const TimeGrid& grid,
                                std::uint64_t master_seed, RunOptions opts = {});

struct ModulusRow {
  double h = 0.0;
  double quantile = 0.0;
  std::size_t n_paths = 0;
};

// q-quantile over paths of max_{|t_i - t_j| < h} |X_i - X_j| on component 0.
std::vector<ModulusRow> modulus_of_continuity(const ModelSpec& spec, std::span<const double> hs,
                                              const TimeGrid& grid, std::size_t n_paths,
                                              double q, std::uint64_t master_seed,
                                              RunOptions opts = {});

// Largest |X_i - X_j| over node pairs at most max_lag apart.
double discrete_modulus(std::span<const double> x, std::size_t max_lag);

// Sample quantile, linear interpolation between order statistics (type 7).
double quantile(std::vector<double> values, double q);

}  // namespace sdelab
