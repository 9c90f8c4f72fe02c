#include "sdelab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "sdelab/parallel.hpp"
#include "sdelab/quadrature.hpp"
#include "sdelab/solvers.hpp"

namespace sdelab {

namespace {

int sign_of(double v) { return v < 0.0 ? -1 : 1; }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

void require_paths(std::size_t n_paths, const char* who) {
  if (n_paths == 0) throw std::invalid_argument(std::string(who) + ": n_paths must be >= 1");
}

Model one_dimensional_model(const ModelSpec& spec, const char* who) {
  Model m = build_model(spec);
  if (m.circle || m.output_dim != 1) {
    throw std::invalid_argument(std::string(who) + ": model '" + to_string(spec.tag) +
                                "' is not one-dimensional");
  }
  return m;
}

}  // namespace

EstimateCI proportion_ci(std::size_t successes, std::size_t n) {
  if (successes > n) throw std::invalid_argument("proportion_ci: successes exceed n");
  EstimateCI ci;
  ci.kind = EstimateCI::Kind::ProportionWilson;
  ci.n_samples = n;
  if (n == 0) return ci;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = kZ95 * kZ95;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = kZ95 * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  ci.value = p;
  ci.std_error = std::sqrt(p * (1.0 - p) / nn);
  // Report the Wilson interval around the raw ratio: the half width covers
  // whichever Wilson endpoint is further from p.
  ci.half_width = std::max(std::abs(center + half - p), std::abs(p - (center - half)));
  ci.low = successes == 0 ? 0.0 : std::max(0.0, center - half);
  ci.high = successes == n ? 1.0 : std::min(1.0, center + half);
  return ci;
}

EstimateCI mean_ci(std::span<const double> samples) {
  EstimateCI ci;
  ci.kind = EstimateCI::Kind::MeanNormal;
  ci.n_samples = samples.size();
  if (samples.empty()) return ci;
  double sum = 0.0;
  for (double v : samples) sum += v;
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double var = samples.size() > 1 ? ss / (n - 1.0) : 0.0;
  ci.value = mean;
  ci.std_error = std::sqrt(var / n);
  ci.half_width = kZ95 * ci.std_error;
  ci.low = mean - ci.half_width;
  ci.high = mean + ci.half_width;
  return ci;
}

double kolmogorov_sf(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 == 1 ? term : -term);
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KSResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n1 = static_cast<double>(x.size());
  const double n2 = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }
  KSResult r;
  r.statistic = d;
  r.n1 = x.size();
  r.n2 = y.size();
  r.p_value = kolmogorov_sf(std::sqrt(n1 * n2 / (n1 + n2)) * d);
  return r;
}

ExitEstimate mc_exit_prob(const ModelSpec& spec, const ExitQuery& q, std::size_t n_paths,
                          const TimeGrid& grid, std::uint64_t master_seed, RunOptions opts) {
  q.validate();
  require_paths(n_paths, "mc_exit_prob");
  if (spec.x0 != q.x) throw std::invalid_argument("mc_exit_prob: query x must equal the model x0");
  const Model model = one_dimensional_model(spec, "mc_exit_prob");
  if (model.stop || model.fold) {
    throw std::invalid_argument("mc_exit_prob: model must be a free diffusion (no stop, no fold)");
  }

  enum Outcome : unsigned char { kCensored, kLeft, kRight };
  std::vector<unsigned char> outcome(n_paths, kCensored);
  const bool bridge = opts.bridge;

  parallel_for(n_paths, opts.threads, [&](std::size_t i) {
    const SeedSpec seed{master_seed, i};
    EulerStepper stepper(model.field, seed);
    Stream crossing(seed, channel::kBridge);
    EulerStepper::State x{q.x, 0.0};
    double aux = 0.0;
    unsigned char result = kCensored;
    auto leaf = [&](double, double h, const EulerStepper::State& before,
                    const EulerStepper::State& after, double sigma) {
      const double a = before[0];
      const double b = after[0];
      if (b <= q.l) {
        result = kLeft;
        return true;
      }
      if (b >= q.r) {
        result = kRight;
        return true;
      }
      if (bridge && sigma > 0.0) {
        const double s2h = sigma * sigma * h;
        const double p_left = std::exp(-2.0 * (a - q.l) * (b - q.l) / s2h);
        if (p_left > 0.0 && crossing.uniform() < p_left) {
          result = kLeft;
          return true;
        }
        const double p_right = std::exp(-2.0 * (q.r - a) * (q.r - b) / s2h);
        if (p_right > 0.0 && crossing.uniform() < p_right) {
          result = kRight;
          return true;
        }
      }
      return false;
    };
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
      if (stepper.advance(grid.time(k), grid.dt(), k, x, aux, leaf)) break;
    }
    outcome[i] = result;
  });

  ExitEstimate est;
  est.bridge = bridge;
  for (unsigned char o : outcome) {
    if (o == kLeft) ++est.exit_left;
    else if (o == kRight) ++est.exit_right;
    else ++est.censored;
  }
  est.prob = proportion_ci(est.exit_right, est.exit_left + est.exit_right);
  est.censor_warning = 2 * est.censored > n_paths;
  return est;
}

std::vector<EstimateCI> occupation_fractions(const ModelSpec& spec, std::span<const double> eps,
                                             const TimeGrid& grid, std::size_t n_paths,
                                             std::uint64_t master_seed, RunOptions opts,
                                             double center) {
  for (double e : eps) {
    if (!(e > 0.0)) throw std::invalid_argument("occupation_fraction: eps must be > 0");
  }
  require_paths(n_paths, "occupation_fraction");
  const Model model = one_dimensional_model(spec, "occupation_fraction");
  std::vector<std::vector<double>> occupation(eps.size(), std::vector<double>(n_paths, 0.0));
  parallel_for(n_paths, opts.threads, [&](std::size_t i) {
    const SamplePath path = simulate(model, grid, SeedSpec{master_seed, i});
    for (std::size_t j = 0; j < eps.size(); ++j) {
      std::size_t count = 0;
      for (std::size_t k = 0; k < grid.n_steps(); ++k) {
        if (std::abs(path.at(k) - center) <= eps[j]) ++count;
      }
      occupation[j][i] = grid.dt() * static_cast<double>(count);
    }
  });
  std::vector<EstimateCI> out;
  for (const auto& o : occupation) out.push_back(mean_ci(o));
  return out;
}

EstimateCI occupation_fraction(const ModelSpec& spec, double eps, const TimeGrid& grid,
                               std::size_t n_paths, std::uint64_t master_seed, RunOptions opts,
                               double center) {
  const double one[1] = {eps};
  return occupation_fractions(spec, one, grid, n_paths, master_seed, opts, center).front();
}

double brownian_occupation_expectation(double eps, double horizon, double x0, double center) {
  if (!(eps > 0.0) || !(horizon > 0.0)) {
    throw std::invalid_argument("brownian_occupation_expectation: eps and horizon must be > 0");
  }
  const double hi = center + eps - x0;
  const double lo = center - eps - x0;
  auto in_band = [&](double t) {
    if (t <= 0.0) {
      if (lo < 0.0 && 0.0 < hi) return 1.0;
      return (lo == 0.0 || hi == 0.0) ? 0.5 : 0.0;
    }
    const double s = std::sqrt(t);
    return normal_cdf(hi / s) - normal_cdf(lo / s);
  };
  return adaptive_simpson(in_band, 0.0, horizon, 1e-10).value;
}

CoupledSolver model_solver(const ModelSpec& spec) {
  auto model = std::make_shared<const Model>(build_model(spec));
  CoupledSolver s;
  s.name = to_string(spec.tag);
  s.n_drivers = model->field.n_drivers;
  s.run = [model](const TimeGrid& grid, SeedSpec seed) { return simulate(*model, grid, seed); };
  return s;
}

CoupledSolver reference_solver(double xi, Branch branch) {
  CoupledSolver s;
  s.name = branch == Branch::Full ? "reference-full" : "reference-stopped";
  s.n_drivers = 1;
  s.run = [xi, branch](const TimeGrid& grid, SeedSpec seed) {
    Stream gen = derive_stream(seed, channel::kDriver0);
    const SamplePath driver = brownian_path(grid, gen);
    ReferencePair pair = reference_solutions(xi, driver);
    return branch == Branch::Full ? std::move(pair.full) : std::move(pair.stopped);
  };
  return s;
}

EstimateCI coupled_sup_distance(const CoupledSolver& a, const CoupledSolver& b,
                                const TimeGrid& grid, std::size_t n_paths,
                                std::uint64_t master_seed, RunOptions opts,
                                bool allow_extra_drivers) {
  require_paths(n_paths, "coupled_sup_distance");
  if (a.n_drivers != b.n_drivers && !allow_extra_drivers) {
    throw std::invalid_argument("coupled_sup_distance: driver count mismatch (" + a.name + ": " +
                                std::to_string(a.n_drivers) + ", " + b.name + ": " +
                                std::to_string(b.n_drivers) + ")");
  }
  std::vector<double> dist(n_paths, 0.0);
  parallel_for(n_paths, opts.threads, [&](std::size_t i) {
    const SeedSpec seed{master_seed, i};
    const SamplePath pa = a.run(grid, seed);
    const SamplePath pb = b.run(grid, seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      const double d = pa.at(k) - pb.at(k);
      worst = std::max(worst, d * d);
    }
    dist[i] = worst;
  });
  return mean_ci(dist);
}

namespace {

struct ProbeRecord {
  int side = 0;  // 0: no usable hit
  bool tie = false;
  double sample = 0.0;
  double relative = 0.0;  // position relative to the target at hit + lag
};

}  // namespace

ProbeResult strong_markov_probe(const ModelSpec& spec, double level, double lag,
                                std::size_t n_paths, const TimeGrid& grid,
                                std::uint64_t master_seed, RunOptions opts) {
  require_paths(n_paths, "strong_markov_probe");
  const auto m = static_cast<std::size_t>(std::llround(lag / grid.dt()));
  if (!(lag > 0.0) || m == 0) throw std::invalid_argument("strong_markov_probe: lag below one step");
  const double offset = std::abs(spec.x0);
  const std::size_t n = grid.n_steps();
  std::vector<ProbeRecord> records(n_paths);

  if (spec.tag == ModelTag::CircleProcess) {
    constexpr double pi = std::numbers::pi;
    if (!(offset > 0.0 && offset < pi)) {
      throw std::invalid_argument("strong_markov_probe: circle offset |x0| must lie in (0, pi)");
    }
    parallel_for(n_paths, opts.threads, [&](std::size_t i) {
      const double start = (i % 2 == 0 ? 1.0 : -1.0) * (pi - offset);
      const CirclePath c = reflected_circle(grid, start, SeedSpec{master_seed, i});
      ProbeRecord& r = records[i];
      if (c.events.empty() || c.events.front().node + m > n) return;
      const BoundaryEvent& e = c.events.front();
      const double v = c.path.at(e.node + m, 1);
      r.side = e.side;
      r.sample = v;
      r.relative = v;
      r.tie = v == 0.0;
    });
  } else {
    const Model base = one_dimensional_model(spec, "strong_markov_probe");
    if (base.fold) throw std::invalid_argument("strong_markov_probe: folded models are not supported");
    const double radius = base.contact_radius;
    if (!(offset > radius)) {
      throw std::invalid_argument("strong_markov_probe: |x0| must exceed the contact radius");
    }
    Model above = base;
    Model below = base;
    above.x0[0] = above.spec.x0 = level + offset;
    below.x0[0] = below.spec.x0 = level - offset;
    parallel_for(n_paths, opts.threads, [&](std::size_t i) {
      const Model& model = i % 2 == 0 ? above : below;
      const SamplePath path = simulate(model, grid, SeedSpec{master_seed, i});
      ProbeRecord& r = records[i];
      for (std::size_t k = 1; k <= n; ++k) {
        const double d = path.at(k) - level;
        const double prev = path.at(k - 1) - level;
        if (std::abs(d) <= radius || (d < 0.0) != (prev < 0.0)) {
          if (k + m > n) return;
          r.side = sign_of(prev);
          r.sample = path.at(k + m) - path.at(k);
          r.relative = path.at(k + m) - level;
          r.tie = r.relative == 0.0;
          return;
        }
      }
    });
  }

  ProbeResult out;
  std::size_t crossings = 0;
  std::size_t decided = 0;
  for (const ProbeRecord& r : records) {
    if (r.side == 0) {
      ++out.censored;
      continue;
    }
    (r.side < 0 ? out.left : out.right).push_back(r.sample);
    if (r.tie) {
      ++out.ties;
      continue;
    }
    ++decided;
    if (sign_of(r.relative) != r.side) ++crossings;
  }
  out.crossing_fraction = proportion_ci(crossings, decided);
  out.inconclusive = out.left.size() < 100 || out.right.size() < 100;
  if (!out.left.empty() && !out.right.empty()) out.ks = ks_two_sample(out.left, out.right);
  return out;
}

double discrete_modulus(std::span<const double> x, std::size_t max_lag) {
  if (x.size() < 2 || max_lag == 0) return 0.0;
  // Sliding window of max_lag + 1 nodes; the answer is the largest max - min.
  std::deque<std::size_t> hi;
  std::deque<std::size_t> lo;
  double best = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    while (!hi.empty() && x[hi.back()] <= x[j]) hi.pop_back();
    while (!lo.empty() && x[lo.back()] >= x[j]) lo.pop_back();
    hi.push_back(j);
    lo.push_back(j);
    while (hi.front() + max_lag < j) hi.pop_front();
    while (lo.front() + max_lag < j) lo.pop_front();
    best = std::max(best, x[hi.front()] - x[lo.front()]);
  }
  return best;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(i);
  return values[i] + frac * (values[i + 1] - values[i]);
}

std::vector<ModulusRow> modulus_of_continuity(const ModelSpec& spec, std::span<const double> hs,
                                              const TimeGrid& grid, std::size_t n_paths,
                                              double q, std::uint64_t master_seed,
                                              RunOptions opts) {
  require_paths(n_paths, "modulus_of_continuity");
  std::vector<std::size_t> lags;
  for (double h : hs) {
    if (!(h > 0.0 && h < grid.horizon())) {
      throw std::invalid_argument("modulus_of_continuity: h must lie in (0, T)");
    }
    // Pairs with |t_i - t_j| < h are at most ceil(h / dt) - 1 steps apart.
    const double steps = std::ceil(h / grid.dt() - 1e-9);
    lags.push_back(steps >= 1.0 ? static_cast<std::size_t>(steps) - 1 : 0);
  }
  const Model model = build_model(spec);
  std::vector<std::vector<double>> per_h(hs.size(), std::vector<double>(n_paths, 0.0));
  parallel_for(n_paths, opts.threads, [&](std::size_t i) {
    const SamplePath path = simulate(model, grid, SeedSpec{master_seed, i});
    const std::vector<double> x = path.component(0);
    for (std::size_t j = 0; j < lags.size(); ++j) per_h[j][i] = discrete_modulus(x, lags[j]);
  });
  std::vector<ModulusRow> rows;
  for (std::size_t j = 0; j < hs.size(); ++j) {
    rows.push_back({hs[j], quantile(per_h[j], q), n_paths});
  }
  return rows;
}

}  // namespace sdelab
