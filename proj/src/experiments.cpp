#include "sdelab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <fstream>
#include <iostream>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdelab/models.hpp"
#include "sdelab/parallel.hpp"
#include "sdelab/scale.hpp"
#include "sdelab/solvers.hpp"
#include "sdelab/stats.hpp"

namespace sdelab {

namespace {

const std::vector<std::string> kCommonKeys = {"experiment", "seed",   "paths",  "steps",
                                              "horizon",    "out",    "format", "threads"};
const std::vector<std::string> kModelKeys = {"model", "x0",      "y2",          "eps",   "lo",
                                             "hi",    "drift",   "drift_slope", "sigma", "penalty",
                                             "n",     "branch",  "copy_start"};

std::vector<std::string> with_model_keys(std::vector<std::string> keys) {
  keys.insert(keys.end(), kModelKeys.begin(), kModelKeys.end());
  return keys;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join(const std::vector<double>& values) {
  std::string s;
  for (double v : values) s += (s.empty() ? "" : " ") + format_number(v);
  return s;
}

const char* verdict(bool ok) { return ok ? "pass" : "fail"; }

double parse_number(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
  if (used != text.size() || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  }
  return v;
}

// Typed access to the config keys of one experiment. Every value read, default
// or not, is echoed into the result's parameter block.
class Params {
 public:
  Params(const ExperimentConfig& cfg, ExperimentResult& result) : cfg_(cfg), echo_(result.params) {}

  double num(const std::string& key, double def) {
    const std::string* raw = scalar(key);
    const double v = raw ? parse_number(key, *raw) : def;
    echo_[key] = format_number(v);
    return v;
  }

  double positive(const std::string& key, double def) {
    const double v = num(key, def);
    if (!(v > 0.0)) throw ConfigError(key, "must be > 0");
    return v;
  }

  std::size_t count(const std::string& key, std::size_t def) {
    const std::string* raw = scalar(key);
    std::size_t v = def;
    if (raw) {
      const double d = parse_number(key, *raw);
      if (d < 1.0 || d != std::floor(d) || d > 1e12) throw ConfigError(key, "must be an integer >= 1");
      v = static_cast<std::size_t>(d);
    }
    echo_[key] = std::to_string(v);
    return v;
  }

  bool flag(const std::string& key, bool def) {
    const std::string* raw = scalar(key);
    bool v = def;
    if (raw) {
      if (*raw == "true" || *raw == "1") v = true;
      else if (*raw == "false" || *raw == "0") v = false;
      else throw ConfigError(key, "expected true or false, got '" + *raw + "'");
    }
    echo_[key] = v ? "true" : "false";
    return v;
  }

  std::vector<double> list(const std::string& key, std::vector<double> def) {
    auto it = cfg_.params.find(key);
    std::vector<double> v = std::move(def);
    if (it != cfg_.params.end()) {
      v.clear();
      for (const std::string& s : it->second) v.push_back(parse_number(key, s));
      if (v.empty()) throw ConfigError(key, "list must not be empty");
    }
    echo_[key] = join(v);
    return v;
  }

  std::vector<double> positive_list(const std::string& key, std::vector<double> def) {
    std::vector<double> v = list(key, std::move(def));
    for (double x : v) {
      if (!(x > 0.0)) throw ConfigError(key, "entries must be > 0");
    }
    return v;
  }

  std::vector<int> int_list(const std::string& key, std::vector<int> def) {
    std::vector<double> d(def.begin(), def.end());
    std::vector<int> out;
    for (double x : list(key, d)) {
      if (x < 1.0 || x != std::floor(x) || x > 1e6) throw ConfigError(key, "entries must be integers >= 1");
      out.push_back(static_cast<int>(x));
    }
    return out;
  }

  // Model keys in the config override `defaults`.
  ModelSpec model(const ModelSpec& defaults) {
    std::map<std::string, std::string> kv = defaults.to_config();
    if (defaults.tag == ModelTag::PenalizedSDE && !defaults.bump) kv["penalty"] = "none";
    for (const std::string& key : kModelKeys) {
      if (const std::string* raw = scalar(key)) kv[key] = *raw;
    }
    ModelSpec spec;
    try {
      spec = ModelSpec::from_config(kv);
    } catch (const ModelError& e) {
      throw ConfigError(e.field(), std::string(e.what()).substr(e.field().size() + 2));
    }
    for (const auto& [k, v] : spec.to_config()) echo_[k] = v;
    return spec;
  }

 private:
  const std::string* scalar(const std::string& key) const {
    auto it = cfg_.params.find(key);
    if (it == cfg_.params.end()) return nullptr;
    if (it->second.size() != 1) throw ConfigError(key, "expected a single value");
    return &it->second.front();
  }

  const ExperimentConfig& cfg_;
  std::map<std::string, std::string>& echo_;
};

struct Context {
  const ExperimentConfig& cfg;
  const CatalogEntry& entry;
  Params& params;
  ExperimentResult& result;
  std::size_t paths;
  TimeGrid grid;
  RunOptions opts;
};

ModelSpec penalized(double drift, double slope, double sigma, int n) {
  ModelSpec s;
  s.tag = ModelTag::PenalizedSDE;
  s.drift = drift;
  s.drift_slope = slope;
  s.sigma = sigma;
  if (n > 0) s.bump = BumpSpec::canonical(n);
  return s;
}

bool is_plain_brownian(const ModelSpec& s) {
  return s.tag == ModelTag::PenalizedSDE && !s.bump && s.drift == 0.0 && s.drift_slope == 0.0;
}

double oracle_for(const ModelSpec& s, const ExitQuery& q) {
  return exit_prob_oracle(q, drift_function(s), sigma_function(s), s.bump);
}

std::int64_t as_int(std::size_t v) { return static_cast<std::int64_t>(v); }

// ---------------------------------------------------------------------------

void exit_closed_form(Context& c) {
  const double tol = c.params.positive("tolerance", 1e-6);
  c.result.table.columns = {"drift", "sigma", "l", "x", "r", "oracle", "closed_form", "abs_diff",
                            "tolerance", "verdict"};
  for (double b : {0.0, 1.0, -1.0}) {
    for (double sigma : {1.0, 2.0}) {
      for (double x : {-0.5, 0.0, 0.5}) {
        const ExitQuery q{-1.0, x, 1.0};
        const double oracle = exit_prob_oracle(
            q, [b](double) { return b; }, [sigma](double) { return sigma; }, std::nullopt);
        const double exact = exit_prob_constant(b, sigma, q);
        const double diff = std::abs(oracle - exact);
        c.result.table.add_row({b, sigma, q.l, q.x, q.r, oracle, exact, diff, tol,
                                std::string(verdict(diff <= tol))});
      }
    }
  }
}

struct MatrixCase {
  std::string name;
  ModelSpec spec;
  ExitQuery query;
};

std::vector<MatrixCase> exit_matrix_cases() {
  return {
      {"bm", penalized(0, 0, 1, 0), {-1, 0, 1}},
      {"drift+1", penalized(1, 0, 1, 0), {-1, 0, 1}},
      {"drift-1", penalized(-1, 0, 1, 0), {-1, 0.5, 1}},
      {"sigma2", penalized(0, 0, 2, 0), {-1, -0.5, 1}},
      {"drift+1-sigma2", penalized(1, 0, 2, 0), {-1, 0.5, 1}},
      {"drift-1-wide", penalized(-1, 0, 1, 0), {-2, 0, 1}},
      {"ou", penalized(0, -1, 1, 0), {-1, 0.3, 1}},
      {"bump4-left", penalized(0, 0, 1, 4), {-1, -0.3, 1}},
      {"bump4-inside", penalized(0, 0, 1, 4), {-1, 0.1, 1}},
      {"bump16-left", penalized(0, 0, 1, 16), {-1, -0.3, 1}},
      {"bump16-inside", penalized(0, 0, 1, 16), {-0.5, 0.02, 0.5}},
      {"bump64-left", penalized(0, 0, 1, 64), {-1, -0.3, 1}},
  };
}

const std::vector<std::string> kExitColumns = {
    "case", "drift", "drift_slope", "sigma", "penalty_n", "l", "x", "r", "mc", "std_error",
    "ci_low", "ci_high", "exited", "censored", "oracle", "abs_diff", "tolerance", "bridge", "verdict"};

std::vector<Cell> exit_row(Context& c, const std::string& name, ModelSpec spec,
                           const ExitQuery& q, double& oracle) {
  spec.x0 = q.x;
  const ExitEstimate e = mc_exit_prob(spec, q, c.paths, c.grid, c.cfg.seed, c.opts);
  oracle = oracle_for(spec, q);
  const double diff = std::abs(e.prob.value - oracle);
  const double tol = 3.0 * (e.prob.std_error + 1e-4);
  const bool ok = diff < tol && !e.censor_warning;
  return {name, spec.drift, spec.drift_slope, spec.sigma,
          spec.bump ? std::int64_t{spec.bump->n()} : std::int64_t{0}, q.l, q.x, q.r,
          e.prob.value, e.prob.std_error, e.prob.lower(), e.prob.upper(),
          as_int(e.exit_left + e.exit_right), as_int(e.censored), oracle, diff, tol,
          std::string(e.bridge ? "on" : "off"), std::string(verdict(ok))};
}

void exit_matrix(Context& c) {
  c.result.table.columns = kExitColumns;
  double oracle = 0.0;
  for (const MatrixCase& m : exit_matrix_cases()) {
    c.result.table.add_row(exit_row(c, m.name, m.spec, m.query, oracle));
  }
}

void exit_penalized(Context& c) {
  ModelSpec base = c.params.model(penalized(0, 0, 1, 0));
  if (base.tag != ModelTag::PenalizedSDE) throw ConfigError("model", "must be penalized");
  const double l = c.params.num("l", -1.0);
  const double r = c.params.num("r", 1.0);
  ExitQuery q{l, base.x0 == 0.0 && !c.cfg.params.count("x0") ? -0.3 : base.x0, r};
  c.result.params["x0"] = format_number(q.x);
  try {
    q.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("x0", e.what());
  }
  const std::vector<int> ns = c.params.int_list("n_list", {1, 2, 4, 8, 16, 32, 64});
  const auto shape = base.bump ? base.bump->shape() : BumpSpec::Shape::Quartic;
  c.result.table.columns = kExitColumns;
  c.result.table.columns.insert(c.result.table.columns.end() - 1, "oracle_decreasing");
  double prev = std::numeric_limits<double>::infinity();
  for (int n : ns) {
    ModelSpec spec = base;
    spec.bump = BumpSpec(shape, n);
    double oracle = 0.0;
    std::vector<Cell> row = exit_row(c, "n=" + std::to_string(n), spec, q, oracle);
    const bool decreasing = oracle < prev;
    prev = oracle;
    row.insert(row.end() - 1, std::string(decreasing ? "yes" : "no"));
    if (!decreasing) row.back() = std::string("fail");
    c.result.table.add_row(std::move(row));
  }
}

void penalty_limit(Context& c) {
  ModelSpec base = c.params.model(penalized(0, 0, 1, 0));
  if (base.tag != ModelTag::PenalizedSDE) throw ConfigError("model", "must be penalized");
  const double l = c.params.num("l", -1.0);
  const double r = c.params.num("r", 1.0);
  const double x = c.params.num("x", -0.3);
  const double threshold = c.params.positive("threshold", 1e-2);
  const double bound64 = c.params.positive("bound", 0.05);
  const ExitQuery q{l, x, r};
  try {
    q.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("x", e.what());
  }
  const auto shape = base.bump ? base.bump->shape() : BumpSpec::Shape::Quartic;
  c.result.table.columns = {"n", "oracle", "decreasing", "below_threshold", "verdict"};
  double prev = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int n = 1; n <= 1024; n *= 2) {
    ModelSpec spec = base;
    spec.bump = BumpSpec(shape, n);
    const double p = oracle_for(spec, q);
    const bool finite = std::isfinite(p);
    // Strict decrease is required while the value is representable.
    const bool decreasing = finite && (p < prev || (p == 0.0 && prev == 0.0));
    const bool below = p < threshold;
    bool ok = decreasing;
    if (n == 64) ok = ok && p < bound64;
    c.result.table.add_row({std::int64_t{n}, p, std::string(decreasing ? "yes" : "no"),
                            std::string(below ? "yes" : "no"), std::string(verdict(ok))});
    if (below && !found) {
      found = true;
      c.result.params["threshold_n"] = std::to_string(n);
    }
    prev = p;
  }
  if (!found) c.result.params["threshold_n"] = "none";
}

void occupation(Context& c) {
  const ModelSpec spec = c.params.model([] {
    ModelSpec s = penalized(0, 0, 1, 64);
    s.x0 = -0.3;
    return s;
  }());
  const std::vector<double> eps = c.params.positive_list("eps_list", {0.2, 0.1, 0.05, 0.025});
  const double center = c.params.num("center", 0.0);
  for (std::size_t i = 1; i < eps.size(); ++i) {
    if (!(eps[i] < eps[i - 1])) throw ConfigError("eps_list", "must be strictly decreasing");
  }
  const std::vector<EstimateCI> est =
      occupation_fractions(spec, eps, c.grid, c.paths, c.cfg.seed, c.opts, center);
  const bool oracle = is_plain_brownian(spec);
  c.result.table.columns = {"eps", "occupation", "std_error", "ci_low", "ci_high", "paths",
                            "oracle", "abs_diff", "decreasing", "verdict"};
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const EstimateCI& e = est[i];
    Cell ref;
    Cell diff;
    bool ok = true;
    if (oracle) {
      const double s = spec.sigma;
      const double o = brownian_occupation_expectation(eps[i] / s, c.grid.horizon(), spec.x0 / s,
                                                       center / s);
      ref = o;
      diff = std::abs(e.value - o);
      ok = std::abs(e.value - o) <= 3.0 * e.std_error;
    }
    const bool decreasing = i == 0 || e.value < est[i - 1].value;
    ok = ok && decreasing;
    if (spec.bump && i + 1 == eps.size()) ok = ok && e.value < 0.05 * c.grid.horizon();
    c.result.table.add_row({eps[i], e.value, e.std_error, e.lower(), e.upper(), as_int(e.n_samples),
                            ref, diff, std::string(decreasing ? "yes" : "no"),
                            std::string(verdict(ok))});
  }
}

void branching(Context& c) {
  const double xi = c.params.num("xi", 1.0);
  struct PathOutcome {
    bool prehit_agree = true;
    bool differ = false;
  };
  std::vector<PathOutcome> out(c.paths);
  parallel_for(c.paths, c.opts.threads, [&](std::size_t i) {
    Stream gen = derive_stream(SeedSpec{c.cfg.seed, i});
    const SamplePath driver = brownian_path(c.grid, gen);
    const ReferencePair ref = reference_solutions(xi, driver);
    const std::size_t stop = ref.freeze_index.value_or(c.grid.n_nodes());
    for (std::size_t k = 0; k < stop; ++k) {
      if (ref.full.at(k) != ref.stopped.at(k)) out[i].prehit_agree = false;
    }
    const std::size_t last = c.grid.n_steps();
    out[i].differ = ref.full.at(last) != ref.stopped.at(last);
  });
  std::size_t mismatched = 0;
  std::size_t differ = 0;
  for (const PathOutcome& o : out) {
    if (!o.prehit_agree) ++mismatched;
    if (o.differ) ++differ;
  }
  const EstimateCI frac = proportion_ci(differ, c.paths);
  const double expected = 2.0 * 0.5 * std::erfc(std::abs(xi) / std::sqrt(c.grid.horizon()) /
                                                std::numbers::sqrt2);
  const double diff = std::abs(frac.value - expected);
  const double tol = 3.0 * std::sqrt(expected * (1.0 - expected) / static_cast<double>(c.paths));
  const bool ok = mismatched == 0 && diff <= tol;
  c.result.table.columns = {"xi", "paths", "prehit_mismatch_paths", "differ_paths", "differ_fraction",
                            "std_error", "expected", "abs_diff", "tolerance", "verdict"};
  c.result.table.add_row({xi, as_int(c.paths), as_int(mismatched), as_int(differ), frac.value,
                          frac.std_error, expected, diff, tol, std::string(verdict(ok))});
}

void convergence_ladder(Context& c) {
  const double xi = c.params.num("xi", 1.0);
  const std::vector<double> capped = c.params.positive_list("eps_list", {0.4, 0.2, 0.1, 0.05});
  const std::vector<double> noise = c.params.positive_list("noise_eps_list", {0.1, 0.05});
  c.result.table.columns = {"family", "eps",   "distance", "std_error", "ci_low",
                            "ci_high", "paths", "ratio",    "check",     "verdict"};
  const CoupledSolver stopped = reference_solver(xi, Branch::Stopped);
  const CoupledSolver full = reference_solver(xi, Branch::Full);

  std::vector<EstimateCI> prev;
  for (double eps : capped) {
    ModelSpec s;
    s.tag = ModelTag::SqrtCappedApprox;
    s.x0 = xi;
    s.eps = eps;
    const EstimateCI d =
        coupled_sup_distance(model_solver(s), stopped, c.grid, c.paths, c.cfg.seed, c.opts);
    // Non-increasing as eps shrinks, up to the two interval half widths.
    const bool ok = prev.empty() || d.value <= prev.back().value + prev.back().half_width + d.half_width;
    c.result.table.add_row({std::string("sqrt-capped"), eps, d.value, d.std_error, d.lower(),
                            d.upper(), as_int(d.n_samples), Cell{},
                            std::string(prev.empty() ? "first" : "non-increasing"),
                            std::string(verdict(ok))});
    prev.push_back(d);
  }

  prev.clear();
  std::vector<double> eps_seen;
  for (double eps : noise) {
    ModelSpec s;
    s.tag = ModelTag::NoisePerturbApprox;
    s.x0 = xi;
    s.eps = eps;
    const EstimateCI d = coupled_sup_distance(model_solver(s), full, c.grid, c.paths, c.cfg.seed,
                                              c.opts, /*allow_extra_drivers=*/true);
    Cell ratio;
    std::string check = "first";
    bool ok = true;
    if (!prev.empty()) {
      // The coupled distance is exactly eps^2 E sup |B~|^2, so consecutive
      // estimates scale by the squared eps ratio.
      const EstimateCI& p = prev.back();
      const double r = p.value / d.value;
      const double expected = (eps_seen.back() / eps) * (eps_seen.back() / eps);
      const double se = r * std::hypot(p.std_error / p.value, d.std_error / d.value);
      ratio = r;
      check = "ratio=" + format_number(expected);
      ok = std::abs(r - expected) <= 3.0 * se + 1e-9 * expected;
    }
    c.result.table.add_row({std::string("noise-perturbed"), eps, d.value, d.std_error, d.lower(),
                            d.upper(), as_int(d.n_samples), ratio, check, std::string(verdict(ok))});
    prev.push_back(d);
    eps_seen.push_back(eps);
  }
}

void strong_markov(Context& c) {
  const ModelSpec spec = c.params.model([] {
    ModelSpec s = penalized(0, 0, 1, 64);
    s.x0 = 0.3;
    return s;
  }());
  const double level = c.params.num("level", 0.0);
  const double lag = c.params.positive("lag", 0.1);
  const std::size_t runs = c.params.count("runs", 1);
  const double alpha = c.params.positive("alpha", 0.05);

  enum class Mode { NonCrossing, SideAgreement, Calibration };
  Mode mode = Mode::Calibration;
  if (spec.tag == ModelTag::CircleProcess) mode = Mode::SideAgreement;
  else if (spec.tag == ModelTag::PenalizedSDE && spec.bump) mode = Mode::NonCrossing;
  const char* mode_name[] = {"non-crossing", "side-agreement", "calibration"};
  c.result.params["mode"] = mode_name[static_cast<int>(mode)];

  c.result.table.columns = {"scope", "run",        "hits_below",   "hits_above",     "ties",
                            "censored", "ks_d",    "ks_p",         "crossing",       "crossing_se",
                            "rejection_rate", "pvalue_uniformity_p", "verdict"};
  std::size_t rejections = 0;
  std::vector<double> pvalues;
  bool all_ok = true;
  for (std::size_t run = 0; run < runs; ++run) {
    const std::uint64_t seed = runs == 1 ? c.cfg.seed : splitmix64(c.cfg.seed ^ splitmix64(run + 1));
    const ProbeResult p = strong_markov_probe(spec, level, lag, c.paths, c.grid, seed, c.opts);
    const bool reject = p.ks.p_value < alpha;
    pvalues.push_back(p.ks.p_value);
    if (reject) ++rejections;
    bool ok = !p.inconclusive;
    if (mode == Mode::NonCrossing) ok = ok && p.crossing_fraction.value < 0.02 && p.ks.p_value < 1e-6;
    if (mode == Mode::SideAgreement) ok = ok && 1.0 - p.crossing_fraction.value > 0.98;
    all_ok = all_ok && ok;
    c.result.table.add_row({std::string("run"), as_int(run), as_int(p.left.size()),
                            as_int(p.right.size()), as_int(p.ties), as_int(p.censored),
                            p.ks.statistic, p.ks.p_value, p.crossing_fraction.value,
                            p.crossing_fraction.std_error, Cell{}, Cell{},
                            std::string(p.inconclusive ? "inconclusive" : verdict(ok))});
  }
  const double rate = static_cast<double>(rejections) / static_cast<double>(runs);
  bool summary_ok = all_ok;
  // Under the strong Markov property the rejection rate is alpha; accept
  // anything within alpha of it.
  Cell uniformity;
  if (mode == Mode::Calibration) {
    summary_ok = all_ok && std::abs(rate - alpha) <= alpha;
    if (runs >= 20) {
      // One-sample KS of the run p-values against U(0, 1), judged at 1%.
      std::sort(pvalues.begin(), pvalues.end());
      const double m = static_cast<double>(pvalues.size());
      double d = 0.0;
      for (std::size_t i = 0; i < pvalues.size(); ++i) {
        d = std::max({d, (static_cast<double>(i) + 1.0) / m - pvalues[i],
                      pvalues[i] - static_cast<double>(i) / m});
      }
      const double pu = kolmogorov_sf(std::sqrt(m) * d);
      uniformity = pu;
      summary_ok = summary_ok && pu >= 0.01;
    }
  }
  c.result.table.add_row({std::string("summary"), as_int(runs), Cell{}, Cell{}, Cell{}, Cell{},
                          Cell{}, Cell{}, Cell{}, Cell{}, rate, uniformity,
                          std::string(verdict(summary_ok))});
}

void shifted_decomposition(Context& c) {
  const double x = c.params.num("x", 1.0);
  const double split = c.params.num("split", 2.0);
  if (!(std::abs(split) > 1.0)) throw ConfigError("split", "must satisfy |split| > 1");
  const double qv_factor = c.params.positive("qv_factor", 0.5);
  const double min_fraction = c.params.positive("min_fraction", 0.99);
  struct Decomposition {
    double y1;
    double y2;
  };
  const std::vector<Decomposition> decs = {{0.0, x}, {split, x - split}};
  struct PathOutcome {
    bool hit = false;
    std::array<double, 2> post_qv{};
    double remaining = 0.0;
    double prehit_gap = 0.0;
  };
  std::vector<PathOutcome> out(c.paths);
  const TimeGrid& grid = c.grid;
  parallel_for(c.paths, c.opts.threads, [&](std::size_t i) {
    const SeedSpec seed{c.cfg.seed, i};
    std::array<SamplePath, 2> sums{SamplePath(grid, 1), SamplePath(grid, 1)};
    for (std::size_t d = 0; d < 2; ++d) {
      sums[d] = shifted_solve(decs[d].y1, decs[d].y2, grid, seed, ShiftedVariant::exact_solution()).sum();
    }
    // Hitting time of the sum, read off the unstopped decomposition.
    std::optional<std::size_t> hit;
    for (std::size_t k = 0; k + 1 < grid.n_nodes() && !hit; ++k) {
      const double a = sums[0].at(k);
      const double b = sums[0].at(k + 1);
      if (a == 0.0) hit = k;
      else if (b == 0.0 || (a < 0.0) != (b < 0.0)) hit = k + 1;
    }
    if (!hit) return;
    PathOutcome& o = out[i];
    o.hit = true;
    o.remaining = grid.t_end() - grid.time(*hit);
    for (std::size_t d = 0; d < 2; ++d) {
      double qv = 0.0;
      for (std::size_t k = *hit; k + 1 < grid.n_nodes(); ++k) {
        const double inc = sums[d].at(k + 1) - sums[d].at(k);
        qv += inc * inc;
      }
      o.post_qv[d] = qv;
    }
    for (std::size_t k = 0; k < *hit; ++k) {
      o.prehit_gap = std::max(o.prehit_gap, std::abs(sums[0].at(k) - sums[1].at(k)));
    }
  });
  c.result.table.columns = {"y1", "y2", "regime", "paths", "hitting_paths", "criterion",
                            "satisfied", "fraction", "max_prehit_gap", "verdict"};
  std::size_t hits = 0;
  double gap = 0.0;
  for (const PathOutcome& o : out) {
    if (o.hit) ++hits;
    gap = std::max(gap, o.prehit_gap);
  }
  for (std::size_t d = 0; d < 2; ++d) {
    std::size_t good = 0;
    for (const PathOutcome& o : out) {
      if (!o.hit) continue;
      if (d == 0 ? o.post_qv[0] > qv_factor * o.remaining : o.post_qv[1] == 0.0) ++good;
    }
    const double frac = hits ? static_cast<double>(good) / static_cast<double>(hits) : 0.0;
    const bool ok = hits > 0 && (d == 0 ? frac > min_fraction : good == hits);
    c.result.table.add_row({decs[d].y1, decs[d].y2,
                            std::string(std::abs(decs[d].y1) > 1.0 ? "stopped" : "free"),
                            as_int(c.paths), as_int(hits),
                            std::string(d == 0 ? "qv>" + format_number(qv_factor) + "*(T-tau)"
                                               : "qv==0"),
                            as_int(good), frac, gap, std::string(verdict(ok))});
  }
}

void path_dependent(Context& c) {
  const double xi = c.params.num("xi", 0.5);
  ModelSpec one;
  one.tag = ModelTag::PathDependent;
  one.x0 = xi;
  ModelSpec two = one;
  two.tag = ModelTag::TwoDimPathDependent;
  const Model m1 = build_model(one);
  const Model m2 = build_model(two);
  struct PathOutcome {
    double diff = 0.0;
    double bound = 0.0;
  };
  std::vector<PathOutcome> out(c.paths);
  const double dt = c.grid.dt();
  const double horizon = c.grid.horizon();
  parallel_for(c.paths, c.opts.threads, [&](std::size_t i) {
    const SeedSpec seed{c.cfg.seed, i};
    const SamplePath a = simulate(m1, c.grid, seed);
    const SamplePath b = simulate(m2, c.grid, seed);
    double diff = 0.0;
    double max_x = 0.0;
    for (std::size_t k = 0; k < c.grid.n_nodes(); ++k) {
      diff = std::max(diff, std::abs(a.aux[k] - b.at(k, 1)));
      max_x = std::max(max_x, std::abs(a.at(k)));
    }
    out[i] = {diff, 2.0 * dt * horizon * max_x};
  });
  std::size_t violations = 0;
  double worst = 0.0;
  double worst_ratio = 0.0;
  for (const PathOutcome& o : out) {
    if (o.diff > o.bound) ++violations;
    worst = std::max(worst, o.diff);
    if (o.bound > 0.0) worst_ratio = std::max(worst_ratio, o.diff / o.bound);
  }
  c.result.table.columns = {"xi", "paths", "max_abs_diff", "max_diff_over_bound", "violations",
                            "verdict"};
  c.result.table.add_row({xi, as_int(c.paths), worst, worst_ratio, as_int(violations),
                          std::string(verdict(violations == 0))});
}

void modulus(Context& c) {
  const ModelSpec base = c.params.model([] {
    ModelSpec s = penalized(0, 0, 1, 0);
    s.x0 = 0.0;
    return s;
  }());
  const std::vector<double> hs = c.params.positive_list("h_list", {0.4, 0.2, 0.1, 0.05, 0.025});
  const double q = c.params.num("quantile", 0.95);
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("quantile", "must lie in (0, 1)");
  const double spread = c.params.positive("max_spread", 0.25);
  for (std::size_t i = 1; i < hs.size(); ++i) {
    if (!(hs[i] < hs[i - 1])) throw ConfigError("h_list", "must be strictly decreasing");
  }
  if (!(hs.front() < c.grid.horizon())) throw ConfigError("h_list", "entries must be below horizon");
  std::vector<int> ns;
  if (c.cfg.params.count("n_list")) {
    if (base.tag != ModelTag::PenalizedSDE) throw ConfigError("n_list", "needs the penalized model");
    ns = c.params.int_list("n_list", {});
  }
  c.result.table.columns = {"n", "h", "quantile_level", "modulus", "median", "paths", "check",
                            "verdict"};

  auto run_model = [&](const ModelSpec& spec, double level) {
    return modulus_of_continuity(spec, hs, c.grid, c.paths, level, c.cfg.seed, c.opts);
  };
  std::vector<std::vector<ModulusRow>> tables;
  if (ns.empty()) {
    tables.push_back(run_model(base, q));
  } else {
    for (int n : ns) {
      ModelSpec s = base;
      s.bump = BumpSpec(base.bump ? base.bump->shape() : BumpSpec::Shape::Quartic, n);
      tables.push_back(run_model(s, q));
    }
  }
  const bool brownian = ns.empty() && is_plain_brownian(base);
  // The scaling check is on the median.
  const std::vector<ModulusRow> medians = brownian ? run_model(base, 0.5) : std::vector<ModulusRow>{};
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& rows = tables[t];
    for (std::size_t j = 0; j < rows.size(); ++j) {
      bool ok = j == 0 || rows[j].quantile <= rows[j - 1].quantile;
      std::string check = j == 0 ? "first" : "monotone-in-h";
      if (brownian && j > 0 && medians[j].quantile > 0.0) {
        // Levy modulus shape sqrt(h log(1/h)); compare consecutive ratios.
        auto levy = [](double h) { return std::sqrt(h * std::log(1.0 / h)); };
        const double expected = levy(rows[j - 1].h) / levy(rows[j].h);
        const double observed = medians[j - 1].quantile / medians[j].quantile;
        ok = ok && std::abs(observed / expected - 1.0) <= 0.2;
        check = "levy-ratio=" + format_number(observed / expected);
      }
      if (!ns.empty()) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = 0.0;
        for (const auto& other : tables) {
          lo = std::min(lo, other[j].quantile);
          hi = std::max(hi, other[j].quantile);
        }
        const double rel = lo > 0.0 ? (hi - lo) / lo : 0.0;
        ok = ok && rel < spread;
        check = "spread=" + format_number(rel);
      }
      c.result.table.add_row({ns.empty() ? Cell{} : Cell{std::int64_t{ns[t]}}, rows[j].h, q,
                              rows[j].quantile, brownian ? Cell{medians[j].quantile} : Cell{},
                              as_int(rows[j].n_paths), check,
                              std::string(verdict(ok))});
    }
  }
}

void reflected_semigroup(Context& c) {
  constexpr double pi = std::numbers::pi;
  const double x0 = c.params.num("x0", 1.0);
  if (!(x0 > -pi && x0 < pi)) throw ConfigError("x0", "must lie in (-pi, pi)");
  std::vector<double> ts = c.params.positive_list("t_list", {0.05, 0.25, 1.0, 4.0});
  for (double t : ts) {
    if (t > c.grid.horizon() + 1e-12) throw ConfigError("t_list", "entries must not exceed horizon");
  }
  std::vector<std::size_t> nodes;
  for (double t : ts) nodes.push_back(static_cast<std::size_t>(std::llround(t / c.grid.dt())));
  ModelSpec spec;
  spec.tag = ModelTag::ReflectedBM;
  spec.x0 = x0;
  const Model model = build_model(spec);
  std::vector<std::vector<double>> values(ts.size(), std::vector<double>(c.paths));
  std::vector<std::size_t> on_boundary(c.paths, 0);
  parallel_for(c.paths, c.opts.threads, [&](std::size_t i) {
    const SamplePath path = simulate(model, c.grid, SeedSpec{c.cfg.seed, i});
    for (std::size_t j = 0; j < ts.size(); ++j) values[j][i] = std::sin(0.5 * path.at(nodes[j]));
    for (std::size_t k = 1; k < c.grid.n_nodes(); ++k) {
      if (std::abs(path.at(k)) == pi) ++on_boundary[i];
    }
  });
  std::size_t boundary = 0;
  for (std::size_t b : on_boundary) boundary += b;
  c.result.table.columns = {"t", "estimate", "std_error", "oracle", "abs_diff", "tolerance",
                            "boundary_nodes", "verdict"};
  for (std::size_t j = 0; j < ts.size(); ++j) {
    const EstimateCI e = mean_ci(values[j]);
    const double t = c.grid.time(nodes[j]);
    // sin(y / 2) is a Neumann eigenfunction on [-pi, pi] with eigenvalue -1/8.
    const double oracle = std::exp(-t / 8.0) * std::sin(0.5 * x0);
    const double diff = std::abs(e.value - oracle);
    const double tol = 3.0 * e.std_error + 1e-12;
    c.result.table.add_row({t, e.value, e.std_error, oracle, diff, tol, as_int(boundary),
                            std::string(verdict(diff <= tol && boundary == 0))});
  }
}

void passthrough(Context& c) {
  ModelSpec spec = c.params.model([] {
    ModelSpec s;
    s.tag = ModelTag::PassThroughCircle;
    s.x0 = 0.5;
    return s;
  }());
  if (spec.tag != ModelTag::PassThroughCircle) throw ConfigError("model", "must be passthrough-circle");
  struct PathOutcome {
    std::size_t traps = 0;
    std::size_t reflections = 0;
    std::size_t excursions = 0;
    std::size_t upper_first = 0;
    double radius_err = 0.0;
    double jump_ratio = 0.0;
  };
  std::vector<PathOutcome> out(c.paths);
  parallel_for(c.paths, c.opts.threads, [&](std::size_t i) {
    const CirclePath cp = passthrough_circle(c.grid, spec.x0, SeedSpec{c.cfg.seed, i}, spec.copy_start);
    PathOutcome& o = out[i];
    const SamplePath& p = cp.path;
    double max_step = 0.0;
    for (std::size_t k = 0; k < c.grid.n_nodes(); ++k) {
      o.radius_err = std::max(o.radius_err, std::abs(std::hypot(p.at(k, 0), p.at(k, 1)) - 1.0));
    }
    Stream gen = derive_stream(SeedSpec{c.cfg.seed, i});
    const std::vector<double> inc = brownian_increments(c.grid, gen);
    for (double d : inc) max_step = std::max(max_step, std::abs(d));
    for (std::size_t e = 0; e < cp.events.size(); ++e) {
      const BoundaryEvent& ev = cp.events[e];
      if (!ev.restart) {
        ++o.reflections;
        continue;
      }
      ++o.traps;
      if (ev.node > 0) {
        const double jump = std::hypot(p.at(ev.node, 0) - p.at(ev.node - 1, 0),
                                       p.at(ev.node, 1) - p.at(ev.node - 1, 1));
        if (max_step > 0.0) o.jump_ratio = std::max(o.jump_ratio, jump / max_step);
      }
      // The excursion runs until the next boundary contact or the horizon.
      const std::size_t end = e + 1 < cp.events.size() ? cp.events[e + 1].node : c.grid.n_nodes();
      for (std::size_t k = ev.node + 1; k < end; ++k) {
        const double s = p.at(k, 1);
        if (s == 0.0) continue;
        ++o.excursions;
        if (s > 0.0) ++o.upper_first;
        break;
      }
    }
  });
  PathOutcome total;
  for (const PathOutcome& o : out) {
    total.traps += o.traps;
    total.reflections += o.reflections;
    total.excursions += o.excursions;
    total.upper_first += o.upper_first;
    total.radius_err = std::max(total.radius_err, o.radius_err);
    total.jump_ratio = std::max(total.jump_ratio, o.jump_ratio);
  }
  const double frac = total.excursions
                          ? static_cast<double>(total.upper_first) / static_cast<double>(total.excursions)
                          : 0.0;
  const bool ok = total.excursions > 0 && total.upper_first == total.excursions &&
                  total.radius_err < 1e-12 && total.jump_ratio < 3.0;
  c.result.table.columns = {"copy_start", "paths", "traps", "reflections", "excursions",
                            "upper_first", "fraction", "max_radius_error", "max_jump_over_step",
                            "verdict"};
  c.result.table.add_row({std::string(spec.copy_start == CopyStart::TrapPoint ? "trap" : "origin"),
                          as_int(c.paths), as_int(total.traps), as_int(total.reflections),
                          as_int(total.excursions), as_int(total.upper_first), frac,
                          total.radius_err, total.jump_ratio, std::string(verdict(ok))});
}

struct Runner {
  CatalogEntry entry;
  std::function<void(Context&)> run;
};

const std::vector<Runner>& runners() {
  static const std::vector<Runner> all = {
      {{"exit-closed-form", "scale-function oracle against the constant-coefficient formula",
        {"tolerance"}, 1, 1, 1.0},
       exit_closed_form},
      {{"exit-matrix", "Monte Carlo exit probabilities against the oracle, 12 cases",
        {"bridge"}, 100000, 10000, 10.0},
       exit_matrix},
      {{"exit-penalized", "Monte Carlo and oracle exit probabilities over an n ladder",
        with_model_keys({"l", "r", "n_list", "bridge"}), 10000, 10000, 10.0},
       exit_penalized},
      {{"penalty-limit", "oracle exit-at-r probability as the penalty sharpens",
        with_model_keys({"l", "x", "r", "threshold", "bound"}), 1, 1, 1.0},
       penalty_limit},
      {{"occupation", "time spent near the origin for shrinking bands",
        with_model_keys({"eps_list", "center"}), 10000, 1000, 1.0},
       occupation},
      {{"branching", "full and stopped solutions of the degenerate equation on shared drivers",
        {"xi"}, 10000, 10000, 1.0},
       branching},
      {{"convergence-ladder", "coupled distance of the approximating families to their limits",
        {"xi", "eps_list", "noise_eps_list"}, 10000, 1000, 1.0},
       convergence_ladder},
      {{"strong-markov", "post-hit laws split by approach side",
        with_model_keys({"level", "lag", "runs", "alpha"}), 2000, 2000, 2.0},
       strong_markov},
      {{"shifted-decomposition", "sums of two decompositions of the shifted system",
        {"x", "split", "qv_factor", "min_fraction"}, 10000, 1000, 1.0},
       shifted_decomposition},
      {{"path-dependent", "1-D running integral against the 2-D second component", {"xi"}, 1000,
        1000, 2.0},
       path_dependent},
      {{"modulus", "quantiles of the modulus of continuity",
        with_model_keys({"h_list", "quantile", "n_list", "max_spread"}), 1000, 1000, 1.0},
       modulus},
      {{"reflected-semigroup", "reflected Brownian motion on [-pi, pi] against its eigenfunction",
        {"x0", "t_list"}, 10000, 4000, 4.0},
       reflected_semigroup},
      {{"passthrough", "fresh copies after trapping leave into the upper half-plane",
        with_model_keys({}), 1000, 10000, 10.0},
       passthrough},
  };
  return all;
}

const Runner* find_runner(const std::string& name) {
  for (const Runner& r : runners()) {
    if (r.entry.name == name) return &r;
  }
  return nullptr;
}

}  // namespace

void ResultTable::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw std::logic_error("result row has " + std::to_string(row.size()) + " cells, table has " +
                           std::to_string(columns.size()) + " columns");
  }
  rows.push_back(std::move(row));
}

const std::vector<CatalogEntry>& catalog() {
  static const std::vector<CatalogEntry> entries = [] {
    std::vector<CatalogEntry> e;
    for (const Runner& r : runners()) e.push_back(r.entry);
    return e;
  }();
  return entries;
}

const CatalogEntry* find_experiment(const std::string& name) {
  const Runner* r = find_runner(name);
  return r ? &r->entry : nullptr;
}

std::set<std::string> known_keys() {
  std::set<std::string> keys(kCommonKeys.begin(), kCommonKeys.end());
  for (const Runner& r : runners()) keys.insert(r.entry.keys.begin(), r.entry.keys.end());
  return keys;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const Runner* runner = find_runner(cfg.experiment);
  if (!runner) throw ConfigError("experiment", "unknown experiment '" + cfg.experiment + "'");
  const CatalogEntry& entry = runner->entry;
  for (const auto& [key, values] : cfg.params) {
    const bool common = std::find(kCommonKeys.begin(), kCommonKeys.end(), key) != kCommonKeys.end();
    const bool own = std::find(entry.keys.begin(), entry.keys.end(), key) != entry.keys.end();
    if (!common && !own) throw ConfigError(key, "not used by experiment '" + entry.name + "'");
  }
  if (cfg.format != "csv" && cfg.format != "json") {
    throw ConfigError("format", "expected csv or json, got '" + cfg.format + "'");
  }
  if (cfg.threads < 0) throw ConfigError("threads", "must be >= 0");
  if (cfg.horizon < 0.0 || !std::isfinite(cfg.horizon)) throw ConfigError("horizon", "must be > 0");

  ExperimentResult result;
  result.experiment = entry.name;
  result.seed = cfg.seed;
  Params params(cfg, result);
  const std::size_t paths = cfg.paths ? cfg.paths : entry.default_paths;
  const std::size_t steps = cfg.steps ? cfg.steps : entry.default_steps;
  const double horizon = cfg.horizon > 0.0 ? cfg.horizon : entry.default_horizon;
  result.params["paths"] = std::to_string(paths);
  result.params["steps"] = std::to_string(steps);
  result.params["horizon"] = format_number(horizon);
  RunOptions opts;
  opts.threads = cfg.threads;
  Context ctx{cfg, entry, params, result, paths, TimeGrid::on(horizon, steps), opts};
  if (std::find(entry.keys.begin(), entry.keys.end(), "bridge") != entry.keys.end()) {
    ctx.opts.bridge = params.flag("bridge", true);
  }
  try {
    runner->run(ctx);
  } catch (const ModelError& e) {
    throw ConfigError(e.field(), std::string(e.what()).substr(e.field().size() + 2));
  }
  for (const auto& row : result.table.rows) {
    const auto* v = std::get_if<std::string>(&row.back());
    if (!v || *v != "pass") result.passed = false;
  }
  return result;
}

namespace {

std::string csv_cell(const Cell& cell) {
  if (const auto* i = std::get_if<std::int64_t>(&cell)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&cell)) return format_number(*d);
  if (const auto* s = std::get_if<std::string>(&cell)) {
    if (s->find_first_of(",\"\n") == std::string::npos) return *s;
    std::string q = "\"";
    for (char ch : *s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  }
  return "";
}

}  // namespace

void write_csv(std::ostream& os, const ExperimentResult& result) {
  os << "schema";
  for (const std::string& c : result.table.columns) os << ',' << c;
  os << '\n';
  for (const auto& row : result.table.rows) {
    os << kSchemaVersion;
    for (const Cell& cell : row) os << ',' << csv_cell(cell);
    os << '\n';
  }
}

void write_json(std::ostream& os, const ExperimentResult& result) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["meta"] = {{"experiment", result.experiment},
                 {"schema", kSchemaVersion},
                 {"seed", result.seed},
                 {"verdict", result.passed ? "pass" : "fail"}};
  ordered_json params = ordered_json::object();
  for (const auto& [k, v] : result.params) params[k] = v;
  doc["params"] = params;
  ordered_json rows = ordered_json::array();
  for (const auto& row : result.table.rows) {
    ordered_json r = ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      const Cell& cell = row[i];
      const std::string& key = result.table.columns[i];
      if (const auto* n = std::get_if<std::int64_t>(&cell)) r[key] = *n;
      else if (const auto* d = std::get_if<double>(&cell)) r[key] = std::isfinite(*d) ? ordered_json(*d) : ordered_json(format_number(*d));
      else if (const auto* s = std::get_if<std::string>(&cell)) r[key] = *s;
      else r[key] = nullptr;
    }
    rows.push_back(std::move(r));
  }
  doc["rows"] = rows;
  os << doc.dump(2) << '\n';
}

namespace {

void print_catalog(std::ostream& os) {
  os << "experiments:\n";
  for (const CatalogEntry& e : catalog()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "  %-22s ", e.name.c_str());
    os << buf << e.description << '\n';
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Runs one experiment described by a config file and writes a result table."};
  app.name("sdelab");
  ExperimentConfig cfg;
  std::string config_path;
  bool list = false;
  app.set_config("--config", "", "experiment config file (TOML or INI)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_flag("--list", list, "print the experiment catalog and exit");
  app.add_option("--experiment", cfg.experiment, "experiment name");
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--paths", cfg.paths, "number of sample paths");
  app.add_option("--steps", cfg.steps, "grid steps on [0, horizon]");
  app.add_option("--horizon", cfg.horizon, "time horizon T");
  app.add_option("--out", cfg.out, "output file (default: standard output)");
  app.add_option("--format", cfg.format, "csv or json");
  app.add_option("--threads", cfg.threads, "worker threads (0: all cores)");
  std::map<std::string, std::vector<std::string>> raw;
  for (const std::string& key : known_keys()) {
    if (std::find(kCommonKeys.begin(), kCommonKeys.end(), key) != kCommonKeys.end()) continue;
    app.add_option("--" + key, raw[key])->group("Experiment keys")->expected(1, -1);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (list) {
    print_catalog(std::cout);
    return 0;
  }
  for (auto& [key, values] : raw) {
    if (app.get_option("--" + key)->count() > 0) cfg.params[key] = values;
  }
  if (cfg.experiment.empty() || !find_experiment(cfg.experiment)) {
    std::cerr << (cfg.experiment.empty() ? std::string("no experiment given")
                                         : "unknown experiment '" + cfg.experiment + "'")
              << "\n";
    print_catalog(std::cerr);
    return 1;
  }
  ExperimentResult result;
  const auto start = std::chrono::steady_clock::now();
  try {
    result = run_experiment(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream text;
  if (cfg.format == "json") write_json(text, result);
  else write_csv(text, result);
  if (cfg.out.empty()) {
    std::cout << text.str() << std::flush;
  } else {
    std::ofstream file(cfg.out, std::ios::binary);
    if (!(file << text.str())) {
      std::cerr << "cannot write " << cfg.out << '\n';
      return 1;
    }
  }
  std::cerr << result.experiment << ": " << (result.passed ? "pass" : "fail") << " in "
            << format_number(seconds) << " s\n";
  return result.passed ? 0 : 2;
}

}  // namespace sdelab
