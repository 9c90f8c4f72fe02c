#include "sdelab/models.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

namespace sdelab {

namespace {

constexpr std::array<std::pair<ModelTag, const char*>, 11> kTagNames{{
    {ModelTag::ReflectedBM, "reflected-bm"},
    {ModelTag::CircleProcess, "circle"},
    {ModelTag::PassThroughCircle, "passthrough-circle"},
    {ModelTag::PenalizedSDE, "penalized"},
    {ModelTag::DegenerateIndicator, "degenerate"},
    {ModelTag::SqrtCappedApprox, "sqrt-capped"},
    {ModelTag::NoisePerturbApprox, "noise-perturbed"},
    {ModelTag::PathDependent, "path-dependent"},
    {ModelTag::TwoDimPathDependent, "path-dependent-2d"},
    {ModelTag::ShiftedSystem, "shifted"},
    {ModelTag::ShiftedSystemApprox, "shifted-approx"},
}};

inline double indicator_nonzero(double x) { return x != 0.0 ? 1.0 : 0.0; }
inline double sqrt_capped(double x, double eps) { return std::min(std::sqrt(std::abs(x)) / eps, 1.0); }

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ModelError(key, "not a number: '" + text + "'");
  }
  if (used != text.size()) throw ModelError(key, "not a number: '" + text + "'");
  return v;
}

CoefficientField field_from(CoefficientField::Evaluator drift, CoefficientField::Evaluator diffusion,
                            std::size_t dim, std::size_t drivers) {
  CoefficientField f;
  f.dim = dim;
  f.n_drivers = drivers;
  f.drift = std::move(drift);
  f.diffusion = std::move(diffusion);
  return f;
}

void zero_drift(double, std::span<const double>, double, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
}

}  // namespace

std::string to_string(ModelTag tag) {
  for (const auto& [t, name] : kTagNames) {
    if (t == tag) return name;
  }
  return "unknown";
}

ModelTag parse_model_tag(const std::string& name) {
  for (const auto& [t, n] : kTagNames) {
    if (name == n) return t;
  }
  std::string known;
  for (const auto& [t, n] : kTagNames) known += std::string(known.empty() ? "" : ", ") + n;
  throw ModelError("model", "unknown model '" + name + "' (known: " + known + ")");
}

void ModelSpec::validate() const {
  constexpr double pi = std::numbers::pi;
  auto finite = [](const char* name, double v) {
    if (!std::isfinite(v)) throw ModelError(name, "must be finite");
  };
  finite("x0", x0);
  finite("y2", y2);
  switch (tag) {
    case ModelTag::ReflectedBM:
      if (!(lo < hi)) throw ModelError("lo", "reflection interval needs lo < hi");
      if (x0 < lo || x0 > hi) throw ModelError("x0", "must lie in [lo, hi]");
      break;
    case ModelTag::CircleProcess:
    case ModelTag::PassThroughCircle:
      if (x0 < -pi || x0 > pi) throw ModelError("x0", "angle must lie in [-pi, pi]");
      break;
    case ModelTag::PenalizedSDE:
      finite("drift", drift);
      finite("drift_slope", drift_slope);
      if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ModelError("sigma", "must be > 0");
      break;
    case ModelTag::SqrtCappedApprox:
    case ModelTag::NoisePerturbApprox:
    case ModelTag::ShiftedSystemApprox:
      if (!(eps > 0.0) || !std::isfinite(eps)) throw ModelError("eps", "must be > 0");
      break;
    case ModelTag::TwoDimPathDependent:
      if (branch != Branch::Full) throw ModelError("branch", "only the full branch is available in 2-D");
      break;
    default:
      break;
  }
}

std::map<std::string, std::string> ModelSpec::to_config() const {
  std::map<std::string, std::string> kv;
  kv["model"] = to_string(tag);
  kv["x0"] = format_double(x0);
  switch (tag) {
    case ModelTag::ReflectedBM:
      kv["lo"] = format_double(lo);
      kv["hi"] = format_double(hi);
      break;
    case ModelTag::PassThroughCircle:
      kv["copy_start"] = copy_start == CopyStart::TrapPoint ? "trap" : "origin";
      break;
    case ModelTag::PenalizedSDE:
      kv["drift"] = format_double(drift);
      kv["drift_slope"] = format_double(drift_slope);
      kv["sigma"] = format_double(sigma);
      if (bump) {
        kv["penalty"] = bump->shape() == BumpSpec::Shape::Quartic ? "quartic" : "sextic";
        kv["n"] = std::to_string(bump->n());
      } else {
        kv["penalty"] = "none";
      }
      break;
    case ModelTag::SqrtCappedApprox:
    case ModelTag::NoisePerturbApprox:
      kv["eps"] = format_double(eps);
      break;
    case ModelTag::DegenerateIndicator:
    case ModelTag::PathDependent:
      kv["branch"] = branch == Branch::Full ? "full" : "stopped";
      break;
    case ModelTag::ShiftedSystem:
      kv["y2"] = format_double(y2);
      break;
    case ModelTag::ShiftedSystemApprox:
      kv["y2"] = format_double(y2);
      kv["eps"] = format_double(eps);
      break;
    default:
      break;
  }
  return kv;
}

ModelSpec ModelSpec::from_config(const std::map<std::string, std::string>& kv) {
  ModelSpec s;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("model")) s.tag = parse_model_tag(*v);
  if (auto* v = get("x0")) s.x0 = parse_double("x0", *v);
  if (auto* v = get("y2")) s.y2 = parse_double("y2", *v);
  if (auto* v = get("eps")) s.eps = parse_double("eps", *v);
  if (auto* v = get("lo")) s.lo = parse_double("lo", *v);
  if (auto* v = get("hi")) s.hi = parse_double("hi", *v);
  if (auto* v = get("drift")) s.drift = parse_double("drift", *v);
  if (auto* v = get("drift_slope")) s.drift_slope = parse_double("drift_slope", *v);
  if (auto* v = get("sigma")) s.sigma = parse_double("sigma", *v);
  if (auto* v = get("branch")) {
    if (*v == "full") s.branch = Branch::Full;
    else if (*v == "stopped") s.branch = Branch::Stopped;
    else throw ModelError("branch", "expected full or stopped, got '" + *v + "'");
  }
  if (auto* v = get("copy_start")) {
    if (*v == "trap") s.copy_start = CopyStart::TrapPoint;
    else if (*v == "origin") s.copy_start = CopyStart::Origin;
    else throw ModelError("copy_start", "expected trap or origin, got '" + *v + "'");
  }
  const std::string* penalty = get("penalty");
  const std::string* n = get("n");
  if (penalty && *penalty != "none") {
    BumpSpec::Shape shape;
    if (*penalty == "quartic") shape = BumpSpec::Shape::Quartic;
    else if (*penalty == "sextic") shape = BumpSpec::Shape::Sextic;
    else throw ModelError("penalty", "expected none, quartic or sextic, got '" + *penalty + "'");
    if (!n) throw ModelError("n", "required when a penalty is set");
    const double nv = parse_double("n", *n);
    if (nv < 1.0 || nv != std::floor(nv)) throw ModelError("n", "must be an integer >= 1");
    s.bump = BumpSpec(shape, static_cast<int>(nv));
  } else if (!penalty && n && s.tag == ModelTag::PenalizedSDE) {
    const double nv = parse_double("n", *n);
    if (nv < 1.0 || nv != std::floor(nv)) throw ModelError("n", "must be an integer >= 1");
    s.bump = BumpSpec::canonical(static_cast<int>(nv));
  }
  s.validate();
  return s;
}

ScalarFn drift_function(const ModelSpec& spec) {
  return [a = spec.drift, k = spec.drift_slope](double x) { return a + k * x; };
}

ScalarFn sigma_function(const ModelSpec& spec) {
  return [s = spec.sigma](double) { return s; };
}

Model build_model(const ModelSpec& spec) {
  spec.validate();
  Model m;
  m.spec = spec;
  m.x0 = {spec.x0};

  auto unit_diffusion = [](double, std::span<const double>, double, std::span<double> out) {
    out[0] = 1.0;
  };

  switch (spec.tag) {
    case ModelTag::ReflectedBM:
      m.field = field_from(zero_drift, unit_diffusion, 1, 1);
      m.fold = std::make_pair(spec.lo, spec.hi);
      break;
    case ModelTag::CircleProcess:
    case ModelTag::PassThroughCircle:
      m.field = field_from(zero_drift, unit_diffusion, 1, 1);
      m.circle = true;
      m.output_dim = 2;
      break;
    case ModelTag::PenalizedSDE: {
      const double a = spec.drift;
      const double k = spec.drift_slope;
      const double s = spec.sigma;
      if (spec.bump) {
        const BumpSpec bump = *spec.bump;
        m.field = field_from(
            [a, k, bump](double, std::span<const double> x, double, std::span<double> out) {
              out[0] = a + k * x[0] - bump.dphi(x[0]);
            },
            [s](double, std::span<const double>, double, std::span<double> out) { out[0] = s; }, 1,
            1);
        // Resolve the bump: per elementary step, noise and drift each move the
        // state by at most about a twentieth of the support half-width.
        const double w = bump.half_width();
        const double step = std::min((0.05 * w) * (0.05 * w) / (s * s), 0.05 * w / bump.max_slope());
        m.field.stiff_zone = StiffZone{-w, w, step};
        m.contact_radius = 2.0 * w;
      } else {
        m.field = field_from(
            [a, k](double, std::span<const double> x, double, std::span<double> out) {
              out[0] = a + k * x[0];
            },
            [s](double, std::span<const double>, double, std::span<double> out) { out[0] = s; }, 1,
            1);
      }
      break;
    }
    case ModelTag::DegenerateIndicator:
      m.field = field_from(
          zero_drift,
          [](double, std::span<const double> x, double, std::span<double> out) {
            out[0] = indicator_nonzero(x[0]);
          },
          1, 1);
      if (spec.branch == Branch::Stopped) m.stop = StopRule::level_hit(0.0);
      break;
    case ModelTag::SqrtCappedApprox: {
      const double eps = spec.eps;
      m.field = field_from(
          zero_drift,
          [eps](double, std::span<const double> x, double, std::span<double> out) {
            out[0] = sqrt_capped(x[0], eps);
          },
          1, 1);
      // Zero is absorbing for this equation: the unique solution is stopped there.
      m.stop = StopRule::level_hit(0.0);
      break;
    }
    case ModelTag::NoisePerturbApprox: {
      const double eps = spec.eps;
      m.field = field_from(
          zero_drift,
          [eps](double, std::span<const double> x, double, std::span<double> out) {
            out[0] = indicator_nonzero(x[0]);
            out[1] = eps;
          },
          1, 2);
      break;
    }
    case ModelTag::PathDependent:
      m.field = field_from(
          zero_drift,
          [](double, std::span<const double> x, double aux, std::span<double> out) {
            out[0] = indicator_nonzero(x[0]) + (aux >= 0.0 && aux < 1.0 ? 1.0 : 0.0);
          },
          1, 1);
      m.field.aux_rate = [](double, std::span<const double> x) { return std::abs(x[0]); };
      if (spec.branch == Branch::Stopped) {
        StopRule rule = StopRule::level_hit(0.0);
        rule.armed_by_aux = true;
        rule.aux_threshold = 1.0;
        m.stop = rule;
      }
      break;
    case ModelTag::TwoDimPathDependent:
      m.field = field_from(
          [](double, std::span<const double> x, double, std::span<double> out) {
            out[0] = 0.0;
            out[1] = std::abs(x[0]);
          },
          [](double, std::span<const double> x, double, std::span<double> out) {
            out[0] = indicator_nonzero(x[0]) + (x[1] >= 0.0 && x[1] < 1.0 ? 1.0 : 0.0);
            out[1] = 0.0;
          },
          2, 1);
      m.x0 = {spec.x0, 0.0};
      m.output_dim = 2;
      break;
    case ModelTag::ShiftedSystem: {
      const bool upper = std::abs(spec.x0) > 1.0;
      m.field = field_from(
          zero_drift,
          [upper](double, std::span<const double>, double, std::span<double> out) {
            out[0] = upper ? 1.0 : 0.0;
            out[1] = upper ? 0.0 : 1.0;
          },
          2, 1);
      if (upper) m.stop = StopRule::combination_hit({1.0, 1.0}, 0.0, 0);
      m.x0 = {spec.x0, spec.y2};
      m.output_dim = 2;
      break;
    }
    case ModelTag::ShiftedSystemApprox: {
      const bool upper = std::abs(spec.x0) > 1.0;
      const double eps = spec.eps;
      m.field = field_from(
          zero_drift,
          [upper, eps](double, std::span<const double> x, double, std::span<double> out) {
            const double sum = x[0] + x[1];
            out[0] = upper ? sqrt_capped(sum, eps) : 0.0;
            out[1] = 0.0;
            out[2] = upper ? 0.0 : indicator_nonzero(sum);
            out[3] = eps;
          },
          2, 2);
      m.x0 = {spec.x0, spec.y2};
      m.output_dim = 2;
      break;
    }
  }
  return m;
}

SamplePath simulate(const Model& model, const TimeGrid& grid, SeedSpec seed) {
  const ModelSpec& spec = model.spec;
  if (spec.tag == ModelTag::PassThroughCircle) {
    return passthrough_circle(grid, spec.x0, seed, spec.copy_start).path;
  }
  if (spec.tag == ModelTag::CircleProcess) return reflected_circle(grid, spec.x0, seed).path;
  if (model.stop) return solve_stopped(model.field, model.x0, grid, seed, *model.stop).path;
  SamplePath path = euler_maruyama(model.field, model.x0, grid, seed);
  if (model.fold) {
    for (double& v : path.states) v = fold_reflect(v, model.fold->first, model.fold->second);
  }
  return path;
}

ReferencePair reference_solutions(double xi, const SamplePath& driver) {
  if (driver.dim != 1) throw std::invalid_argument("reference_solutions: driver must be 1-D");
  const TimeGrid& grid = driver.grid;
  ReferencePair out{SamplePath(grid, 1), SamplePath(grid, 1), HitResult{}, std::nullopt};
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) out.full.at(k) = xi + driver.at(k);
  out.full.sigma.assign(grid.n_nodes(), 1.0);
  Stream unused;
  out.hit = first_hit(out.full, 0.0, false, unused);

  out.stopped = out.full;
  std::optional<std::size_t> freeze;
  if (out.full.at(0) == 0.0) {
    freeze = 0;
  } else {
    for (std::size_t k = 0; k < grid.n_steps(); ++k) {
      const double a = out.full.at(k);
      const double b = out.full.at(k + 1);
      if (b == 0.0 || (a < 0.0) != (b < 0.0)) {
        freeze = k + 1;
        break;
      }
    }
  }
  if (freeze) {
    for (std::size_t k = *freeze; k < grid.n_nodes(); ++k) {
      out.stopped.at(k) = 0.0;
      out.stopped.sigma[k] = 0.0;
    }
  }
  out.freeze_index = freeze;
  return out;
}

SamplePath ShiftedPair::sum() const {
  SamplePath s(y1.grid, 1);
  for (std::size_t k = 0; k < s.n_nodes(); ++k) s.at(k) = y1.at(k) + y2.at(k);
  return s;
}

ShiftedPair shifted_solve(double y1, double y2, const TimeGrid& grid, SeedSpec seed,
                          ShiftedVariant variant) {
  if (!std::isfinite(y1) || !std::isfinite(y2)) throw ModelError("y", "initial pair must be finite");
  ShiftedPair out{SamplePath(grid, 1), SamplePath(grid, 1), std::nullopt};
  const bool upper = std::abs(y1) > 1.0;

  if (!variant.exact) {
    ModelSpec spec;
    spec.tag = ModelTag::ShiftedSystemApprox;
    spec.x0 = y1;
    spec.y2 = y2;
    spec.eps = variant.eps;
    const Model m = build_model(spec);
    const SamplePath joint = simulate(m, grid, seed);
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      out.y1.at(k) = joint.at(k, 0);
      out.y2.at(k) = joint.at(k, 1);
    }
    return out;
  }

  Stream gen = derive_stream(seed, channel::kDriver0);
  const SamplePath moving = brownian_path(grid, gen, upper ? y1 : y2);
  if (!upper) {
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      out.y1.at(k) = y1;
      out.y2.at(k) = moving.at(k);
    }
    return out;
  }
  // Y1 = y1 + B frozen once Y1 + y2 reaches or crosses 0; then Y1 = -y2.
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) out.y2.at(k) = y2;
  std::size_t k = 0;
  double prev = moving.at(0) + y2;
  bool frozen = prev == 0.0;
  out.y1.at(0) = moving.at(0);
  if (frozen) out.freeze_index = 0;
  for (k = 1; k < grid.n_nodes() && !frozen; ++k) {
    const double sum = moving.at(k) + y2;
    if (sum == 0.0 || (prev < 0.0) != (sum < 0.0)) {
      frozen = true;
      out.freeze_index = k;
      break;
    }
    out.y1.at(k) = moving.at(k);
    prev = sum;
  }
  if (out.freeze_index) {
    for (std::size_t j = *out.freeze_index; j < grid.n_nodes(); ++j) out.y1.at(j) = -y2;
  }
  return out;
}

}  // namespace sdelab
