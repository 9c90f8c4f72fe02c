#include "sdelab/solvers.hpp"

#include <algorithm>
#include <numbers>
#include <sstream>

namespace sdelab {

namespace {

std::string describe_state(std::size_t step, std::span<const double> state) {
  std::ostringstream os;
  os << "non-finite state at step " << step << ": (";
  for (std::size_t i = 0; i < state.size(); ++i) os << (i ? ", " : "") << state[i];
  os << ")";
  return os.str();
}

int sign_of(double v) { return v < 0.0 ? -1 : 1; }

void check_x0(const CoefficientField& field, std::span<const double> x0) {
  if (x0.size() != field.dim) {
    throw std::invalid_argument("initial state has dimension " + std::to_string(x0.size()) +
                                ", field expects " + std::to_string(field.dim));
  }
  for (double v : x0) {
    if (!std::isfinite(v)) throw NonFiniteStateError(0, x0);
  }
}

void check_field(const CoefficientField& field) {
  if (field.dim < 1 || field.dim > kMaxDim) throw std::invalid_argument("field: dim must be 1 or 2");
  if (field.n_drivers < 1 || field.n_drivers > kMaxDrivers) {
    throw std::invalid_argument("field: n_drivers must be 1 or 2");
  }
  if (!field.drift || !field.diffusion) throw std::invalid_argument("field: missing evaluator");
  if (field.stiff_zone && (field.dim != 1 || field.n_drivers != 1)) {
    throw std::invalid_argument("field: stiff zones need one dimension and one driver");
  }
}

void write_node(SamplePath& path, std::size_t k, const EulerStepper::State& x, double aux,
                double sigma) {
  for (std::size_t c = 0; c < path.dim; ++c) path.at(k, c) = x[c];
  if (path.has_aux()) path.aux[k] = aux;
  path.sigma[k] = sigma;
}

double combination(const StopRule& rule, const EulerStepper::State& x, std::size_t dim) {
  if (rule.kind == StopRule::Kind::Level) return x[0];
  double v = 0.0;
  for (std::size_t i = 0; i < dim; ++i) v += rule.weights[i] * x[i];
  return v;
}

}  // namespace

NonFiniteStateError::NonFiniteStateError(std::size_t step, std::span<const double> state)
    : std::runtime_error(describe_state(step, state)), step_(step) {}

EulerStepper::EulerStepper(const CoefficientField& field, SeedSpec seed)
    : field_(&field), refine_(seed, channel::kRefine) {
  check_field(field);
  for (std::size_t d = 0; d < field.n_drivers; ++d) {
    drivers_[d] = Stream(seed, channel::kDriver0 + static_cast<std::uint32_t>(d));
  }
}

double EulerStepper::local_sigma(double t, std::span<const double> x, double aux) const {
  std::array<double, kMaxDim * kMaxDrivers> load{};
  field_->diffusion(t, x, aux, std::span<double>(load.data(), field_->dim * field_->n_drivers));
  double s2 = 0.0;
  for (std::size_t d = 0; d < field_->n_drivers; ++d) s2 += load[d] * load[d];
  return std::sqrt(s2);
}

EulerStepper::ZoneAction EulerStepper::zone_action(double x, double x_next, double sigma, double h,
                                                     double& edge) {
  const StiffZone& z = *field_->stiff_zone;
  if (x >= z.lo && x <= z.hi) return ZoneAction::Split;
  if (x_next >= z.lo && x_next <= z.hi) return ZoneAction::Split;
  if ((x < z.lo) != (x_next < z.lo)) return ZoneAction::Split;
  if (!(sigma > 0.0)) return ZoneAction::Accept;
  edge = x < z.lo ? z.lo : z.hi;
  const double d0 = std::abs(edge - x);
  const double d1 = std::abs(edge - x_next);
  const double p = std::exp(-2.0 * d0 * d1 / (sigma * sigma * h));
  if (p > 0.0 && refine_.uniform() < p) return ZoneAction::Touch;
  return ZoneAction::Accept;
}

double EulerStepper::touch_time(double d0, double d1, double sigma, double h) {
  // s = tau / (h - tau) ~ IG(mu = d0 / d1, lambda = d0^2 / (sigma^2 h)), drawn
  // with the transformation method of Michael, Schucany and Haas.
  const double mu = d0 / d1;
  const double lambda = d0 * d0 / (sigma * sigma * h);
  const double nu = refine_.normal();
  const double a = mu * nu * nu / (2.0 * lambda);
  const double root = mu / (1.0 + a + std::sqrt(a * (a + 2.0)));
  const double s = refine_.uniform() <= mu / (mu + root) ? root : mu * mu / root;
  return h * s / (1.0 + s);
}

CoefficientField scalar_field(std::function<double(double)> drift,
                              std::function<double(double)> diffusion) {
  CoefficientField f;
  f.dim = 1;
  f.n_drivers = 1;
  f.drift = [drift = std::move(drift)](double, std::span<const double> x, double,
                                       std::span<double> out) { out[0] = drift(x[0]); };
  f.diffusion = [diffusion = std::move(diffusion)](double, std::span<const double> x, double,
                                                   std::span<double> out) {
    out[0] = diffusion(x[0]);
  };
  return f;
}

double fold_reflect(double y, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("fold_reflect: requires a < b");
  if (y >= a && y <= b) return y;
  const double len = b - a;
  double m = std::fmod(y - a, 2.0 * len);
  if (m < 0.0) m += 2.0 * len;
  return m <= len ? a + m : a + 2.0 * len - m;
}

HitResult first_hit(const SamplePath& path, double level, bool bridge, Stream& gen) {
  if (path.dim != 1) throw std::invalid_argument("first_hit: path must be one-dimensional");
  if (bridge && !path.has_sigma()) {
    throw std::invalid_argument("first_hit: bridge correction needs the path's diffusion values");
  }
  const TimeGrid& grid = path.grid;
  const std::size_t n = grid.n_steps();
  const double dt = grid.dt();
  HitResult r;

  auto side_after = [&](std::size_t k) {
    for (std::size_t j = k; j <= n; ++j) {
      const double d = path.at(j) - level;
      if (d != 0.0) return sign_of(d);
    }
    return 1;
  };

  if (path.at(0) == level) {
    r.hit = true;
    r.tau = grid.t_start();
    r.grid_index = 0;
    r.approach_side = side_after(1);
    r.method = HitMethod::Grid;
    return r;
  }

  for (std::size_t k = 0; k < n; ++k) {
    const double d0 = path.at(k) - level;
    const double d1 = path.at(k + 1) - level;
    if (d1 == 0.0) {
      r.hit = true;
      r.tau = grid.time(k + 1);
      r.grid_index = k + 1;
      r.approach_side = sign_of(d0);
      r.method = HitMethod::Grid;
      return r;
    }
    if ((d0 < 0.0) != (d1 < 0.0)) {
      r.hit = true;
      r.tau = grid.time(k) + dt * d0 / (d0 - d1);
      r.grid_index = k;
      r.approach_side = sign_of(d0);
      r.method = HitMethod::LinearInterp;
      return r;
    }
    if (bridge) {
      const double s = path.sigma[k];
      if (s > 0.0) {
        const double p = std::exp(-2.0 * d0 * d1 / (s * s * dt));
        if (gen.uniform() < p) {
          const double a0 = std::abs(d0);
          const double a1 = std::abs(d1);
          r.hit = true;
          r.tau = grid.time(k) + dt * a0 / (a0 + a1);
          r.grid_index = k;
          r.approach_side = sign_of(d0);
          r.method = HitMethod::Bridge;
          return r;
        }
      }
    }
  }
  r.hit = false;
  r.tau = grid.t_end();
  r.grid_index = n;
  r.approach_side = sign_of(path.at(n) - level);
  return r;
}

SamplePath euler_maruyama(const CoefficientField& field, std::span<const double> x0,
                          const TimeGrid& grid, SeedSpec seed) {
  check_field(field);
  check_x0(field, x0);
  EulerStepper stepper(field, seed);
  SamplePath path(grid, field.dim);
  if (field.has_aux()) path.aux.assign(grid.n_nodes(), 0.0);
  path.sigma.assign(grid.n_nodes(), 0.0);

  EulerStepper::State x{};
  std::copy(x0.begin(), x0.end(), x.begin());
  double aux = 0.0;
  const std::span<const double> xs(x.data(), field.dim);
  write_node(path, 0, x, aux, stepper.local_sigma(grid.t_start(), xs, aux));
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    stepper.advance(grid.time(k), grid.dt(), k, x, aux);
    write_node(path, k + 1, x, aux, stepper.local_sigma(grid.time(k + 1), xs, aux));
  }
  return path;
}

SamplePath euler_maruyama(const CoefficientField& field, double x0, const TimeGrid& grid,
                          SeedSpec seed) {
  const double init[1] = {x0};
  return euler_maruyama(field, std::span<const double>(init, 1), grid, seed);
}

StopRule StopRule::level_hit(double level) {
  StopRule r;
  r.kind = Kind::Level;
  r.level = level;
  return r;
}

StopRule StopRule::combination_hit(std::array<double, kMaxDim> weights, double level,
                                   std::size_t adjust) {
  if (adjust >= kMaxDim || weights[adjust] == 0.0) {
    throw std::invalid_argument("StopRule: adjusted component must carry a nonzero weight");
  }
  StopRule r;
  r.kind = Kind::Combination;
  r.weights = weights;
  r.level = level;
  r.adjust = adjust;
  return r;
}

StopRule StopRule::aux_reaches(double threshold) {
  StopRule r;
  r.kind = Kind::AuxThreshold;
  r.aux_threshold = threshold;
  return r;
}

StoppedSolution solve_stopped(const CoefficientField& field, std::span<const double> x0,
                              const TimeGrid& grid, SeedSpec seed, const StopRule& stop) {
  check_field(field);
  check_x0(field, x0);
  if (stop.kind == StopRule::Kind::Combination && stop.adjust >= field.dim) {
    throw std::invalid_argument("StopRule: adjusted component outside the state");
  }
  if ((stop.kind == StopRule::Kind::AuxThreshold || stop.armed_by_aux) && !field.has_aux()) {
    throw std::invalid_argument("StopRule: aux-based rule on a field without aux channel");
  }
  EulerStepper stepper(field, seed);
  StoppedSolution out{SamplePath(grid, field.dim), std::nullopt};
  SamplePath& path = out.path;
  if (field.has_aux()) path.aux.assign(grid.n_nodes(), 0.0);
  path.sigma.assign(grid.n_nodes(), 0.0);

  EulerStepper::State x{};
  std::copy(x0.begin(), x0.end(), x.begin());
  double aux = 0.0;
  const std::span<const double> xs(x.data(), field.dim);
  const bool level_rule = stop.kind != StopRule::Kind::AuxThreshold;

  auto freeze = [&](std::size_t k) {
    if (level_rule) {
      double rest = 0.0;
      for (std::size_t i = 0; i < field.dim; ++i) {
        if (i != stop.adjust) rest += stop.weights[i] * x[i];
      }
      x[stop.adjust] = stop.kind == StopRule::Kind::Level
                           ? stop.level
                           : (stop.level - rest) / stop.weights[stop.adjust];
    }
    for (std::size_t j = k; j < grid.n_nodes(); ++j) write_node(path, j, x, aux, 0.0);
    out.stop_index = k;
  };

  const bool initially_stopped =
      level_rule ? (!stop.armed_by_aux || aux >= stop.aux_threshold) &&
                       combination(stop, x, field.dim) == stop.level
                 : aux >= stop.aux_threshold;
  if (initially_stopped) {
    freeze(0);
    return out;
  }
  write_node(path, 0, x, aux, stepper.local_sigma(grid.t_start(), xs, aux));
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double before = combination(stop, x, field.dim) - stop.level;
    const bool armed = !stop.armed_by_aux || aux >= stop.aux_threshold;
    stepper.advance(grid.time(k), grid.dt(), k, x, aux);
    bool fire = false;
    if (level_rule) {
      const double after = combination(stop, x, field.dim) - stop.level;
      fire = armed && (after == 0.0 || (before < 0.0) != (after < 0.0));
    } else {
      fire = aux >= stop.aux_threshold;
    }
    if (fire) {
      freeze(k + 1);
      return out;
    }
    write_node(path, k + 1, x, aux, stepper.local_sigma(grid.time(k + 1), xs, aux));
  }
  return out;
}

namespace {

CirclePath make_circle(const TimeGrid& grid, std::vector<double> angle,
                       std::vector<BoundaryEvent> events) {
  CirclePath out{SamplePath(grid, 2), std::move(angle), std::move(events)};
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
    out.path.at(k, 0) = std::cos(out.angle[k]);
    out.path.at(k, 1) = std::sin(out.angle[k]);
  }
  return out;
}

}  // namespace

CirclePath passthrough_circle(const TimeGrid& grid, double x0, SeedSpec seed, CopyStart start) {
  constexpr double pi = std::numbers::pi;
  if (!(x0 >= -pi && x0 <= pi)) throw std::invalid_argument("passthrough_circle: x0 outside [-pi, pi]");
  const double restart_angle = start == CopyStart::TrapPoint ? pi : 0.0;
  Stream gen = derive_stream(seed, channel::kDriver0);
  const double scale = std::sqrt(grid.dt());

  std::vector<double> angle(grid.n_nodes());
  std::vector<BoundaryEvent> events;
  angle[0] = x0 == -pi ? restart_angle : x0;
  if (x0 == -pi) events.push_back({0, -1, true});
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    const double prev = angle[k];
    double next = prev + scale * gen.normal();
    bool reflected = false;
    if (next > pi) {
      next = 2.0 * pi - next;
      reflected = true;
    }
    if (next <= -pi) {
      // Trapped: the copy ends here and a fresh one takes over at this node.
      angle[k + 1] = restart_angle;
      events.push_back({k + 1, std::sin(prev) > 0.0 ? 1 : -1, true});
      continue;
    }
    if (reflected) events.push_back({k + 1, 1, false});
    angle[k + 1] = next;
  }
  return make_circle(grid, std::move(angle), std::move(events));
}

CirclePath reflected_circle(const TimeGrid& grid, double x0, SeedSpec seed) {
  constexpr double pi = std::numbers::pi;
  if (!(x0 >= -pi && x0 <= pi)) throw std::invalid_argument("reflected_circle: x0 outside [-pi, pi]");
  Stream gen = derive_stream(seed, channel::kDriver0);
  const SamplePath free = brownian_path(grid, gen, x0);

  std::vector<double> angle(grid.n_nodes());
  std::vector<BoundaryEvent> events;
  auto cell = [&](double u) { return std::floor((u + pi) / (2.0 * pi)); };
  angle[0] = fold_reflect(free.at(0), -pi, pi);
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    angle[k + 1] = fold_reflect(free.at(k + 1), -pi, pi);
    if (cell(free.at(k + 1)) != cell(free.at(k))) {
      events.push_back({k + 1, std::sin(angle[k]) > 0.0 ? 1 : -1, false});
    }
  }
  return make_circle(grid, std::move(angle), std::move(events));
}

}  // namespace sdelab
