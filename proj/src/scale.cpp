#include "sdelab/scale.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sdelab/quadrature.hpp"

namespace sdelab {

namespace {

constexpr double kMaxExponent = 700.0;

double checked_sigma2(const ScalarFn& sigma, double z) {
  const double s = sigma(z);
  if (!(s > 0.0)) {
    throw std::invalid_argument("scale oracle: sigma must be positive, got " + std::to_string(s) +
                                " at z = " + std::to_string(z));
  }
  return s * s;
}

}  // namespace

BumpSpec::BumpSpec(Shape shape, int n) : shape_(shape), n_(n) {
  if (n < 1) throw std::invalid_argument("BumpSpec: n must be >= 1");
  max_base_slope_ = shape == Shape::Quartic
                        ? 15.0 / 4.0 * (1.0 / std::sqrt(3.0)) * (2.0 / 3.0)
                        : 105.0 / 16.0 * (1.0 / std::sqrt(5.0)) * (16.0 / 25.0);
}

double BumpSpec::base(double u) const {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  const double q = 1.0 - u * u;
  return shape_ == Shape::Quartic ? 15.0 / 16.0 * q * q : 35.0 / 32.0 * q * q * q;
}

double BumpSpec::base_derivative(double u) const {
  if (u <= -1.0 || u >= 1.0) return 0.0;
  const double q = 1.0 - u * u;
  return shape_ == Shape::Quartic ? -15.0 / 4.0 * u * q : -105.0 / 16.0 * u * q * q;
}

void ExitQuery::validate() const {
  if (!(l < x && x < r)) {
    throw std::invalid_argument("ExitQuery: requires l < x < r, got (" + std::to_string(l) + ", " +
                                std::to_string(x) + ", " + std::to_string(r) + ")");
  }
}

ScaleOracle::ScaleOracle(ScalarFn drift, ScalarFn sigma, std::optional<BumpSpec> bump,
                         double anchor, ScaleOptions options)
    : drift_(std::move(drift)),
      sigma_(std::move(sigma)),
      bump_(std::move(bump)),
      anchor_(anchor),
      options_(options) {}

double ScaleOracle::log_weight(double y) const {
  if (y == anchor_) return 0.0;
  const double tol = options_.inner_rel_tol;
  auto drift_part = [this](double z) { return 2.0 * drift_(z) / checked_sigma2(sigma_, z); };
  double exponent = 0.0;
  if (bump_) {
    const double w = bump_->half_width();
    const double breaks[] = {-w, w};
    exponent -= integrate_piecewise(drift_part, anchor_, y, breaks, tol).value;
    // phi_n' vanishes off [-w, w]; integrate it on the intersection only.
    const double lo = std::max(std::min(anchor_, y), -w);
    const double hi = std::min(std::max(anchor_, y), w);
    if (lo < hi) {
      auto penalty = [this](double z) { return 2.0 * bump_->dphi(z) / checked_sigma2(sigma_, z); };
      const double part = adaptive_simpson(penalty, lo, hi, tol).value;
      exponent += y >= anchor_ ? part : -part;
    }
  } else {
    exponent -= adaptive_simpson(drift_part, anchor_, y, tol).value;
  }
  return exponent;
}

double ScaleOracle::max_log_weight(double a, double b) const {
  constexpr int kSamples = 256;
  std::vector<double> probes;
  probes.reserve(2 * kSamples + 8);
  for (int i = 0; i <= kSamples; ++i) probes.push_back(a + (b - a) * i / kSamples);
  if (bump_) {
    const double w = bump_->half_width();
    const double lo = std::max(a, -w);
    const double hi = std::min(b, w);
    for (int i = 0; lo < hi && i <= kSamples; ++i) probes.push_back(lo + (hi - lo) * i / kSamples);
    if (a < 0.0 && 0.0 < b) probes.push_back(0.0);
  }
  double best = -std::numeric_limits<double>::infinity();
  for (double y : probes) best = std::max(best, log_weight(y));
  return best;
}

double ScaleOracle::shifted_integral(double a, double b, double shift) const {
  double worst = -std::numeric_limits<double>::infinity();
  auto integrand = [&](double y) {
    const double e = log_weight(y) - shift;
    worst = std::max(worst, e);
    if (e > kMaxExponent) {
      throw std::overflow_error("scale oracle: exponent " + std::to_string(e) +
                                " overflows after shifting by " + std::to_string(shift));
    }
    return std::exp(e);
  };
  std::vector<double> breaks;
  if (bump_) breaks = {-bump_->half_width(), 0.0, bump_->half_width()};
  return integrate_piecewise(integrand, a, b, breaks, options_.outer_rel_tol).value;
}

double ScaleOracle::log_scale_increment(double y0, double y1) const {
  if (!(anchor_ <= y0 && y0 < y1)) {
    throw std::invalid_argument("log_scale_increment: requires anchor <= y0 < y1");
  }
  const double shift = max_log_weight(y0, y1);
  return shift + std::log(shifted_integral(y0, y1, shift));
}

double ScaleOracle::exit_prob(double x, double r) const {
  ExitQuery{anchor_, x, r}.validate();
  const double shift = max_log_weight(anchor_, r);
  const double left = shifted_integral(anchor_, x, shift);
  const double right = shifted_integral(x, r, shift);
  return std::clamp(left / (left + right), 0.0, 1.0);
}

double log_weight(const ScalarFn& drift, const ScalarFn& sigma, const std::optional<BumpSpec>& bump,
                  double l, double y, ScaleOptions options) {
  return ScaleOracle(drift, sigma, bump, l, options).log_weight(y);
}

double exit_prob_oracle(const ExitQuery& q, const ScalarFn& drift, const ScalarFn& sigma,
                        const std::optional<BumpSpec>& bump, ScaleOptions options) {
  q.validate();
  return ScaleOracle(drift, sigma, bump, q.l, options).exit_prob(q.x, q.r);
}

double limit_c(double l, double x, const ScalarFn& drift, const ScalarFn& sigma,
               ScaleOptions options) {
  if (!(x < 0.0)) throw std::invalid_argument("limit_c: requires x < 0");
  if (!(l < x)) throw std::invalid_argument("limit_c: requires l < x");
  // c_{l,x} is the exit-at-0 probability of the penalty-free diffusion on (l, 0).
  return ScaleOracle(drift, sigma, std::nullopt, l, options).exit_prob(x, 0.0);
}

double exit_prob_constant(double b, double sigma, const ExitQuery& q) {
  q.validate();
  if (b == 0.0) return (q.x - q.l) / (q.r - q.l);
  const double k = 2.0 * b / (sigma * sigma);
  return std::expm1(-k * (q.x - q.l)) / std::expm1(-k * (q.r - q.l));
}

}  // namespace sdelab
