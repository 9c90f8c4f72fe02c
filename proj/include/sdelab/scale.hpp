#pragma once

#include <functional>
#include <optional>
#include <stdexcept>

namespace sdelab {

using ScalarFn = std::function<double(double)>;

// Penalty bump phi_n(x) = n phi(n x) built from a C^1 base bump supported on
// [-1, 1], non-decreasing on [-1, 0], non-increasing on [0, 1], unit mass.
class BumpSpec {
 public:
  enum class Shape {
    Quartic,  // (15/16) (1 - u^2)^2, the canonical choice
    Sextic,   // (35/32) (1 - u^2)^3
  };

  BumpSpec(Shape shape, int n);
  static BumpSpec canonical(int n) { return {Shape::Quartic, n}; }

  Shape shape() const { return shape_; }
  int n() const { return n_; }
  double half_width() const { return 1.0 / n_; }

  double base(double u) const;
  double base_derivative(double u) const;
  double phi(double x) const { return n_ * base(n_ * x); }
  double dphi(double x) const { return static_cast<double>(n_) * n_ * base_derivative(n_ * x); }
  // sup |phi_n'|
  double max_slope() const { return static_cast<double>(n_) * n_ * max_base_slope_; }

 private:
  Shape shape_;
  int n_;
  double max_base_slope_;
};

struct ExitQuery {
  double l = -1.0;
  double x = 0.0;
  double r = 1.0;
  void validate() const;
};

struct ScaleOptions {
  double inner_rel_tol = 1e-8;
  double outer_rel_tol = 1e-8;
};

// Scale density w(y) = exp(-int_l^y 2 (b(z) - phi_n'(z)) / sigma(z)^2 dz) for
// dX = sigma dB + (b - phi_n') dt, anchored at l.
//
// All integrals of w are taken after dividing by exp(max log w) over the
// query window, so the factor that diverges with n cancels in every ratio.
class ScaleOracle {
 public:
  ScaleOracle(ScalarFn drift, ScalarFn sigma, std::optional<BumpSpec> bump, double anchor,
              ScaleOptions options = {});

  double anchor() const { return anchor_; }

  // -I(y): the exponent of the scale density at y.
  double log_weight(double y) const;

  // log of s(y1) - s(y0) for anchor <= y0 < y1, without overflow.
  double log_scale_increment(double y0, double y1) const;

  // P(exit through r before l | start at x) for anchor == l.
  double exit_prob(double x, double r) const;

 private:
  double shifted_integral(double a, double b, double shift) const;
  double max_log_weight(double a, double b) const;

  ScalarFn drift_;
  ScalarFn sigma_;
  std::optional<BumpSpec> bump_;
  double anchor_;
  ScaleOptions options_;
};

double log_weight(const ScalarFn& drift, const ScalarFn& sigma, const std::optional<BumpSpec>& bump,
                  double l, double y, ScaleOptions options = {});

double exit_prob_oracle(const ExitQuery& q, const ScalarFn& drift, const ScalarFn& sigma,
                        const std::optional<BumpSpec>& bump, ScaleOptions options = {});

// Penalty-free limit c_{l,x} = int_l^x w / int_l^0 w for l < x < 0.
double limit_c(double l, double x, const ScalarFn& drift, const ScalarFn& sigma,
               ScaleOptions options = {});

// Closed form for constant b and sigma without penalty.
double exit_prob_constant(double b, double sigma, const ExitQuery& q);

}  // namespace sdelab
