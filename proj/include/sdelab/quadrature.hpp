#pragma once

#include <functional>
#include <span>
#include <stdexcept>

namespace sdelab {

class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_(achieved) {}
  // Relative error estimate reached before giving up.
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;  // absolute error estimate
  long evaluations = 0;
};

// Adaptive Simpson with Richardson correction. The interval is first cut into
// 16 equal panels; each is bisected until |S_2 - S_1| <= 15 tol on its share of
// the absolute target rel_tol * |I|. Throws QuadratureError when a panel is
// still unresolved at `max_depth`.
QuadratureResult adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol, int max_depth = 50);

// Integral over [a, b] split at the given interior breakpoints (kinks of the
// integrand); breakpoints outside (a, b) are ignored. Reversed bounds give the
// negated integral.
QuadratureResult integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                                     std::span<const double> breaks, double rel_tol);

}  // namespace sdelab
