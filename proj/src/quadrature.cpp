#include "sdelab/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sdelab {

namespace {

struct Simpson {
  const std::function<double(double)>& f;
  int max_depth;
  long evaluations = 0;
  double error = 0.0;
  bool failed = false;

  double eval(double x) {
    ++evaluations;
    return f(x);
  }

  double recurse(double a, double b, double fa, double fm, double fb, double whole, double tol,
                 int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = eval(lm);
    const double frm = eval(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (std::abs(delta) <= 15.0 * tol || !std::isfinite(delta)) {
      error += std::abs(delta) / 15.0;
      return left + right + delta / 15.0;
    }
    if (depth >= max_depth) {
      failed = true;
      error += std::abs(delta) / 15.0;
      return left + right + delta / 15.0;
    }
    return recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1) +
           recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1);
  }
};

}  // namespace

QuadratureResult adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                                  double rel_tol, int max_depth) {
  QuadratureResult out;
  if (a == b) return out;
  if (a > b) {
    out = adaptive_simpson(f, b, a, rel_tol, max_depth);
    out.value = -out.value;
    return out;
  }
  constexpr int kPanels = 16;
  const double h = (b - a) / kPanels;
  std::vector<double> xs(2 * kPanels + 1);
  std::vector<double> fs(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = i + 1 == xs.size() ? b : a + 0.5 * h * static_cast<double>(i);
    fs[i] = f(xs[i]);
  }
  std::vector<double> coarse(kPanels);
  double total = 0.0;
  for (int p = 0; p < kPanels; ++p) {
    coarse[p] = (xs[2 * p + 2] - xs[2 * p]) / 6.0 * (fs[2 * p] + 4.0 * fs[2 * p + 1] + fs[2 * p + 2]);
    total += std::abs(coarse[p]);
  }
  const double target = rel_tol * std::max(total, 1e-300);

  Simpson s{f, max_depth};
  s.evaluations = static_cast<long>(xs.size());
  for (int p = 0; p < kPanels; ++p) {
    out.value += s.recurse(xs[2 * p], xs[2 * p + 2], fs[2 * p], fs[2 * p + 1], fs[2 * p + 2],
                           coarse[p], target / kPanels, 0);
  }
  out.error = s.error;
  out.evaluations = s.evaluations;
  const double achieved = out.error / std::max(std::abs(out.value), 1e-300);
  if (!std::isfinite(out.value)) {
    throw QuadratureError("adaptive_simpson: non-finite integrand on [" + std::to_string(a) + ", " +
                              std::to_string(b) + "]",
                          achieved);
  }
  if (s.failed && achieved > rel_tol) {
    throw QuadratureError("adaptive_simpson: no convergence at depth " + std::to_string(max_depth) +
                              ", achieved relative error " + std::to_string(achieved),
                          achieved);
  }
  return out;
}

QuadratureResult integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                                     std::span<const double> breaks, double rel_tol) {
  if (a > b) {
    QuadratureResult r = integrate_piecewise(f, b, a, breaks, rel_tol);
    r.value = -r.value;
    return r;
  }
  std::vector<double> cuts{a};
  for (double c : breaks) {
    if (c > a && c < b) cuts.push_back(c);
  }
  std::sort(cuts.begin() + 1, cuts.end());
  cuts.push_back(b);
  QuadratureResult total;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i + 1] <= cuts[i]) continue;
    const QuadratureResult r = adaptive_simpson(f, cuts[i], cuts[i + 1], rel_tol);
    total.value += r.value;
    total.error += r.error;
    total.evaluations += r.evaluations;
  }
  return total;
}

}  // namespace sdelab
