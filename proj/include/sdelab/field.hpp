#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>

namespace sdelab {

inline constexpr std::size_t kMaxDim = 2;
inline constexpr std::size_t kMaxDrivers = 2;

// Region [lo, hi] of a one-dimensional state space where the drift is stiff.
// Steps that start in it, end in it or touch it are subdivided until they are
// no longer than `max_step`.
struct StiffZone {
  double lo = 0.0;
  double hi = 0.0;
  double max_step = 0.0;
};

// Drift, diffusion loadings and optional running functional of an SDE
//
//   dX = drift(t, X, A) dt + L(t, X, A) dW,   dA = aux_rate(t, X) dt,  A_0 = 0,
//
// with W made of `n_drivers` independent Brownian motions and L a
// dim x n_drivers matrix written row-major into `out`.
struct CoefficientField {
  using Evaluator =
      std::function<void(double t, std::span<const double> x, double aux, std::span<double> out)>;

  std::size_t dim = 1;
  std::size_t n_drivers = 1;
  Evaluator drift;
  Evaluator diffusion;
  std::function<double(double t, std::span<const double> x)> aux_rate;
  std::optional<StiffZone> stiff_zone;

  bool has_aux() const { return static_cast<bool>(aux_rate); }
};

// One-dimensional time-homogeneous field with a single driver.
CoefficientField scalar_field(std::function<double(double)> drift,
                              std::function<double(double)> diffusion);

}  // namespace sdelab
