#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sdelab/rng.hpp"

namespace sdelab {

// Uniform time grid; node k sits at t_start + k * dt for k = 0..n_steps.
class TimeGrid {
 public:
  TimeGrid(double t_start, double t_end, std::size_t n_steps);
  // Grid on [0, horizon].
  static TimeGrid on(double horizon, std::size_t n_steps) { return {0.0, horizon, n_steps}; }

  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_nodes() const { return n_steps_ + 1; }
  double dt() const { return dt_; }
  double time(std::size_t k) const { return t_start_ + static_cast<double>(k) * dt_; }
  double horizon() const { return t_end_ - t_start_; }

  TimeGrid with_steps(std::size_t n_steps) const { return {t_start_, t_end_, n_steps}; }

 private:
  double t_start_;
  double t_end_;
  std::size_t n_steps_;
  double dt_;
};

// Discretized trajectory. States are stored node-major: states[k * dim + c].
//
// `aux` holds a running path functional (e.g. the integral of |X|) when the
// producing field defines one. `sigma` holds the local diffusion magnitude at
// each node when the producer knows it; bridge-corrected hitting needs it.
struct SamplePath {
  SamplePath(TimeGrid grid, std::size_t dim);

  TimeGrid grid;
  std::size_t dim;
  std::vector<double> states;
  std::vector<double> aux;
  std::vector<double> sigma;

  std::size_t n_nodes() const { return grid.n_nodes(); }
  bool has_aux() const { return !aux.empty(); }
  bool has_sigma() const { return !sigma.empty(); }

  double& at(std::size_t k, std::size_t c = 0) { return states[k * dim + c]; }
  double at(std::size_t k, std::size_t c = 0) const { return states[k * dim + c]; }
  std::span<double> state(std::size_t k) { return {states.data() + k * dim, dim}; }
  std::span<const double> state(std::size_t k) const { return {states.data() + k * dim, dim}; }

  std::vector<double> component(std::size_t c) const;
};

// Standard normal increments scaled to N(0, dt); consumes exactly n_steps
// normal draws from `gen`.
std::vector<double> brownian_increments(const TimeGrid& grid, Stream& gen);

// Brownian path started at `origin` (0 by default), accumulated node by node
// so that origin + sum agrees bit-for-bit with an Euler recursion driven by
// the same increments.
SamplePath brownian_path(const TimeGrid& grid, Stream& gen, double origin = 0.0);

}  // namespace sdelab
