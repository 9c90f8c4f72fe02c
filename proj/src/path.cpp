#include "sdelab/path.hpp"

#include <cmath>
#include <string>

namespace sdelab {

TimeGrid::TimeGrid(double t_start, double t_end, std::size_t n_steps)
    : t_start_(t_start), t_end_(t_end), n_steps_(n_steps) {
  if (!std::isfinite(t_start) || !std::isfinite(t_end) || !(t_end > t_start)) {
    throw std::invalid_argument("TimeGrid: t_end must exceed t_start");
  }
  if (n_steps == 0) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
  dt_ = (t_end - t_start) / static_cast<double>(n_steps);
}

SamplePath::SamplePath(TimeGrid g, std::size_t d) : grid(g), dim(d) {
  if (d != 1 && d != 2) throw std::invalid_argument("SamplePath: dim must be 1 or 2");
  states.assign(grid.n_nodes() * dim, 0.0);
}

std::vector<double> SamplePath::component(std::size_t c) const {
  if (c >= dim) throw std::out_of_range("SamplePath::component: index " + std::to_string(c));
  std::vector<double> out(n_nodes());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = at(k, c);
  return out;
}

std::vector<double> brownian_increments(const TimeGrid& grid, Stream& gen) {
  const double scale = std::sqrt(grid.dt());
  std::vector<double> dw(grid.n_steps());
  for (double& w : dw) w = scale * gen.normal();
  return dw;
}

SamplePath brownian_path(const TimeGrid& grid, Stream& gen, double origin) {
  SamplePath path(grid, 1);
  const double scale = std::sqrt(grid.dt());
  path.at(0) = origin;
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    path.at(k + 1) = path.at(k) + scale * gen.normal();
  }
  path.sigma.assign(grid.n_nodes(), 1.0);
  return path;
}

}  // namespace sdelab
