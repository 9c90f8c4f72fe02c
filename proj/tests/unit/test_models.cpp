#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sdelab/models.hpp"

using namespace sdelab;

namespace {

double diffusion_at(const Model& m, double x, double aux = 0.0) {
  double state[2] = {x, 0.0};
  double out[4] = {};
  m.field.diffusion(0.0, std::span<const double>(state, m.field.dim), aux,
                    std::span<double>(out, m.field.dim * m.field.n_drivers));
  return out[0];
}

Model make(ModelTag tag, double x0 = 0.0, double eps = 0.1) {
  ModelSpec s;
  s.tag = tag;
  s.x0 = x0;
  s.eps = eps;
  return build_model(s);
}

}  // namespace

TEST(BuildModel, DegenerateIndicatorCoefficient) {
  const Model m = make(ModelTag::DegenerateIndicator);
  EXPECT_EQ(diffusion_at(m, 0.0), 0.0);
  EXPECT_EQ(diffusion_at(m, 0.1), 1.0);
}

TEST(BuildModel, SqrtCappedCoefficient) {
  const Model m = make(ModelTag::SqrtCappedApprox, 1.0, 0.1);
  EXPECT_DOUBLE_EQ(diffusion_at(m, 1.0), 1.0);
  EXPECT_NEAR(diffusion_at(m, 0.0001), 0.1, 1e-15);
  EXPECT_NEAR(diffusion_at(m, -0.0004), 0.2, 1e-15);
}

TEST(BuildModel, PathDependentIndicatorsAdd) {
  const Model m = make(ModelTag::PathDependent, 0.5);
  EXPECT_EQ(diffusion_at(m, 0.0, 1.5), 0.0);
  EXPECT_EQ(diffusion_at(m, 0.3, 1.5), 1.0);
  EXPECT_EQ(diffusion_at(m, 0.0, 0.5), 1.0);
  EXPECT_EQ(diffusion_at(m, 0.3, 0.5), 2.0);
}

TEST(BuildModel, PenalizedDriftIsMinusBumpSlope) {
  ModelSpec s;
  s.bump = BumpSpec::canonical(4);
  s.drift = 0.5;
  const Model m = build_model(s);
  for (double x : {-0.3, -0.1, 0.0, 0.2}) {
    double state[1] = {x};
    double out[1];
    m.field.drift(0.0, state, 0.0, out);
    EXPECT_DOUBLE_EQ(out[0], 0.5 - s.bump->dphi(x));
  }
  EXPECT_DOUBLE_EQ(m.contact_radius, 0.5);
}

TEST(ModelSpec, Validation) {
  ModelSpec s;
  s.tag = ModelTag::SqrtCappedApprox;
  s.eps = 0.0;
  EXPECT_THROW(s.validate(), ModelError);
  s.eps = 0.1;
  EXPECT_NO_THROW(s.validate());
  ModelSpec t;
  t.sigma = -1.0;
  try {
    t.validate();
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_EQ(e.field(), "sigma");
  }
}

TEST(ModelSpec, ConfigRoundTrip) {
  ModelSpec s;
  s.tag = ModelTag::PenalizedSDE;
  s.x0 = -0.3;
  s.drift = 1.25;
  s.drift_slope = -0.5;
  s.sigma = 2.0;
  s.bump = BumpSpec(BumpSpec::Shape::Sextic, 16);
  const ModelSpec r = ModelSpec::from_config(s.to_config());
  EXPECT_EQ(r.tag, s.tag);
  EXPECT_EQ(r.x0, s.x0);
  EXPECT_EQ(r.drift, s.drift);
  EXPECT_EQ(r.drift_slope, s.drift_slope);
  EXPECT_EQ(r.sigma, s.sigma);
  ASSERT_TRUE(r.bump);
  EXPECT_EQ(r.bump->n(), 16);
  EXPECT_EQ(r.bump->shape(), BumpSpec::Shape::Sextic);
  EXPECT_THROW(ModelSpec::from_config({{"model", "nonsense"}}), ModelError);
  EXPECT_FALSE(ModelSpec::from_config({{"model", "penalized"}, {"penalty", "none"}, {"n", "8"}}).bump);
  EXPECT_TRUE(ModelSpec::from_config({{"model", "penalized"}, {"n", "8"}}).bump);
}

TEST(ReferenceSolutions, ZeroStartIsFrozen) {
  Stream g = derive_stream({1, 0});
  const SamplePath driver = brownian_path(TimeGrid::on(1, 100), g);
  const ReferencePair r = reference_solutions(0.0, driver);
  for (double x : r.stopped.states) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(r.freeze_index, 0u);
}

TEST(ReferenceSolutions, AgreeBeforeFreeze) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  for (std::uint64_t id = 0; id < 500; ++id) {
    Stream g = derive_stream({2, id});
    const ReferencePair r = reference_solutions(0.3, brownian_path(grid, g));
    const std::size_t stop = r.freeze_index.value_or(grid.n_nodes());
    for (std::size_t k = 0; k < stop; ++k) ASSERT_EQ(r.full.at(k), r.stopped.at(k));
    for (std::size_t k = stop; k < grid.n_nodes(); ++k) ASSERT_EQ(r.stopped.at(k), 0.0);
  }
}

TEST(ReferenceSolutions, DifferFractionMatchesReflectionPrinciple) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  const std::size_t n = 10000;
  std::size_t differ = 0;
  for (std::size_t id = 0; id < n; ++id) {
    Stream g = derive_stream({3, id});
    const ReferencePair r = reference_solutions(1.0, brownian_path(grid, g));
    differ += r.full.at(1000) != r.stopped.at(1000);
  }
  const double p = static_cast<double>(differ) / n;
  const double expected = std::erfc(1.0 / std::sqrt(2.0));
  // Grid detection misses some crossings; allow the O(sqrt(dt)) deficit.
  EXPECT_NEAR(p, expected, 3.0 * std::sqrt(expected * (1 - expected) / n) + 0.6 * std::sqrt(1e-3));
}

TEST(ShiftedSolve, LowerRegime) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  const ShiftedPair p = shifted_solve(0.0, 5.0, grid, {4, 0}, ShiftedVariant::exact_solution());
  Stream g = derive_stream({4, 0});
  const SamplePath b = brownian_path(grid, g, 5.0);
  double qv = 0.0;
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
    EXPECT_EQ(p.y1.at(k), 0.0);
    EXPECT_NEAR(p.sum().at(k), b.at(k), 1e-12);
    if (k) qv += std::pow(p.sum().at(k) - p.sum().at(k - 1), 2);
  }
  EXPECT_NEAR(qv, 1.0, 5.0 * std::sqrt(2.0 / 1000));
  EXPECT_FALSE(p.freeze_index);
}

TEST(ShiftedSolve, UpperRegimeFreezes) {
  const TimeGrid grid = TimeGrid::on(20.0, 20000);
  std::size_t frozen = 0;
  for (std::uint64_t id = 0; id < 50; ++id) {
    const ShiftedPair p = shifted_solve(2.0, 3.0, grid, {5, id}, ShiftedVariant::exact_solution());
    const SamplePath s = p.sum();
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) ASSERT_EQ(p.y2.at(k), 3.0);
    if (!p.freeze_index) continue;
    ++frozen;
    for (std::size_t k = *p.freeze_index; k < grid.n_nodes(); ++k) ASSERT_EQ(s.at(k), s.at(*p.freeze_index));
  }
  EXPECT_GT(frozen, 0u);
}

TEST(ShiftedSolve, StartAtZeroSumStaysZero) {
  const ShiftedPair p =
      shifted_solve(2.0, -2.0, TimeGrid::on(1.0, 100), {6, 0}, ShiftedVariant::exact_solution());
  for (double x : p.sum().states) EXPECT_EQ(x, 0.0);
}

TEST(ShiftedSolve, DecompositionsAgreeBeforeHit) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  for (std::uint64_t id = 0; id < 200; ++id) {
    const SamplePath a = shifted_solve(0.0, 1.0, grid, {7, id}, ShiftedVariant::exact_solution()).sum();
    const ShiftedPair bp = shifted_solve(2.0, -1.0, grid, {7, id}, ShiftedVariant::exact_solution());
    const SamplePath b = bp.sum();
    const std::size_t stop = bp.freeze_index.value_or(grid.n_nodes());
    for (std::size_t k = 0; k < stop; ++k) ASSERT_NEAR(a.at(k), b.at(k), 1e-12);
  }
}

TEST(ShiftedSolve, ApproximationRuns) {
  const ShiftedPair p =
      shifted_solve(0.5, 0.5, TimeGrid::on(1.0, 500), {8, 0}, ShiftedVariant::approx(0.05));
  for (double x : p.sum().states) EXPECT_TRUE(std::isfinite(x));
}

TEST(PathDependent, TwoDimMatchesAux) {
  ModelSpec one;
  one.tag = ModelTag::PathDependent;
  one.x0 = 0.5;
  ModelSpec two = one;
  two.tag = ModelTag::TwoDimPathDependent;
  const TimeGrid grid = TimeGrid::on(2.0, 1000);
  for (std::uint64_t id = 0; id < 100; ++id) {
    const SamplePath a = simulate(build_model(one), grid, {9, id});
    const SamplePath b = simulate(build_model(two), grid, {9, id});
    double max_x = 0.0;
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) max_x = std::max(max_x, std::abs(a.at(k)));
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      ASSERT_LE(std::abs(a.aux[k] - b.at(k, 1)), 2.0 * grid.dt() * 2.0 * max_x);
      ASSERT_EQ(a.at(k), b.at(k, 0));
    }
  }
}

TEST(PathDependent, DoubleSpeedBeforeThreshold) {
  // While aux < 1 and X != 0 the diffusion is 2, so X = xi + 2 B exactly.
  ModelSpec s;
  s.tag = ModelTag::PathDependent;
  s.x0 = 3.0;
  const TimeGrid grid = TimeGrid::on(0.1, 100);
  const SamplePath p = simulate(build_model(s), grid, {10, 0});
  Stream g = derive_stream({10, 0});
  const SamplePath b = brownian_path(grid, g);
  for (std::size_t k = 0; k < grid.n_nodes() && p.aux[k] < 1.0; ++k) {
    EXPECT_NEAR(p.at(k), 3.0 + 2.0 * b.at(k), 1e-12);
  }
}

TEST(ReflectedBM, FoldedIntoInterval) {
  ModelSpec s;
  s.tag = ModelTag::ReflectedBM;
  s.x0 = 2.0;
  const SamplePath p = simulate(build_model(s), TimeGrid::on(50.0, 5000), {11, 0});
  for (double x : p.states) {
    ASSERT_GE(x, s.lo);
    ASSERT_LE(x, s.hi);
  }
}

TEST(SqrtCapped, AbsorbedAtZero) {
  ModelSpec s;
  s.tag = ModelTag::SqrtCappedApprox;
  s.x0 = 0.2;
  s.eps = 0.1;
  const Model m = build_model(s);
  ASSERT_TRUE(m.stop);
  const SamplePath p = simulate(m, TimeGrid::on(5.0, 5000), {12, 0});
  bool zero = false;
  for (double x : p.states) {
    if (zero) ASSERT_EQ(x, 0.0);
    zero = zero || x == 0.0;
  }
}
