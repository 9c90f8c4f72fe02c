#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "sdelab/models.hpp"
#include "sdelab/path.hpp"
#include "sdelab/solvers.hpp"

using namespace sdelab;

namespace {

constexpr double kPi = std::numbers::pi;

CoefficientField constant_field(double b, double s) {
  return scalar_field([b](double) { return b; }, [s](double) { return s; });
}

CoefficientField indicator_field() {
  return scalar_field([](double) { return 0.0; }, [](double x) { return x != 0.0 ? 1.0 : 0.0; });
}

SamplePath from_values(std::vector<double> v, double dt = 1.0) {
  SamplePath p(TimeGrid::on(dt * static_cast<double>(v.size() - 1), v.size() - 1), 1);
  p.states = std::move(v);
  return p;
}

}  // namespace

TEST(EulerMaruyama, ZeroCoefficientsGiveConstantPath) {
  const SamplePath p = euler_maruyama(constant_field(0, 0), 3.0, TimeGrid::on(1, 100), {1, 0});
  for (double x : p.states) EXPECT_EQ(x, 3.0);
}

TEST(EulerMaruyama, UnitDiffusionIsBrownianPath) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  for (std::uint64_t id = 0; id < 5; ++id) {
    const SamplePath em = euler_maruyama(constant_field(0, 1), 0.0, grid, {17, id});
    Stream g = derive_stream({17, id});
    const SamplePath bm = brownian_path(grid, g);
    EXPECT_EQ(em.states, bm.states);
  }
}

TEST(EulerMaruyama, LinearDecayOde) {
  const CoefficientField f = scalar_field([](double x) { return -x; }, [](double) { return 0.0; });
  const SamplePath p = euler_maruyama(f, 1.0, TimeGrid::on(1.0, 1000), {1, 0});
  EXPECT_NEAR(p.at(1000), std::exp(-1.0), 1e-2);
  // Euler gives (1 - dt)^n exactly.
  EXPECT_NEAR(p.at(1000), std::pow(1.0 - 1e-3, 1000), 1e-12);
}

TEST(EulerMaruyama, IndicatorAgreesWithShiftedBrownianUntilZero) {
  const TimeGrid grid = TimeGrid::on(1.0, 2000);
  for (std::uint64_t id = 0; id < 50; ++id) {
    const SamplePath em = euler_maruyama(indicator_field(), 0.7, grid, {23, id});
    Stream g = derive_stream({23, id});
    const SamplePath bm = brownian_path(grid, g, 0.7);
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      ASSERT_EQ(em.at(k), bm.at(k));
      if (em.at(k) == 0.0) break;
    }
  }
}

TEST(EulerMaruyama, AuxIsLeftEndpointIntegral) {
  CoefficientField f = constant_field(1.0, 0.0);
  f.aux_rate = [](double, std::span<const double> x) { return std::abs(x[0]); };
  const TimeGrid grid = TimeGrid::on(1.0, 10);
  const SamplePath p = euler_maruyama(f, 0.0, grid, {1, 0});
  // x_k = k dt, aux_N = sum_{k<N} k dt * dt
  double expect = 0.0;
  for (int k = 0; k < 10; ++k) expect += 0.1 * k * 0.1;
  EXPECT_NEAR(p.aux[10], expect, 1e-14);
}

TEST(FoldReflect, Examples) {
  EXPECT_EQ(fold_reflect(0.0, -kPi, kPi), 0.0);
  EXPECT_NEAR(fold_reflect(kPi + 0.3, -kPi, kPi), kPi - 0.3, 1e-12);
  EXPECT_NEAR(fold_reflect(2 * kPi + 0.1, -kPi, kPi), -0.1, 1e-12);
  EXPECT_NEAR(fold_reflect(-kPi - 0.2, -kPi, kPi), -kPi + 0.2, 1e-12);
}

TEST(FoldReflect, StaysInInterval) {
  Stream g = derive_stream({3, 0});
  for (int i = 0; i < 100000; ++i) {
    const double y = 40.0 * g.normal();
    const double f = fold_reflect(y, -1.0, 2.5);
    ASSERT_GE(f, -1.0);
    ASSERT_LE(f, 2.5);
  }
}

TEST(FoldReflect, MatchesIteratedReflection) {
  // Independent oracle: bounce off the walls one at a time.
  auto bounce = [](double y, double a, double b) {
    while (y < a || y > b) y = y < a ? 2 * a - y : 2 * b - y;
    return y;
  };
  Stream g = derive_stream({4, 0});
  for (int i = 0; i < 10000; ++i) {
    const double y = 10.0 * g.normal();
    ASSERT_NEAR(fold_reflect(y, -0.5, 1.0), bounce(y, -0.5, 1.0), 1e-9) << y;
  }
}

TEST(FirstHit, StartAtLevel) {
  Stream g = derive_stream({1, 0});
  const HitResult h = first_hit(from_values({0.0, 0.0, -0.5, 1.0}), 0.0, false, g);
  EXPECT_TRUE(h.hit);
  EXPECT_EQ(h.tau, 0.0);
  EXPECT_EQ(h.approach_side, -1);
  const HitResult c = first_hit(from_values({0.0, 0.0, 0.0}), 0.0, false, g);
  EXPECT_EQ(c.approach_side, 1);
}

TEST(FirstHit, LinearInterpolationMidpoint) {
  Stream g = derive_stream({1, 0});
  const HitResult h = first_hit(from_values({1.0, -1.0}), 0.0, false, g);
  EXPECT_TRUE(h.hit);
  EXPECT_DOUBLE_EQ(h.tau, 0.5);
  EXPECT_EQ(h.approach_side, 1);
  EXPECT_EQ(h.method, HitMethod::LinearInterp);
}

TEST(FirstHit, Censored) {
  Stream g = derive_stream({1, 0});
  const HitResult h = first_hit(from_values({1.0, 2.0, 3.0}), 0.0, false, g);
  EXPECT_FALSE(h.hit);
}

TEST(FirstHit, BridgeNeedsSigma) {
  Stream g = derive_stream({1, 0});
  EXPECT_THROW(first_hit(from_values({1.0, 2.0}), 0.0, true, g), std::invalid_argument);
}

TEST(FirstHit, BrownianHitProbability) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  const std::size_t n = 100000;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Stream g = derive_stream({31, i});
    Stream b = derive_stream({31, i}, channel::kBridge);
    hits += first_hit(brownian_path(grid, g, 1.0), 0.0, true, b).hit;
  }
  const double p = static_cast<double>(hits) / n;
  const double expected = std::erfc(1.0 / std::numbers::sqrt2);  // 2 Phi(-1)
  EXPECT_NEAR(p, expected, 3.0 * std::sqrt(expected * (1 - expected) / n));
}

TEST(FirstHit, BridgeNeverDelays) {
  const TimeGrid grid = TimeGrid::on(1.0, 200);
  for (std::size_t i = 0; i < 2000; ++i) {
    Stream g = derive_stream({37, i});
    const SamplePath p = brownian_path(grid, g, 0.5);
    Stream b1 = derive_stream({37, i}, channel::kBridge);
    Stream b2 = derive_stream({37, i}, channel::kBridge);
    const HitResult plain = first_hit(p, 0.0, false, b1);
    const HitResult bridged = first_hit(p, 0.0, true, b2);
    if (plain.hit) {
      ASSERT_TRUE(bridged.hit);
      ASSERT_LE(bridged.tau, plain.tau);
    }
  }
}

TEST(SolveStopped, StartOnLevelIsConstant) {
  const double x0[1] = {0.0};
  const StoppedSolution s =
      solve_stopped(constant_field(0, 1), x0, TimeGrid::on(1, 100), {1, 0}, StopRule::level_hit(0));
  ASSERT_TRUE(s.stop_index);
  EXPECT_EQ(*s.stop_index, 0u);
  for (double x : s.path.states) EXPECT_EQ(x, 0.0);
}

TEST(SolveStopped, BrownianStoppedAtZero) {
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  const double x0[1] = {1.0};
  std::size_t stopped = 0;
  for (std::uint64_t id = 0; id < 200; ++id) {
    const StoppedSolution s =
        solve_stopped(constant_field(0, 1), x0, grid, {41, id}, StopRule::level_hit(0));
    const SamplePath free = euler_maruyama(constant_field(0, 1), 1.0, grid, {41, id});
    const std::size_t stop = s.stop_index.value_or(grid.n_nodes());
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      ASSERT_GE(s.path.at(k), -1e-15);
      if (k < stop) ASSERT_EQ(s.path.at(k), free.at(k));
      else ASSERT_EQ(s.path.at(k), s.path.at(stop));
    }
    if (s.stop_index) {
      ++stopped;
      // Zero quadratic variation after the stop.
      double qv = 0.0;
      for (std::size_t k = stop; k + 1 < grid.n_nodes(); ++k) {
        qv += std::pow(s.path.at(k + 1) - s.path.at(k), 2);
      }
      EXPECT_EQ(qv, 0.0);
    }
  }
  EXPECT_GT(stopped, 0u);
}

TEST(PassthroughCircle, OnUnitCircleAndContinuous) {
  const TimeGrid grid = TimeGrid::on(10.0, 10000);
  std::size_t restarts = 0;
  for (std::uint64_t id = 0; id < 200; ++id) {
    const CirclePath c = passthrough_circle(grid, 0.5, {43, id});
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      ASSERT_NEAR(std::hypot(c.path.at(k, 0), c.path.at(k, 1)), 1.0, 1e-12);
    }
    Stream g = derive_stream({43, id});
    double max_inc = 0.0;
    for (double d : brownian_increments(grid, g)) max_inc = std::max(max_inc, std::abs(d));
    for (const BoundaryEvent& e : c.events) {
      if (!e.restart || e.node == 0) continue;
      ++restarts;
      const double jump = std::hypot(c.path.at(e.node, 0) - c.path.at(e.node - 1, 0),
                                     c.path.at(e.node, 1) - c.path.at(e.node - 1, 1));
      EXPECT_LT(jump, 3.0 * max_inc);
    }
  }
  EXPECT_GT(restarts, 0u);
}

TEST(ReflectedCircle, AngleStaysInRange) {
  const TimeGrid grid = TimeGrid::on(20.0, 2000);
  const CirclePath c = reflected_circle(grid, -3.0, {47, 0});
  for (double a : c.angle) {
    ASSERT_GE(a, -kPi);
    ASSERT_LE(a, kPi);
  }
  EXPECT_FALSE(c.events.empty());
}

// The bump model routes through the stiff-zone stepper: output nodes stay on
// the uniform grid, and the penalty keeps paths from crossing the origin.
TEST(StiffZone, PenaltyPreventsCrossing) {
  ModelSpec s;
  s.bump = BumpSpec::canonical(16);
  s.x0 = -0.3;
  const Model m = build_model(s);
  ASSERT_TRUE(m.field.stiff_zone);
  const TimeGrid grid = TimeGrid::on(2.0, 2000);
  std::size_t crossed = 0;
  std::size_t near = 0;
  for (std::uint64_t id = 0; id < 300; ++id) {
    const SamplePath p = simulate(m, grid, {53, id});
    for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
      ASSERT_TRUE(std::isfinite(p.at(k)));
      if (std::abs(p.at(k)) < 2.0 / 16) ++near;
      if (p.at(k) > 1.0 / 16) {
        ++crossed;
        break;
      }
    }
  }
  EXPECT_GT(near, 0u);  // the zone is actually visited
  EXPECT_LT(crossed, 3u);
}

TEST(StiffZone, CoarseNoiseUnchangedAwayFromZone) {
  // Far from the bump the penalized path is a Brownian path on the same seed.
  ModelSpec s;
  s.bump = BumpSpec::canonical(64);
  s.x0 = -5.0;
  const Model m = build_model(s);
  const TimeGrid grid = TimeGrid::on(0.5, 500);
  const SamplePath p = simulate(m, grid, {59, 0});
  Stream g = derive_stream({59, 0});
  const SamplePath bm = brownian_path(grid, g, -5.0);
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) ASSERT_EQ(p.at(k), bm.at(k));
}

TEST(Solvers, RejectsBadInput) {
  const double x0[2] = {0.0, 0.0};
  EXPECT_THROW(euler_maruyama(constant_field(0, 1), std::span<const double>(x0, 2),
                              TimeGrid::on(1, 10), {1, 0}),
               std::invalid_argument);
  EXPECT_THROW(passthrough_circle(TimeGrid::on(1, 10), 4.0, {1, 0}), std::invalid_argument);
}
