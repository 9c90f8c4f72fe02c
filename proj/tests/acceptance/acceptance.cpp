// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// all of them pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sdelab/experiments.hpp"
#include "sdelab/scale.hpp"
#include "sdelab/stats.hpp"

#ifndef SDELAB_CLI_PATH
#error "SDELAB_CLI_PATH must point at the sdelab executable"
#endif

using namespace sdelab;

namespace {

// Pinned tolerances.
constexpr double kClosedFormTol = 1e-6;
constexpr double kClosedFormSeconds = 1.0;
constexpr double kMatrixDiscretization = 1e-4;
constexpr double kPenaltyBound64 = 0.05;
constexpr double kGoldenRelTol = 1e-6;
constexpr double kLimitCZeroDriftTol = 1e-8;
constexpr double kLimitCDriftTol = 1e-6;
constexpr double kStdErrors = 3.0;
constexpr double kRejectionTarget = 0.05;
constexpr double kRejectionSlack = 0.05;
constexpr double kCrossingMax = 0.02;
constexpr double kKsPMax = 1e-6;
constexpr double kSideAgreementMin = 0.98;
constexpr double kQvFactor = 0.5;
constexpr double kQvFractionMin = 0.99;

// exit_prob_oracle at (-1, -0.3, 1), b = 0, sigma = 1, canonical bump.
// Frozen at first build; tests/golden/penalty_limit.csv holds the same values.
struct Golden {
  int n;
  double value;
};
constexpr Golden kPenaltyGolden[] = {
    {1, 0.234324638},     {2, 0.0571679679},    {4, 0.00326076112},  {8, 5.22270646e-06},
    {16, 4.55063988e-12}, {32, 1.20840964e-24}, {64, 2.9976887e-50},
};
constexpr int kThresholdN = 4;  // first n with value below 1e-2

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string num(double v) { return fmt("%.6g", v); }

ScalarFn constant(double c) {
  return [c](double) { return c; };
}

const Cell& cell(const ExperimentResult& r, std::size_t row, const std::string& column) {
  const auto& cols = r.table.columns;
  const auto it = std::find(cols.begin(), cols.end(), column);
  if (it == cols.end()) throw std::logic_error("no column " + column);
  return r.table.rows.at(row)[static_cast<std::size_t>(it - cols.begin())];
}

double dcell(const ExperimentResult& r, std::size_t row, const std::string& column) {
  const Cell& c = cell(r, row, column);
  if (const auto* d = std::get_if<double>(&c)) return *d;
  return static_cast<double>(std::get<std::int64_t>(c));
}

std::string scell(const ExperimentResult& r, std::size_t row, const std::string& column) {
  return std::get<std::string>(cell(r, row, column));
}

ExperimentResult run(const std::string& name, std::size_t paths, std::size_t steps, double horizon,
                     std::map<std::string, std::vector<std::string>> params = {},
                     std::uint64_t seed = 1) {
  ExperimentConfig cfg;
  cfg.experiment = name;
  cfg.paths = paths;
  cfg.steps = steps;
  cfg.horizon = horizon;
  cfg.seed = seed;
  cfg.params = std::move(params);
  return run_experiment(cfg);
}

Outcome criterion1() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (double b : {0.0, 1.0, -1.0}) {
    for (double s : {1.0, 2.0}) {
      for (double x : {-0.5, 0.0, 0.5}) {
        const ExitQuery q{-1, x, 1};
        const double oracle = exit_prob_oracle(q, constant(b), constant(s), std::nullopt);
        double exact = (x + 1) / 2;
        if (b != 0.0) exact = (1 - std::exp(-2 * b * (x + 1) / (s * s))) / (1 - std::exp(-4 * b / (s * s)));
        worst = std::max(worst, std::abs(oracle - exact));
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= kClosedFormTol && secs < kClosedFormSeconds,
          "max |oracle - closed form| = " + num(worst) + ", " + num(secs) + " s"};
}

Outcome criterion2() {
  const ExperimentResult r = run("exit-matrix", 100000, 10000, 10.0, {{"bridge", {"true"}}});
  std::size_t failed = 0;
  double worst = 0.0;
  std::string worst_case;
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    const double diff = dcell(r, i, "abs_diff");
    const double tol = kStdErrors * (dcell(r, i, "std_error") + kMatrixDiscretization);
    if (!(diff < tol)) ++failed;
    if (diff / tol > worst) {
      worst = diff / tol;
      worst_case = scell(r, i, "case");
    }
  }
  return {failed == 0 && r.table.rows.size() == 12,
          std::to_string(r.table.rows.size() - failed) + "/" + std::to_string(r.table.rows.size()) +
              " cases within 3(se+1e-4); worst " + worst_case + " at " + num(worst) + " of tolerance"};
}

Outcome criterion3() {
  bool ok = true;
  double prev = 2.0;
  double worst_rel = 0.0;
  int threshold = 0;
  for (const Golden& g : kPenaltyGolden) {
    const double p = exit_prob_oracle({-1, -0.3, 1}, constant(0), constant(1), BumpSpec::canonical(g.n));
    ok = ok && p < prev;
    prev = p;
    worst_rel = std::max(worst_rel, std::abs(p - g.value) / g.value);
    if (!threshold && p < 1e-2) threshold = g.n;
  }
  ok = ok && prev < kPenaltyBound64 && worst_rel <= kGoldenRelTol && threshold == kThresholdN;
  return {ok, "strictly decreasing, n=64 value " + num(prev) + ", max rel. deviation from golden " +
                  num(worst_rel) + ", below 1e-2 from n=" + std::to_string(threshold)};
}

Outcome criterion4() {
  const double a = limit_c(-1, -0.5, constant(0), constant(1));
  const double b = limit_c(-1, -0.5, constant(1), constant(1));
  const double eb = (1 - std::exp(-1.0)) / (1 - std::exp(-2.0));
  const double da = std::abs(a - 0.5), db = std::abs(b - eb);
  return {da <= kLimitCZeroDriftTol && db <= kLimitCDriftTol,
          "|c - 0.5| = " + num(da) + ", |c - (1-e^-1)/(1-e^-2)| = " + num(db)};
}

Outcome criterion5() {
  ModelSpec bm;
  bm.x0 = 0.0;
  const TimeGrid grid = TimeGrid::on(1.0, 1000);
  const EstimateCI e = occupation_fraction(bm, 0.1, grid, 10000, 5);
  const double oracle = brownian_occupation_expectation(0.1, 1.0);
  const bool bm_ok = std::abs(e.value - oracle) <= kStdErrors * e.std_error;

  const ExperimentResult r = run("occupation", 10000, 1000, 1.0,
                                 {{"n", {"64"}}, {"x0", {"-0.3"}}, {"eps_list", {"0.2", "0.1", "0.05", "0.025"}}});
  bool decreasing = true;
  std::string values;
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    if (i && !(dcell(r, i, "occupation") < dcell(r, i - 1, "occupation"))) decreasing = false;
    values += (i ? " " : "") + num(dcell(r, i, "occupation"));
  }
  return {bm_ok && decreasing, "BM " + num(e.value) + " vs oracle " + num(oracle) + " (se " +
                                   num(e.std_error) + "); penalized n=64: " + values};
}

Outcome criterion6() {
  const ExperimentResult r = run("branching", 10000, 10000, 1.0, {{"xi", {"1"}}});
  const double mismatch = dcell(r, 0, "prehit_mismatch_paths");
  const double frac = dcell(r, 0, "differ_fraction");
  const double expected = std::erfc(1.0 / std::numbers::sqrt2);
  const double se = std::sqrt(expected * (1 - expected) / 10000.0);
  const bool ok = mismatch == 0 && std::abs(frac - expected) <= kStdErrors * se;
  return {ok, "pre-hit mismatches " + num(mismatch) + ", differ fraction " + num(frac) + " vs " +
                  num(expected)};
}

Outcome criterion7() {
  const ExperimentResult r = run("convergence-ladder", 10000, 1000, 1.0);
  bool ok = true;
  std::string capped, ratio;
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    ok = ok && scell(r, i, "verdict") == "pass";
    if (scell(r, i, "family") == "sqrt-capped") capped += (capped.empty() ? "" : " ") + num(dcell(r, i, "distance"));
    else if (std::holds_alternative<double>(cell(r, i, "ratio"))) ratio = num(dcell(r, i, "ratio"));
  }
  return {ok, "sqrt-capped distances " + capped + "; noise ratio " + ratio};
}

Outcome criterion8() {
  const ExperimentResult bm = run("strong-markov", 2000, 200, 2.0,
                                  {{"penalty", {"none"}}, {"x0", {"0.5"}}, {"lag", {"0.1"}}, {"runs", {"200"}}}, 2);
  const std::size_t last = bm.table.rows.size() - 1;
  const double rate = dcell(bm, last, "rejection_rate");
  std::size_t inconclusive = 0;
  for (std::size_t i = 0; i < last; ++i) inconclusive += scell(bm, i, "verdict") == "inconclusive";
  const bool bm_ok = std::abs(rate - kRejectionTarget) <= kRejectionSlack && inconclusive == 0;

  const ExperimentResult pen = run("strong-markov", 2000, 2000, 2.0, {{"n", {"64"}}, {"x0", {"0.3"}}, {"lag", {"0.1"}}}, 2);
  const double crossing = dcell(pen, 0, "crossing");
  const double ks_p = dcell(pen, 0, "ks_p");
  const bool pen_ok = crossing < kCrossingMax && ks_p < kKsPMax && scell(pen, 0, "verdict") == "pass";

  const ExperimentResult circ = run("strong-markov", 2000, 2000, 2.0, {{"model", {"circle"}}, {"x0", {"0.5"}}, {"lag", {"0.1"}}}, 2);
  const double agree = 1.0 - dcell(circ, 0, "crossing");
  const bool circ_ok = agree > kSideAgreementMin && scell(circ, 0, "verdict") == "pass";
  return {bm_ok && pen_ok && circ_ok, "BM rejection rate " + num(rate) + " over 200 runs; penalized crossing " +
                                          num(crossing) + ", KS p " + num(ks_p) + "; circle agreement " + num(agree)};
}

Outcome criterion9() {
  const ExperimentResult r = run("shifted-decomposition", 10000, 1000, 1.0,
                                 {{"x", {"1"}}, {"split", {"2"}}, {"qv_factor", {num(kQvFactor)}}});
  const double free_frac = dcell(r, 0, "fraction");
  const double stopped_frac = dcell(r, 1, "fraction");
  const double hits = dcell(r, 0, "hitting_paths");
  const bool ok = hits > 0 && free_frac > kQvFractionMin && stopped_frac == 1.0;
  return {ok, num(hits) + " hitting paths; (0,1): " + num(free_frac) + " with QV > 0.5(T-tau); (2,-1): " +
                  num(stopped_frac) + " with zero QV"};
}

Outcome criterion10() {
  const ExperimentResult r = run("path-dependent", 1000, 1000, 2.0);
  const double violations = dcell(r, 0, "violations");
  return {violations == 0, num(violations) + " violations, max |aux - Y| = " + num(dcell(r, 0, "max_abs_diff"))};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion11() {
  const auto dir = std::filesystem::temp_directory_path() / "sdelab_acceptance";
  std::filesystem::create_directories(dir);
  std::size_t identical = 0;
  std::string differing;
  for (const CatalogEntry& e : catalog()) {
    const auto cfg = dir / (e.name + ".toml");
    std::ofstream(cfg) << "experiment = \"" << e.name << "\"\nseed = 2024\n";
    std::string outs[2];
    const int threads[2] = {1, 8};
    for (int i = 0; i < 2; ++i) {
      for (const char* format : {"csv", "json"}) {
        const auto out = dir / (e.name + "_" + std::to_string(threads[i]) + "." + format);
        std::filesystem::remove(out);
        const std::string cmd = std::string("\"") + SDELAB_CLI_PATH + "\" --config \"" + cfg.string() +
                                "\" --paths 300 --steps 600 --threads " + std::to_string(threads[i]) +
                                " --format " + format + " --out \"" + out.string() + "\" 2>/dev/null";
        // Exit status 2 (a failed verdict at this small size) still writes output.
        const int rc = std::system(cmd.c_str());
        if (rc == -1) return {false, "could not start " + std::string(SDELAB_CLI_PATH)};
        outs[i] += slurp(out);
      }
    }
    if (!outs[0].empty() && outs[0] == outs[1]) ++identical;
    else differing += " " + e.name;
  }
  return {identical == catalog().size(),
          std::to_string(identical) + "/" + std::to_string(catalog().size()) +
              " experiments byte-identical at 1 and 8 threads (csv and json)" +
              (differing.empty() ? "" : "; differing:" + differing)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"exit oracle vs closed form", criterion1},
      {"MC vs oracle matrix", criterion2},
      {"penalty limit", criterion3},
      {"limiting constant c", criterion4},
      {"occupation nullity", criterion5},
      {"non-uniqueness branching", criterion6},
      {"two limits, two solutions", criterion7},
      {"strong-Markov probe", criterion8},
      {"shifted decomposition", criterion9},
      {"path-dependent equivalence", criterion10},
      {"determinism", criterion11},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << "criterion " << (i + 1) << " [" << criteria[i].first << "]: " << (o.pass ? "PASS" : "FAIL")
              << " - " << o.detail << " (" << fmt("%.1f", secs) << " s)" << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
