#include <doctest.h>

#include <cmath>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/dynutil.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"

using namespace dynbsde;

namespace {

LinearUtilityCoeffs sample_coeffs() {
  const double al[2][2] = {{0.3, -0.2}, {0.5, 0.1}};
  const double be[2][2] = {{0.4, 0.7}, {-0.6, 0.2}};
  return LinearUtilityCoeffs::constant(al, be, 0.5, 1.0);
}

}  // namespace

TEST_CASE("ratio drift and diffusion against a direct transcription") {
  const auto c = sample_coeffs();
  const double a11 = 0.3, a12 = -0.2, a21 = 0.5, a22 = 0.1;
  const double b11 = 0.4, b12 = 0.7, b21 = -0.6, b22 = 0.2;
  for (double x : {-1.5, 0.0, 0.8}) {
    const double d1 = b12 * b12 * x * x * x - (a12 + b12 * (b11 - b22) - b12 * b22) * x * x +
                      (a11 - a22 - b22 * (b11 - b22) - b12 * b21) * x + (a21 - b21 * b22);
    const double s1 = -b12 * x * x + (b11 - b22) * x + b21;
    CHECK(riccati_drift(c, 1, 0, 0, x) == doctest::Approx(d1).epsilon(1e-14));
    CHECK(riccati_vol(c, 1, 0, 0, x) == doctest::Approx(s1).epsilon(1e-14));
    // regime 2 swaps the indices 1 and 2
    const double d2 = b21 * b21 * x * x * x - (a21 + b21 * (b22 - b11) - b21 * b11) * x * x +
                      (a22 - a11 - b11 * (b22 - b11) - b21 * b12) * x + (a12 - b12 * b11);
    const double s2 = -b21 * x * x + (b22 - b11) * x + b12;
    CHECK(riccati_drift(c, 2, 0, 0, x) == doctest::Approx(d2).epsilon(1e-14));
    CHECK(riccati_vol(c, 2, 0, 0, x) == doctest::Approx(s2).epsilon(1e-14));
  }
}

TEST_CASE("switching start and inversion keep the weights continuous") {
  auto c = sample_coeffs();
  auto s = switching_start(c);
  CHECK(s.regime == 1);
  CHECK(s.ahat == doctest::Approx(0.5));
  c.a1 = 3.0;
  CHECK(switching_start(c).regime == 2);
  c.a1 = c.a2 = 0.0;
  CHECK_THROWS_AS(switching_start(c), DomainError);

  // pure drift 10: one step of 0.2 takes Ahat from 1 to 3
  const double al[2][2] = {{0.0, 0.0}, {10.0, 0.0}};
  const double be[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  const auto d = LinearUtilityCoeffs::constant(al, be, 1.0, 1.0);
  auto st = switching_start(d);
  double pre = 0;
  const bool sw = switching_step(d, st, 0.0, 0.0, 0.2, 0.0, false, &pre);
  CHECK(sw);
  CHECK(pre == doctest::Approx(3.0));
  CHECK(st.regime == 2);
  CHECK(st.ahat == doctest::Approx(1 / 3.0));
  CHECK(st.A1 == doctest::Approx(3.0));
  CHECK(st.A2 == doctest::Approx(1.0));
  auto st2 = switching_start(d);
  CHECK_FALSE(switching_step(d, st2, 0.0, 0.0, 0.2, 0.0, true));
}

TEST_CASE("switching paths are reproducible per (seed, path)") {
  const auto c = default_linear_coeffs();
  const auto a = simulate_switching_path(c, 1.0, 100, 42, 3);
  const auto b = simulate_switching_path(c, 1.0, 100, 42, 3);
  const auto d = simulate_switching_path(c, 1.0, 100, 42, 4);
  CHECK(a.ahat == b.ahat);
  CHECK(a.ahat != d.ahat);
  CHECK(a.t.size() == 101);
}

TEST_CASE("deterministic utility against brute force") {
  auto bm = deterministic_example(2.0);
  const TimeGrid g(2.0, 6);
  const int k = 4;
  const double y[2] = {0.2, 0.3};
  // oracle: enumerate binary controls on [0, k) with the explicit recursion
  double best = -INFINITY;
  const double dt = g.dt();
  for (int m = 0; m < (1 << k); ++m) {
    double y1 = y[0], y2 = y[1];
    for (int j = k - 1; j >= 0; --j) {
      const double u = (m >> j) & 1;
      const double y2n = y2;
      y2 = y2n + u * dt;
      y1 = y1 + (u - y2n) * dt;
    }
    best = std::max(best, y1);
  }
  CHECK(deterministic_phi(bm.problem, g, k, y) == doctest::Approx(best).epsilon(1e-13));
}

TEST_CASE("comparison: static utility fails on the deterministic example") {
  auto bm = deterministic_example(2.0);
  ScenarioTree t(TimeGrid(2.0, 4), 1, TreeMode::Recombining);
  const auto pairs = monotone_pairs(terminal_rv(bm.problem, t), 20, 1.0, 11);
  const auto rep = check_comparison(static_utility(bm.problem.phi), bm.problem, t, 0, 4, pairs);
  CHECK(rep.tested == 20);
  CHECK(rep.violations >= 1);
}

TEST_CASE("comparison: deterministic utility holds for deterministic terminals") {
  auto bm = deterministic_example(2.0);
  const int n = 4;
  ScenarioTree t(TimeGrid(2.0, n), 1, TreeMode::Recombining);
  const auto Phi = deterministic_utility(bm.problem, t.grid());
  std::vector<TerminalPair> pairs;
  for (double s : {0.1, 0.5, 1.0}) {
    TreeRandomVariable a(3, 2, t.level_size(3)), b(3, 2, t.level_size(3));
    for (std::size_t i = 0; i < a.size(); ++i) {
      a.at(i)[0] = 0.1;
      a.at(i)[1] = 0.2;
      b.at(i)[0] = 0.1 + s;
      b.at(i)[1] = 0.2 + s;
    }
    pairs.push_back({a, b});
  }
  const auto rep = check_comparison(Phi, bm.problem, t, 1, 3, pairs);
  CHECK(rep.skipped + rep.tested == pairs.size());
  CHECK(rep.violations == 0);
}

TEST_CASE("maximizer selection is lexicographic among ties") {
  auto Phi = static_utility([](std::span<const double> y) { return y[0] + y[1]; });
  const PointSet cand = {{0.0, 1.0}, {1.0, 0.0}, {0.2, 0.2}};
  const auto m = select_maximizer(Phi, 0, 0, cand);
  CHECK(m == std::vector<double>{1.0, 0.0});
  CHECK_THROWS_AS(select_maximizer(Phi, 0, 0, {}), EmptySetError);
}

TEST_CASE("linear comparison on a small path tree") {
  const auto c = default_linear_coeffs();
  ScenarioTree t(TimeGrid(2.0, 3), 1, TreeMode::Path);
  const auto util = build_linear_utility(c, t);
  const auto p = linear_problem(c, {-1.0, 1.0});
  const auto pairs = linear_pairs(util, terminal_rv(p, t), 8, 1.0, 5);
  const auto rep = check_linear_comparison(c, util, p, t, pairs);
  CHECK(rep.pairs_tested == 8);
  CHECK(rep.policies == 128);
  CHECK(rep.policy_violations == 0);
  CHECK(rep.value_violations == 0);

  auto bad = p;
  bad.f = [](const NodeContext&, std::span<const double> y, std::span<const double>, std::span<const double>,
             std::span<double> out) {
    out[0] = y[0] * y[0];
    out[1] = 0.0;
  };
  CHECK_THROWS_AS(check_linear_comparison(c, util, bad, t, pairs), StructureError);
}

TEST_CASE("tau bound on a small ensemble") {
  const auto c = default_linear_coeffs();
  const auto rep = verify_tau_bound(c, 1.0, 400, 4, 2000, 9, 500);
  CHECK(rep.C > 0);
  CHECK(rep.delta == doctest::Approx(1 / (2 * rep.C)));
  CHECK(rep.band_ok);
  CHECK(rep.continuity_ok);
  CHECK(rep.rows.size() == 4);
  for (const auto& r : rep.rows) CHECK(r.pass);
}
