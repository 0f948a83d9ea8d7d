#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/bsde.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"

using namespace dynbsde;

namespace {

BSDEProblem scalar(std::function<double(double, double, double)> f, double L,
                   std::vector<std::vector<double>> U = {{0.0}}) {
  BSDEProblem p;
  p.value_dim = 1;
  p.controls = std::move(U);
  p.lipschitz = L;
  p.f = [f](const NodeContext&, std::span<const double> y, std::span<const double> z, std::span<const double> u,
            std::span<double> out) { out[0] = f(y[0], z[0], u[0]); };
  p.xi = [](const NodeContext& ctx, std::span<double> out) { out[0] = ctx.b[0] * ctx.b[0]; };
  p.phi = [](std::span<const double> y) { return y[0]; };
  return p;
}

}  // namespace

TEST_CASE("zero generator gives the expectation") {
  auto p = scalar([](double, double, double) { return 0.0; }, 0.0);
  ScenarioTree t(TimeGrid(1.5, 6), 1, TreeMode::Recombining);
  const auto sol = solve_bsde(p, t, ControlPolicy::constant(t, 6, p.policy_space, 0));
  CHECK(sol.Y[0].at(0)[0] == doctest::Approx(1.5).epsilon(1e-14));
  // Z of B^2 one step before the end is 2 B
  for (std::size_t i = 0; i < t.level_size(5); ++i)
    CHECK(sol.z(5, i)[0] == doctest::Approx(2 * t.value(5, i)[0]).epsilon(1e-12));
}

TEST_CASE("linear generator matches the explicit-scheme closed form") {
  const double a = -0.7, b = 0.4;
  auto p = scalar([=](double y, double z, double) { return a * y + b * z; }, 1.1);
  const int n = 5;
  const double T = 1.0, dt = T / n;
  ScenarioTree t(TimeGrid(T, n), 1, TreeMode::Recombining);
  const auto sol = solve_bsde(p, t, ControlPolicy::constant(t, n, p.policy_space, 0));
  // independent oracle: one step of y = E + (aE + bZ)dt under xi = B^2 is an
  // affine map on the coefficients of the quadratic c0 + c1 B + c2 B^2
  double c0 = 0, c1 = 0, c2 = 1;
  for (int k = 0; k < n; ++k) {
    const double e0 = c0 + c2 * dt, e1 = c1, e2 = c2;  // conditional expectation
    const double z0 = c1, z1 = 2 * c2;                // Z = c1 + 2 c2 B
    c0 = e0 + (a * e0 + b * z0) * dt;
    c1 = e1 + (a * e1 + b * z1) * dt;
    c2 = e2 + a * e2 * dt;
  }
  CHECK(sol.Y[0].at(0)[0] == doctest::Approx(c0).epsilon(1e-13));
}

TEST_CASE("declared Lipschitz constant is probed") {
  auto p = scalar([](double y, double, double) { return 3 * y; }, 1.0);
  ScenarioTree t(TimeGrid(1.0, 4), 1, TreeMode::Recombining);
  CHECK_THROWS_AS(validate_lipschitz(p, t), ProblemValidationError);
}

TEST_CASE("deterministic example static value against the closed form") {
  auto bm = deterministic_example(2.0);
  for (int n : {4, 8}) {
    ScenarioTree t(TimeGrid(2.0, n), 1, TreeMode::Recombining);
    const auto sv = static_value(bm.problem, t);
    CHECK_FALSE(sv.heuristic);
    // oracle: Y1_0 = dt sum u_i (1 - i dt), maximised coordinatewise
    const double dt = 2.0 / n;
    double best = 0;
    for (int i = 0; i < n; ++i) best += std::max(0.0, dt * (1 - i * dt));
    CHECK(sv.value == doctest::Approx(best).epsilon(1e-13));
  }
  ScenarioTree big(TimeGrid(2.0, 64), 1, TreeMode::Recombining);
  CHECK_THROWS_AS(static_value(bm.problem, big), SizeError);
  EnumerationOptions o;
  o.fallback = true;
  const auto sv = static_value(bm.problem, big, o);
  CHECK(sv.heuristic);
  CHECK(sv.value == doctest::Approx(0.515625).epsilon(1e-12));
}

TEST_CASE("reachable set of the deterministic example") {
  auto bm = deterministic_example(2.0);
  const int n = 5;
  ScenarioTree t(TimeGrid(2.0, n), 1, TreeMode::Recombining);
  const auto rs = reachable_set(bm.problem, t, 0);
  REQUIRE(rs.size() == 1);
  // brute force over binary sequences with the closed form
  PointSet oracle;
  const double dt = 2.0 / n;
  for (int m = 0; m < (1 << n); ++m) {
    double y1 = 0, y2 = 0;
    for (int i = 0; i < n; ++i)
      if (m >> i & 1) {
        y1 += dt * (1 - i * dt);
        y2 += dt;
      }
    oracle.push_back({y1, y2});
  }
  oracle = dedupe_points(oracle);
  CHECK(rs[0].size() == oracle.size());
  auto closed = dedupe_points(deterministic_reachable_set(2.0, n, 0.0));
  CHECK(closed.size() == oracle.size());
  for (const auto& y : oracle) {
    const bool found = std::any_of(rs[0].begin(), rs[0].end(), [&](const std::vector<double>& q) {
      return std::fabs(q[0] - y[0]) < 1e-12 && std::fabs(q[1] - y[1]) < 1e-12;
    });
    CHECK(found);
  }
}

TEST_CASE("one-dimensional benchmark: value and argmax at c = T") {
  auto bm = one_dimensional(1.0, 1.0);
  ScenarioTree t(TimeGrid(1.0, 3), 1, TreeMode::Path);
  const auto sv = static_value(bm.problem, t);
  CHECK(std::fabs(sv.value) <= 1e-12);
  for (int k = 0; k < 3; ++k)
    for (auto c : sv.policy.choice[k]) CHECK(c == 0u);
}

TEST_CASE("envelope of a time-consistent problem") {
  // f = u with u in {0, 1}: the envelope sup_u f = 1 reproduces V
  auto p = scalar([](double, double, double u) { return u; }, 0.0, {{0.0}, {1.0}});
  ScenarioTree t(TimeGrid(1.0, 3), 1, TreeMode::Path);
  const auto env = envelope_bsde(p, t);
  CHECK(env.consistent);
  CHECK(env.max_residual <= 1e-10);
  CHECK(env.envelope.Y[0].at(0)[0] == doctest::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("solve_bsde rejects mismatched policies") {
  auto p = scalar([](double, double, double) { return 0.0; }, 0.0);
  ScenarioTree t(TimeGrid(1.0, 3), 1, TreeMode::Recombining);
  auto pol = ControlPolicy::constant(t, 2, p.policy_space, 0);
  CHECK_THROWS_AS(solve_bsde(p, t, pol), DomainError);
}
