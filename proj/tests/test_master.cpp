#include <doctest.h>

#include <cmath>
#include <cstring>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"
#include "dynbsde/master.hpp"

using namespace dynbsde;

TEST_CASE("forward value at the horizon is the static value") {
  const auto p = scalar_control_problem();
  ScenarioTree t(TimeGrid(1.0, 3), 1, TreeMode::Recombining);
  const auto fv = forward_value(p, t, 3, terminal_rv(p, t));
  const auto sv = static_value(p, t);
  CHECK(fv.value == doctest::Approx(sv.value).epsilon(1e-14));
}

TEST_CASE("forward DPP residual vanishes") {
  const auto p = scalar_control_problem();
  ScenarioTree t(TimeGrid(1.0, 4), 1, TreeMode::Recombining);
  TreeRandomVariable eta(4, 1, t.level_size(4));
  for (std::size_t i = 0; i < eta.size(); ++i) eta.values[i] = std::cos(1.0 + i);
  const auto r = check_forward_dpp(p, t, 1, 3, conditional_expectation(t, eta, 3));
  CHECK(r.residual <= 1e-12);
  CHECK_FALSE(r.heuristic);
}

TEST_CASE("Lipschitz ratio stays below the bound") {
  const auto p = scalar_control_problem();
  ScenarioTree t(TimeGrid(1.0, 3), 1, TreeMode::Recombining);
  const auto pairs = random_eta_pairs(t, 2, 1, 20, 0.1, 3);
  const auto r = check_lipschitz(p, t, 2, pairs);
  CHECK(r.pairs == 20);
  CHECK(r.pass);
  CHECK(r.max_ratio <= r.bound);
}

TEST_CASE("path derivative probe") {
  ScenarioTree t(TimeGrid(1.0, 16), 1, TreeMode::Recombining);
  const auto ok = path_derivative_probe(cylinder_power(2), t);
  CHECK(ok.valid);
  auto wrong = cylinder_power(2);
  wrong.d_omega = [](const DiscretePath&) { return 0.0; };
  CHECK_THROWS_AS(path_derivative_probe(wrong, t), InvalidCylinderError);
  const auto soft = path_derivative_probe(wrong, t, -1.0, false);
  CHECK_FALSE(soft.valid);
}

TEST_CASE("master residual for B^4 with a zero generator") {
  BSDEProblem p;
  p.value_dim = 1;
  p.controls = {{0.0}};
  p.f = [](const NodeContext&, std::span<const double>, std::span<const double>, std::span<const double>,
           std::span<double> out) { out[0] = 0.0; };
  p.xi = [](const NodeContext& ctx, std::span<double> out) { out[0] = ctx.b[0]; };
  p.phi = [](std::span<const double> y) { return y[0]; };
  for (int n : {8, 16}) {
    ScenarioTree t(TimeGrid(1.0, n), 1, TreeMode::Recombining);
    const int k = n / 2;
    const double dt = t.grid().dt(), tk = t.grid().time(k);
    const auto m = master_residual(p, t, cylinder_power(4), k);
    // on the walk E B_t^4 = 3 t^2 - 2 t dt and E 6 B_t^2 = 6 t; the
    // backward difference of E B^4 is 6 t - 5 dt
    CHECK(m.psi == doctest::Approx(3 * tk * tk - 2 * tk * dt).epsilon(1e-12));
    CHECK(m.drift_term == doctest::Approx(6 * tk).epsilon(1e-6));
    CHECK(std::fabs(m.residual) == doctest::Approx(5 * dt).epsilon(1e-6));
  }
}

TEST_CASE("ill-posed pair: same Master+ right side, gap T") {
  auto [p1, p2] = illposed_pair();
  ScenarioTree t(TimeGrid(1.0, 8), 1, TreeMode::Recombining);
  const auto r = illposed_demo(p1, p2, t);
  CHECK(r.gap == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.rhs_identical);
  CHECK(std::memcmp(&r.rhs1, &r.rhs2, sizeof(double)) == 0);

  auto p3 = p2;
  p3.f = [](const NodeContext&, std::span<const double>, std::span<const double> z, std::span<const double>,
            std::span<double> out) { out[0] = z[0] + 1.0; };
  CHECK_THROWS_AS(illposed_demo(p1, p3, t), StructureError);
}
