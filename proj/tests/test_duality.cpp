#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/duality.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/experiments.hpp"

using namespace dynbsde;

namespace {

HJBConfig zero_config(double h) {
  HJBConfig c;
  c.x = AxisGrid::spaced(-1.0, 1.0, h);
  c.y = {AxisGrid::spaced(-1.0, 1.0, h)};
  for (int j = -4; j <= 4; ++j) c.z_grid.push_back({0.5 * j});
  c.epsilon_factor = 2.0;
  return c;
}

}  // namespace

TEST_CASE("axis grids") {
  const auto a = AxisGrid::spaced(-1.0, 1.0, 0.25);
  CHECK(a.count == 9);
  CHECK(a.step() == doctest::Approx(0.25));
  CHECK(a.at(8) == doctest::Approx(1.0));
  CHECK_THROWS_AS(AxisGrid::spaced(1.0, 0.0, 0.1), ConfigError);
}

TEST_CASE("config validation") {
  auto p = zero_driver_problem();
  auto c = zero_config(0.1);
  c.z_grid = {{0.5}};
  CHECK_THROWS_AS(solve_dual_hjb(p, TimeGrid(0.1, 1), c), ConfigError);
  c = zero_config(0.1);
  c.cfl = 1.5;
  CHECK_THROWS_AS(solve_dual_hjb(p, TimeGrid(0.1, 1), c), ConfigError);
  c = zero_config(0.1);
  c.substeps = 1;
  try {
    solve_dual_hjb(p, TimeGrid(0.1, 1), c);
    FAIL("fixed substeps above the stable step must be rejected");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("substeps") != std::string::npos);
  }
}

TEST_CASE("zero generator: W is the squared gap") {
  auto p = zero_driver_problem();
  const auto g = solve_dual_hjb(p, TimeGrid(0.1, 2), zero_config(0.1));
  double err = 0;
  for (int k : g.levels)
    for (std::size_t ix = 0; ix < g.nx; ++ix)
      for (std::size_t iy = 0; iy < g.n1; ++iy) {
        const double d = g.y_point(iy)[0] - g.x_point(ix);
        err = std::max(err, std::fabs(g.at(k, ix, iy) - d * d));
      }
  CHECK(err <= 1e-10);
  const double y[1] = {0.37};
  CHECK(g.interpolate(0, 0.02, y) == doctest::Approx((0.37 - 0.02) * (0.37 - 0.02)).epsilon(0.05));
  const double off[1] = {3.0};
  CHECK(std::isinf(g.interpolate(0, 0.0, off)));

  std::size_t ix0 = 0;
  for (std::size_t i = 0; i < g.nx; ++i)
    if (std::fabs(g.x_point(i)) < 1e-12) ix0 = i;
  const auto ns = extract_nodal_set(g, 0, ix0, g.epsilon);
  REQUIRE(ns.points.size() == 1);
  CHECK(std::fabs(ns.points[0][0]) < 1e-12);
  CHECK_THROWS_AS(dual_static_value(extract_nodal_set(g, 0, ix0, -1.0), p.phi), EmptySetError);
}

TEST_CASE("direct dual value on a path tree") {
  auto p = zero_driver_problem();
  ScenarioTree t(TimeGrid(0.5, 3), 1, TreeMode::Path);
  const std::vector<std::vector<double>> z = {{0.0}, {1.0}};
  const double y[1] = {0.3};
  const auto r = dual_value_direct(p, t, 0, 0, y, z);
  CHECK(r.value == doctest::Approx(0.09).epsilon(1e-12));
  ScenarioTree rec(TimeGrid(0.5, 3), 1, TreeMode::Recombining);
  CHECK_THROWS_AS(dual_value_direct(p, rec, 0, 0, y, z), ModeError);
}

TEST_CASE("Hausdorff distances") {
  PointSet a = {{0.0, 0.0}, {1.0, 0.0}};
  PointSet b = {{0.0, 0.0}};
  CHECK(directed_distance(b, a) == doctest::Approx(0.0));
  CHECK(directed_distance(a, b) == doctest::Approx(1.0));
  CHECK(hausdorff_distance(a, b) == doctest::Approx(1.0));
  PointSet line, shifted;
  for (int i = 0; i < 500; ++i) {
    line.push_back({0.01 * i, 0.0});
    shifted.push_back({0.01 * i, 0.3});
  }
  CHECK(hausdorff_distance(line, shifted) == doctest::Approx(0.3));
}

TEST_CASE("deterministic example: dual static value near one half") {
  auto bm = deterministic_example(2.0);
  HJBConfig c;
  c.x = AxisGrid{0.0, 0.0, 1};
  c.y = {AxisGrid::spaced(-1.0, 1.0, 0.05), AxisGrid::spaced(-0.5, 2.5, 0.05)};
  c.z_grid = {{0.0, 0.0}};
  c.epsilon_factor = 2.0;
  c.keep_levels = {0};
  const auto g = solve_dual_hjb(bm.problem, TimeGrid(2.0, 16), c);
  const auto ns = extract_nodal_set(g, 0, 0, g.epsilon);
  const auto dv = dual_static_value(ns, bm.problem.phi);
  CHECK(dv.value == doctest::Approx(0.5).epsilon(0.1));
  std::ostringstream os;
  write_nodal_set_csv(os, g, ns);
  CHECK(os.str().rfind("t,x,y1,y2\n", 0) == 0);
}

TEST_CASE("geometric DPP inclusions on the zero generator") {
  auto p = zero_driver_problem();
  auto c = zero_config(0.1);
  const auto g = solve_dual_hjb(p, TimeGrid(0.16, 4), c);
  ScenarioTree t(TimeGrid(0.16, 4), 1, TreeMode::Recombining);
  const auto r = check_geometric_dpp(p, t, g, g.epsilon, 0, 1);
  CHECK(r.inclusion_a);
  CHECK(r.inclusion_b);
  CHECK(r.rho <= 1e-10);
}

TEST_CASE("W regularity constant is finite") {
  auto p = zero_driver_problem();
  const auto g = solve_dual_hjb(p, TimeGrid(0.1, 1), zero_config(0.1));
  const auto r = check_w_regularity(g, 0, 10);
  CHECK(r.pairs > 0);
  CHECK(r.c_hat <= 2.0);
}
