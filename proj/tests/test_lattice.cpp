#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dynbsde/errors.hpp"
#include "dynbsde/lattice.hpp"

using namespace dynbsde;

namespace {

// all sign sequences of length n, weight 2^-n each
double brute_expectation(int n, double dt, const std::function<double(const std::vector<int>&)>& f) {
  double s = 0;
  for (int m = 0; m < (1 << n); ++m) {
    std::vector<int> w(n);
    for (int j = 0; j < n; ++j) w[j] = (m >> (n - 1 - j)) & 1 ? 1 : -1;
    s += f(w);
  }
  (void)dt;
  return s / (1 << n);
}

}  // namespace

TEST_CASE("time grid and tree shapes") {
  TimeGrid g(2.0, 8);
  CHECK(g.dt() == 0.25);
  CHECK(g.time(4) == 1.0);
  CHECK_THROWS_AS(TimeGrid(0.0, 4), DomainError);
  CHECK_THROWS_AS(TimeGrid(1.0, 0), DomainError);

  ScenarioTree rec(g, 2, TreeMode::Recombining);
  CHECK(rec.level_size(3) == 16);
  CHECK(rec.branching() == 4);
  ScenarioTree path(TimeGrid(1.0, 5), 2, TreeMode::Path);
  CHECK(path.level_size(5) == (std::size_t{1} << 10));
  CHECK_THROWS_AS(ScenarioTree(TimeGrid(1.0, 12), 2, TreeMode::Path), SizeError);
}

TEST_CASE("child codes follow the documented bit layout") {
  ScenarioTree t(TimeGrid(1.0, 2), 2, TreeMode::Path);
  // code 2 = binary 10: + in coordinate 0, - in coordinate 1
  CHECK(t.sign(2, 0) == 1);
  CHECK(t.sign(2, 1) == -1);
  const auto v = t.value(1, t.child(0, 0, 2));
  CHECK(v[0] == doctest::Approx(t.sqrt_dt()));
  CHECK(v[1] == doctest::Approx(-t.sqrt_dt()));
  CHECK(t.parent(1, t.child(0, 0, 2)) == 0);
}

TEST_CASE("node probabilities sum to one") {
  for (auto mode : {TreeMode::Recombining, TreeMode::Path}) {
    ScenarioTree t(TimeGrid(1.0, 6), 1, mode);
    double s = 0;
    for (std::size_t i = 0; i < t.level_size(6); ++i) s += t.node_probability(6, i);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("moments match brute-force enumeration of sign sequences") {
  const int n = 7;
  const double T = 1.3, dt = T / n;
  ScenarioTree t(TimeGrid(T, n), 1, TreeMode::Recombining);
  auto b = brownian_rv(t, n);
  TreeRandomVariable b4(n, 1, t.level_size(n));
  for (std::size_t i = 0; i < b4.size(); ++i) b4.values[i] = std::pow(b.values[i], 4);
  const double oracle = brute_expectation(n, dt, [&](const std::vector<int>& w) {
    double s = 0;
    for (int x : w) s += x * std::sqrt(dt);
    return std::pow(s, 4);
  });
  CHECK(expectation(t, b4)[0] == doctest::Approx(oracle).epsilon(1e-13));
  // E B_T^4 = 3T^2 - 2 T dt on the walk
  CHECK(oracle == doctest::Approx(3 * T * T - 2 * T * dt).epsilon(1e-13));
}

TEST_CASE("tower, martingale and quadratic variation identities") {
  const int n = 6;
  ScenarioTree t(TimeGrid(1.0, n), 1, TreeMode::Path);
  TreeRandomVariable xi(n, 1, t.level_size(n));
  for (std::size_t i = 0; i < xi.size(); ++i) xi.values[i] = std::sin(3.0 * i) + 0.1 * i;
  const auto e2 = conditional_expectation(t, xi, 2);
  const auto e4 = conditional_expectation(t, xi, 4);
  const auto e42 = conditional_expectation(t, e4, 2);
  for (std::size_t i = 0; i < e2.size(); ++i) CHECK(std::fabs(e2.values[i] - e42.values[i]) <= 1e-14);

  const auto bn = brownian_rv(t, n);
  const auto m3 = conditional_expectation(t, bn, 3);
  const auto b3 = brownian_rv(t, 3);
  for (std::size_t i = 0; i < m3.size(); ++i) CHECK(std::fabs(m3.values[i] - b3.values[i]) <= 1e-14);

  for (int k = 0; k < n; ++k)
    for (std::size_t i = 0; i < t.level_size(k); ++i)
      for (int c = 0; c < 2; ++c) {
        const double d = t.value(k + 1, t.child(k, i, c))[0] - t.value(k, i)[0];
        CHECK(std::fabs(d * d - t.grid().dt()) <= 1e-14);
      }
}

TEST_CASE("recombining and path trees agree on Markovian functionals") {
  const int n = 8;
  ScenarioTree rec(TimeGrid(1.0, n), 1, TreeMode::Recombining);
  ScenarioTree path(TimeGrid(1.0, n), 1, TreeMode::Path);
  auto g = [](double b) { return std::exp(b) * std::cos(b); };
  auto fill = [&](const ScenarioTree& t) {
    auto b = brownian_rv(t, n);
    for (double& v : b.values) v = g(v);
    return b;
  };
  const auto er = conditional_expectation(rec, fill(rec), 0);
  const auto ep = conditional_expectation(path, fill(path), 0);
  CHECK(std::fabs(er.values[0] - ep.values[0]) <= 1e-12);
}

TEST_CASE("path functionals and mode errors") {
  ScenarioTree path(TimeGrid(1.0, 4), 1, TreeMode::Path);
  PathFunctional maxabs{[](const DiscretePath& p) { return p.running_max_abs(); }, true};
  const auto v = level_functional(path, 4, maxabs);
  // all-up path is the last node: 4 steps of sqrt(dt) = 1/2
  CHECK(v.values.back() == doctest::Approx(2.0));
  ScenarioTree rec(TimeGrid(1.0, 4), 1, TreeMode::Recombining);
  CHECK_THROWS_AS(path_functional(rec, 4, 0, maxabs), ModeError);
  CHECK_THROWS_AS(rec.parent(1, 0), ModeError);
  const auto p = path.path(2, 3);
  CHECK(p.full);
  CHECK(p.time_integral() == doctest::Approx((0.0 + 0.5) * 0.25));
}
