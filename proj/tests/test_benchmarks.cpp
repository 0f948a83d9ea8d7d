#include <doctest.h>

#include <cmath>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/errors.hpp"

using namespace dynbsde;

TEST_CASE("closed forms") {
  CHECK(pa_optimal_action(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(pa_optimal_action(1.0, 1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(pa_rt(2.0, 1.0, -0.9, 0.0, 0.0) == doctest::Approx(-0.9));
  // V_t = int_t^{min(1+t,T)} (1 + t - s) ds
  CHECK(deterministic_value(2.0, 0.0) == doctest::Approx(0.5));
  CHECK(deterministic_value(1.2, 0.5) == doctest::Approx(0.455));
  CHECK(mv_ct(0.0, 1.5, 1.0, 0.0, 0.0) == doctest::Approx(1.5));
}

TEST_CASE("tree weight starts at c and approaches the continuous weight") {
  const double x0 = 0.0, c = 1.0, T = 1.0;
  CHECK(mv_ct_tree(x0, c, T, 16, 0, x0) == doctest::Approx(c).epsilon(1e-12));
  const double cont = mv_ct(x0, c, T, 0.5, 0.3);
  const double e1 = std::fabs(mv_ct_tree(x0, c, T, 64, 32, 0.3) - cont);
  const double e2 = std::fabs(mv_ct_tree(x0, c, T, 1024, 512, 0.3) - cont);
  CHECK(e2 < e1);
  CHECK(e2 < 1e-2);
}

TEST_CASE("construction errors") {
  CHECK_THROWS_AS(deterministic_example(1.0), DomainError);
  CHECK_THROWS_AS(make_benchmark("distortion"), DomainError);
  CHECK_THROWS_AS(make_benchmark("nope"), DomainError);
  const auto ids = benchmark_ids();
  CHECK(ids.size() == 5);
}

TEST_CASE("deterministic witness") {
  const auto w = deterministic_witness(2.0, 16, 4);
  CHECK(w.matches_formula);
  CHECK_FALSE(w.disagree.empty());
  CHECK(w.margin > 0);
  CHECK(w.pass);
}

TEST_CASE("one-dimensional witness and restoration") {
  const auto w = one_dim_witness(1.0, 8);
  CHECK(w.tested > 0);
  CHECK(w.agree == w.tested);
  CHECK(w.pass);
  const auto r = one_dim_restoration(1.0, 4);
  CHECK(r.restored_mismatch == 0);
  CHECK(r.pass);
}

TEST_CASE("mean-variance restoration uses the tree weight") {
  const auto r = mv_restoration(0.0, 1.0, 1.0, 8, 4);
  CHECK(r.restored_mismatch == 0);
  CHECK(r.control_violations >= 1);
  CHECK(r.pass);
}

TEST_CASE("principal-agent restoration") {
  const auto r = pa_restoration(2.0, 1.0, -0.9, 1.0, 6);
  CHECK(r.restored_mismatch == 0);
  CHECK(r.pass);
}

TEST_CASE("benchmark_verify passes for every shipped benchmark") {
  for (const auto& id : {"deterministic", "one_dim", "mean_variance", "principal_agent"}) {
    const auto rep = benchmark_verify(id);
    INFO(id);
    for (const auto& c : rep.checks) {
      INFO(c.name << ": " << c.detail);
      CHECK(c.pass);
    }
  }
}
