// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria (capped at 1).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dynbsde/benchmarks.hpp"
#include "dynbsde/experiments.hpp"
#include "dynbsde/lattice.hpp"

using namespace dynbsde;
namespace fs = std::filesystem;

namespace {

fs::path g_root;

ExperimentReport run(const std::string& text, const std::string& sub = "runs") {
  auto cfg = ExperimentConfig::parse(text);
  cfg.set("output_dir", (g_root / sub).string());
  return run_experiment(cfg);
}

const Verdict* find(const ExperimentReport& r, const std::string& name) {
  for (const auto& v : r.checks)
    if (v.name == name) return &v;
  return nullptr;
}

bool ok(const ExperimentReport& r, const std::string& name) {
  const auto* v = find(r, name);
  return v && v->status == "pass";
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome c1() {
  const auto s64 = run("experiment = static-value\nproblem = deterministic\nn = 64\n");
  const auto s256 = run("experiment = static-value\nproblem = deterministic\nn = 256\n");
  const auto d = run("experiment = duality\nproblem = deterministic\n");
  const auto* v64 = find(s64, "value");
  const auto* v256 = find(s256, "value");
  const auto* d64 = find(d, "dual_value_n64");
  const auto* d256 = find(d, "dual_value_n256");
  const bool t = s64.wall_seconds < 60 && s256.wall_seconds < 60 && d.wall_seconds < 60;
  Outcome o;
  o.pass = t && ok(s64, "value") && ok(s256, "value") && ok(d, "dual_value_n64") && ok(d, "dual_value_n256");
  if (v64 && v256 && d64 && d256)
    o.detail = fmt("static %.6g / %.6g, dual %.6g / %.6g", v64->measured, v256->measured, d64->measured,
                   d256->measured) +
               fmt(", slowest run %.2f s", std::max({s64.wall_seconds, s256.wall_seconds, d.wall_seconds}));
  return o;
}

Outcome c2() {
  const auto w = deterministic_witness(2.0, 16, 4);
  const auto n = one_dim_witness(1.0, 8);
  Outcome o;
  o.pass = w.pass && w.matches_formula && w.margin > 0 && n.pass && n.tested > 0 && n.agree == n.tested;
  o.detail = fmt("deterministic: %g disagreeing levels, margin %.4g; one-dim: %g/%g nodes re-optimize to +1",
                 double(w.disagree.size()), w.margin, double(n.agree), double(n.tested));
  return o;
}

Outcome c3() {
  const auto a = mv_restoration(0.0, 1.0, 1.0, 8, 4);
  const auto b = one_dim_restoration(1.0, 4);
  const auto c = pa_restoration(2.0, 1.0, -0.9, 1.0, 6);
  Outcome o;
  o.pass = a.pass && b.pass && c.pass && a.restored_mismatch == 0 && b.restored_mismatch == 0 &&
           c.restored_mismatch == 0 && a.control_violations >= 1 && b.control_violations >= 1 &&
           c.control_violations >= 1;
  o.detail = fmt("restored mismatches %g/%g/%g, ", a.restored_mismatch, b.restored_mismatch, c.restored_mismatch) +
             fmt("control-group violations %g/%g/%g", a.control_violations, b.control_violations,
                 c.control_violations);
  return o;
}

Outcome c4() {
  const auto z = run("experiment = duality\nproblem = zero\n");
  const auto d = run("experiment = duality\nproblem = deterministic\n");
  Outcome o;
  o.pass = ok(z, "w_closed_form") && ok(z, "nodal_set_at_origin") && ok(d, "hausdorff_cells_n64") &&
           ok(d, "hausdorff_cells_n256") && ok(d, "hausdorff_decreasing");
  const auto* w = find(z, "w_closed_form");
  const auto* h1 = find(d, "hausdorff_cells_n64");
  const auto* h2 = find(d, "hausdorff_cells_n256");
  if (w && h1 && h2)
    o.detail = fmt("W error %.3g; Hausdorff %.3g and %.3g cells (limit 2)", w->measured, h1->measured, h2->measured);
  return o;
}

Outcome c5() {
  const auto z = run("experiment = geometric-dpp\nproblem = zero\n");
  const auto d = run("experiment = geometric-dpp\nproblem = deterministic\n");
  Outcome o;
  o.pass = z.pass() && d.pass() && ok(z, "rho_shrinks_1") && ok(d, "rho_shrinks_1");
  const auto* r = find(d, "rho_shrinks_1");
  if (r) o.detail = fmt("deterministic rho %.3g -> %.3g", r->tolerance, r->measured);
  return o;
}

Outcome c6() {
  const auto r = run("experiment = forward-dpp\nseed = 1\n");
  Outcome o;
  o.pass = r.pass();
  double worst = 0;
  for (const auto& v : r.checks)
    if (v.name.rfind("residual_", 0) == 0) worst = std::max(worst, v.measured);
  const auto* l = find(r, "lipschitz_ratio");
  if (l) o.detail = fmt("max residual %.3g; Lipschitz ratio %.3g <= %.3g", worst, l->measured, l->tolerance);
  return o;
}

Outcome c7() {
  const auto m = run("experiment = master-residual\n");
  const auto i = run("experiment = illposed-demo\n");
  Outcome o;
  o.pass = m.pass() && ok(m, "halving_1") && ok(m, "halving_2") && ok(i, "gap_equals_T") && ok(i, "rhs_identical");
  const auto* h1 = find(m, "halving_1");
  const auto* h2 = find(m, "halving_2");
  const auto* g = find(i, "gap_equals_T");
  if (h1 && h2 && g) o.detail = fmt("ratios %.3g, %.3g; gap %.12g", h1->measured, h2->measured, g->measured);
  return o;
}

Outcome c8() {
  const auto t = run("experiment = tau-bound\nseed = 1\n");
  const auto l = run("experiment = dynamic-utility-linear\nseed = 1\n");
  Outcome o;
  o.pass = t.pass() && l.pass() && ok(l, "policy_comparison") && ok(l, "control_group_violations");
  const auto* b = find(t, "band_at_switches");
  const auto* cg = find(l, "control_group_violations");
  if (b && cg)
    o.detail = fmt("overshoot %.3g; comparison violations 0 required, control group %g", b->measured, cg->measured);
  return o;
}

Outcome c9() {
  double worst = 0;
  for (int d : {1, 2}) {
    const int n = d == 1 ? 8 : 4;
    ScenarioTree t(TimeGrid(1.0, n), d, TreeMode::Path);
    TreeRandomVariable xi(n, 1, t.level_size(n));
    for (std::size_t i = 0; i < xi.size(); ++i) xi.values[i] = std::sin(3.0 * i) + 0.1 * i;
    const auto e1 = conditional_expectation(t, xi, 1);
    const auto e31 = conditional_expectation(t, conditional_expectation(t, xi, 3), 1);
    for (std::size_t i = 0; i < e1.size(); ++i) worst = std::max(worst, std::fabs(e1.values[i] - e31.values[i]));
    for (int k = 0; k < n; ++k)
      for (std::size_t i = 0; i < t.level_size(k); ++i) {
        double mean[2] = {0, 0};
        for (int c = 0; c < t.branching(); ++c) {
          const auto ch = t.child(k, i, c);
          for (int j = 0; j < d; ++j) {
            const double db = t.value(k + 1, ch)[j] - t.value(k, i)[j];
            mean[j] += db / t.branching();
            worst = std::max(worst, std::fabs(db * db - t.grid().dt()));
          }
        }
        for (int j = 0; j < d; ++j) worst = std::max(worst, std::fabs(mean[j]));
      }
  }
  const int n = 10;
  ScenarioTree rec(TimeGrid(1.0, n), 1, TreeMode::Recombining), path(TimeGrid(1.0, n), 1, TreeMode::Path);
  auto g = [&](const ScenarioTree& t) {
    auto b = brownian_rv(t, n);
    for (double& v : b.values) v = std::exp(v) * std::cos(v);
    return conditional_expectation(t, b, 0).values[0];
  };
  const double agree = std::fabs(g(rec) - g(path));
  Outcome o;
  o.pass = worst <= 1e-14 && agree <= 1e-12;
  o.detail = fmt("identities %.3g, recombining vs path %.3g", worst, agree);
  return o;
}

Outcome c10() {
  const std::vector<std::string> cfgs = {
      "experiment = static-value\nproblem = deterministic\nn = 64\n",
      "experiment = duality\nproblem = zero\n",
      "experiment = forward-dpp\nseed = 3\n",
      "experiment = dynamic-utility-linear\nseed = 3\n",
      "experiment = tau-bound\nseed = 3\nM = 2000\n",
      "experiment = master-residual\n",
      "experiment = benchmark-verify\n",
  };
  int same = 0;
  for (const auto& c : cfgs) {
    const auto a = run(c, "rerun_a");
    const auto b = run(c, "rerun_b");
    bool eq = a.artifacts == b.artifacts;
    for (const auto& f : a.artifacts) eq = eq && slurp(fs::path(a.output_dir) / f) == slurp(fs::path(b.output_dir) / f);
    eq = eq && slurp(fs::path(a.output_dir) / "report.json") == slurp(fs::path(b.output_dir) / "report.json");
    same += eq;
  }
  Outcome o;
  o.pass = same == int(cfgs.size());
  o.detail = fmt("%g/%g experiments byte-identical on rerun", same, double(cfgs.size()));
  return o;
}

}  // namespace

int main() {
  g_root = fs::temp_directory_path() / "dynbsde_acceptance";
  fs::remove_all(g_root);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> crit = {
      {"deterministic value", c1}, {"inconsistency witnesses", c2}, {"consistency restoration", c3},
      {"duality", c4},             {"geometric DPP", c5},           {"forward DPP", c6},
      {"master equation", c7},     {"linear dynamic utility", c8},  {"tree exactness", c9},
      {"reproducibility", c10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < crit.size(); ++i) {
    Outcome o;
    try {
      o = crit[i].second();
    } catch (const std::exception& e) {
      o.detail = std::string("error: ") + e.what();
    }
    failed += !o.pass;
    std::printf("criterion %2zu %-24s %s  %s\n", i + 1, crit[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(g_root);
  std::printf("%d/%zu criteria pass\n", int(crit.size()) - failed, crit.size());
  return failed ? 1 : 0;
}
