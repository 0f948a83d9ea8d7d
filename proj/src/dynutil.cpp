#include "dynbsde/dynutil.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "dynbsde/errors.hpp"
#include "dynbsde/io.hpp"
#include "dynbsde/rng.hpp"

namespace dynbsde {

DynamicUtility static_utility(const Utility& phi) {
  DynamicUtility u;
  u.phi = phi;
  u.eval = [phi](int, std::size_t, std::span<const double> y) { return phi(y); };
  return u;
}

double deterministic_phi(const BSDEProblem& problem, const TimeGrid& grid, int k, std::span<const double> y,
                         const EnumerationOptions& opts) {
  if (k < 0 || k > grid.n) throw DomainError("deterministic_phi: level outside the grid");
  if (k == 0) return problem.phi(y);
  BSDEProblem p = problem;
  p.policy_space = PolicySpace::LevelWise;
  ScenarioTree tree(grid, 1, TreeMode::Recombining);
  TreeRandomVariable eta(k, problem.value_dim, tree.level_size(k));
  for (std::size_t i = 0; i < eta.size(); ++i) std::copy(y.begin(), y.end(), eta.at(i).begin());
  return static_value_at(p, tree, k, eta, opts).value;
}

DynamicUtility deterministic_utility(const BSDEProblem& problem, const TimeGrid& grid, const EnumerationOptions& opts) {
  DynamicUtility u;
  u.phi = problem.phi;
  u.eval = [problem, grid, opts](int level, std::size_t, std::span<const double> y) {
    return deterministic_phi(problem, grid, level, y, opts);
  };
  return u;
}

ComparisonReport check_comparison(const DynamicUtility& Phi, const BSDEProblem& problem, const ScenarioTree& tree,
                                  int k1, int k2, const std::vector<TerminalPair>& pairs,
                                  const EnumerationOptions& opts, double tol) {
  if (!(0 <= k1 && k1 < k2 && k2 <= tree.steps())) throw DomainError("check_comparison: need 0 <= t1 < t2 <= n");
  ComparisonReport rep;
  rep.k1 = k1;
  rep.k2 = k2;
  rep.tolerance = tol;
  rep.worst_slack = INFINITY;
  for (const auto& pr : pairs) {
    PairVerdict v;
    if (pr.eta.level != k2 || pr.eta_tilde.level != k2) throw DomainError("check_comparison: pair not at level t2");
    for (std::size_t i = 0; i < tree.level_size(k2) && v.premise; ++i)
      v.premise = Phi(k2, i, pr.eta.at(i)) <= Phi(k2, i, pr.eta_tilde.at(i)) + tol;
    if (!v.premise) {
      ++rep.skipped;
      rep.pairs.push_back(v);
      continue;
    }
    ++rep.tested;
    auto lhs = reachable_set_between(problem, tree, k1, k2, pr.eta, opts);
    auto rhs = reachable_set_between(problem, tree, k1, k2, pr.eta_tilde, opts);
    v.slack = INFINITY;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      double a = -INFINITY, b = -INFINITY;
      for (const auto& y : lhs[i]) a = std::max(a, Phi(k1, i, y));
      for (const auto& y : rhs[i]) b = std::max(b, Phi(k1, i, y));
      if (b - a < v.slack) {
        v.slack = b - a;
        v.worst_node = i;
      }
    }
    v.violation = v.slack < -tol;
    rep.violations += v.violation;
    rep.worst_slack = std::min(rep.worst_slack, v.slack);
    rep.pairs.push_back(v);
  }
  if (rep.tested == 0) rep.worst_slack = 0.0;
  return rep;
}

std::vector<TerminalPair> monotone_pairs(const TreeRandomVariable& eta, std::size_t count, double scale,
                                         std::uint64_t seed) {
  std::vector<TerminalPair> out;
  for (std::size_t p = 0; p < count; ++p) {
    CounterRng rng(seed, p);
    TerminalPair pr{eta, eta};
    for (double& v : pr.eta_tilde.values) v += rng.uniform(0.0, scale);
    out.push_back(std::move(pr));
  }
  return out;
}

std::vector<double> select_maximizer(const DynamicUtility& Phi, int level, std::size_t node,
                                     const PointSet& candidates, double tol) {
  if (candidates.empty()) throw EmptySetError("select_maximizer: no candidates at this node");
  std::vector<double> vals;
  for (const auto& y : candidates) vals.push_back(Phi(level, node, y));
  const double best = *std::max_element(vals.begin(), vals.end());
  const std::vector<double>* pick = nullptr;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (vals[i] >= best - tol && (!pick || *pick < candidates[i])) pick = &candidates[i];
  return *pick;
}

LinearUtilityCoeffs LinearUtilityCoeffs::constant(const double (&alpha)[2][2], const double (&beta)[2][2], double a1,
                                                  double a2) {
  LinearUtilityCoeffs c;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double a = alpha[i][j], b = beta[i][j];
      c.alpha[i][j] = [a](double, double) { return a; };
      c.beta[i][j] = [b](double, double) { return b; };
    }
  c.a1 = a1;
  c.a2 = a2;
  return c;
}

namespace {

// Coefficients of regime 1; regime 2 swaps the indices 1 <-> 2.
struct Local {
  double a11, a12, a21, a22, b11, b12, b21, b22;
};

Local local(const LinearUtilityCoeffs& c, int regime, double t, double b) {
  Local l{c.alpha[0][0](t, b), c.alpha[0][1](t, b), c.alpha[1][0](t, b), c.alpha[1][1](t, b),
          c.beta[0][0](t, b),  c.beta[0][1](t, b),  c.beta[1][0](t, b),  c.beta[1][1](t, b)};
  if (regime == 2) {
    std::swap(l.a11, l.a22);
    std::swap(l.a12, l.a21);
    std::swap(l.b11, l.b22);
    std::swap(l.b12, l.b21);
  }
  return l;
}

}  // namespace

double riccati_drift(const LinearUtilityCoeffs& c, int regime, double t, double b, double x) {
  const Local l = local(c, regime, t, b);
  return l.b12 * l.b12 * x * x * x - (l.a12 + l.b12 * (l.b11 - l.b22) - l.b12 * l.b22) * x * x +
         (l.a11 - l.a22 - l.b22 * (l.b11 - l.b22) - l.b12 * l.b21) * x + (l.a21 - l.b21 * l.b22);
}

double riccati_vol(const LinearUtilityCoeffs& c, int regime, double t, double b, double x) {
  const Local l = local(c, regime, t, b);
  return -l.b12 * x * x + (l.b11 - l.b22) * x + l.b21;
}

SwitchState switching_start(const LinearUtilityCoeffs& c) {
  if (c.a1 == 0.0 && c.a2 == 0.0) throw DomainError("linear utility: a1 = a2 = 0, the value is 0 and nothing is built");
  SwitchState s;
  if (std::fabs(c.a1) <= std::fabs(c.a2)) {
    s.regime = 1;
    s.anchor = c.a2;
    s.ahat = c.a1 / c.a2;
  } else {
    s.regime = 2;
    s.anchor = c.a1;
    s.ahat = c.a2 / c.a1;
  }
  s.A1 = c.a1;
  s.A2 = c.a2;
  return s;
}

namespace {

void assemble(SwitchState& s) {
  if (s.regime == 1) {
    s.A1 = s.anchor * s.ahat;
    s.A2 = s.anchor;
  } else {
    s.A1 = s.anchor;
    s.A2 = s.anchor * s.ahat;
  }
}

}  // namespace

bool switching_step(const LinearUtilityCoeffs& c, SwitchState& s, double t, double b, double dt, double dB,
                    bool at_horizon, double* pre) {
  const double x = std::clamp(s.ahat, -2.0, 2.0);
  s.ahat += riccati_drift(c, s.regime, t, b, x) * dt + riccati_vol(c, s.regime, t, b, x) * dB;
  assemble(s);
  if (at_horizon || std::fabs(s.ahat) < 2.0) return false;
  if (pre) *pre = std::fabs(s.ahat);
  // the weight that stops moving becomes the anchor of the next regime
  s.anchor = s.regime == 1 ? s.A1 : s.A2;
  s.ahat = 1.0 / s.ahat;
  s.regime = 3 - s.regime;
  ++s.switches;
  assemble(s);
  return true;
}

SwitchingPath simulate_switching_path(const LinearUtilityCoeffs& c, double T, int steps, std::uint64_t seed,
                                      std::uint64_t path) {
  if (steps < 1 || !(T > 0)) throw DomainError("switching path: need T > 0 and steps >= 1");
  CounterRng rng(seed, path);
  SwitchingPath p;
  p.dt = T / steps;
  const double sdt = std::sqrt(p.dt);
  SwitchState s = switching_start(c);
  double b = 0.0;
  auto record = [&](double t, bool sw) {
    p.t.push_back(t);
    p.b.push_back(b);
    p.ahat.push_back(s.ahat);
    p.a1.push_back(s.A1);
    p.a2.push_back(s.A2);
    p.regime.push_back(s.regime);
    p.is_switch.push_back(sw);
  };
  record(0.0, false);
  for (int k = 0; k < steps; ++k) {
    const double t = k * p.dt, dB = sdt * rng.normal();
    const double A1 = s.A1, A2 = s.A2;
    SwitchState probe = s;
    // weights right after the Euler move, before any inversion
    {
      const double x = std::clamp(probe.ahat, -2.0, 2.0);
      probe.ahat += riccati_drift(c, probe.regime, t, b, x) * p.dt + riccati_vol(c, probe.regime, t, b, x) * dB;
      assemble(probe);
    }
    double pre = 0.0;
    const bool sw = switching_step(c, s, t, b, p.dt, dB, k + 1 == steps, &pre);
    b += dB;
    const double inc = std::max(std::fabs(probe.A1 - A1), std::fabs(probe.A2 - A2));
    if (sw) {
      p.switch_times.push_back((k + 1) * p.dt);
      p.pre_switch.push_back(pre);
      p.max_switch_jump =
          std::max(p.max_switch_jump, std::max(std::fabs(s.A1 - probe.A1), std::fabs(s.A2 - probe.A2)));
    }
    p.max_increment = std::max(p.max_increment, inc);
    record((k + 1) * p.dt, sw);
  }
  return p;
}

std::vector<SwitchingPath> build_linear_utility(const LinearUtilityCoeffs& c, double T, int steps, std::size_t M,
                                                std::uint64_t seed) {
  std::vector<SwitchingPath> out;
  out.reserve(M);
  for (std::size_t m = 0; m < M; ++m) out.push_back(simulate_switching_path(c, T, steps, seed, m));
  return out;
}

TreeLinearUtility build_linear_utility(const LinearUtilityCoeffs& c, const ScenarioTree& tree) {
  if (tree.mode() != TreeMode::Path || tree.dim() != 1)
    throw ModeError("linear utility on a tree needs a path-mode tree with d = 1");
  TreeLinearUtility u;
  const int n = tree.steps();
  const double dt = tree.grid().dt();
  u.state.resize(n + 1);
  u.state[0].push_back(switching_start(c));
  for (int k = 0; k < n; ++k) {
    u.state[k + 1].resize(tree.level_size(k + 1));
    for (std::size_t i = 0; i < tree.level_size(k); ++i) {
      const double b = tree.value(k, i)[0];
      for (int ch = 0; ch < 2; ++ch) {
        SwitchState s = u.state[k][i];
        switching_step(c, s, tree.grid().time(k), b, dt, tree.sign(ch, 0) * tree.sqrt_dt(), k + 1 == n);
        u.state[k + 1][tree.child(k, i, ch)] = s;
      }
    }
  }
  auto st = std::make_shared<std::vector<std::vector<SwitchState>>>(u.state);
  const double a1 = c.a1, a2 = c.a2;
  u.Phi.phi = [a1, a2](std::span<const double> y) { return a1 * y[0] + a2 * y[1]; };
  u.Phi.eval = [st](int level, std::size_t node, std::span<const double> y) {
    const auto& s = (*st)[level][node];
    return s.A1 * y[0] + s.A2 * y[1];
  };
  return u;
}

void write_switching_path_csv(std::ostream& os, const SwitchingPath& p) {
  CsvWriter w(os, {"t", "Ahat", "regime", "A1", "A2", "is_switch"});
  for (std::size_t k = 0; k < p.t.size(); ++k)
    w.row({p.t[k], p.ahat[k], static_cast<double>(p.regime[k]), p.a1[k], p.a2[k], p.is_switch[k] ? 1.0 : 0.0});
}

double fit_moment_constant(const LinearUtilityCoeffs& c, double T, int steps, std::size_t pilot,
                           std::uint64_t seed) {
  const SwitchState s0 = switching_start(c);
  struct Start {
    int regime;
    double x0;
  };
  std::vector<Start> starts{{s0.regime, s0.ahat}, {1, 0.5}, {1, -0.5}, {2, 0.5}, {2, -0.5}};
  const double dt = T / steps, sdt = std::sqrt(dt);
  double C = 0.0;
  for (std::size_t si = 0; si < starts.size(); ++si) {
    std::vector<double> acc(steps + 1, 0.0);
    for (std::size_t m = 0; m < pilot; ++m) {
      CounterRng rng(seed ^ 0xc0ffee, si * pilot + m);
      double x = starts[si].x0, b = 0.0, sup = 0.0;
      for (int k = 0; k < steps; ++k) {
        const double dB = sdt * rng.normal(), xc = std::clamp(x, -2.0, 2.0);
        x += riccati_drift(c, starts[si].regime, k * dt, b, xc) * dt +
             riccati_vol(c, starts[si].regime, k * dt, b, xc) * dB;
        b += dB;
        sup = std::max(sup, (x - starts[si].x0) * (x - starts[si].x0));
        acc[k + 1] += sup;
      }
    }
    for (int k = 1; k <= steps; ++k) C = std::max(C, acc[k] / pilot / (k * dt));
  }
  return 2.0 * C;
}

TauBoundReport verify_tau_bound(const LinearUtilityCoeffs& c, double T, int steps, int max_n, std::size_t M,
                                std::uint64_t seed, std::size_t pilot) {
  TauBoundReport rep;
  rep.paths = M;
  rep.C = fit_moment_constant(c, T, steps, pilot, seed);
  rep.delta = rep.C > 0 ? 1.0 / (2.0 * rep.C) : INFINITY;
  rep.m = std::isfinite(rep.delta) ? std::max(0, static_cast<int>(std::ceil(T / rep.delta - 1e-12)) - 1) : 0;
  std::vector<std::size_t> reach(max_n + 1, 0);
  std::vector<std::size_t> cond(max_n, 0), hit(max_n, 0);
  rep.band_low = INFINITY;
  rep.band_high = 0.0;
  for (std::size_t p = 0; p < M; ++p) {
    auto path = simulate_switching_path(c, T, steps, seed, p);
    const auto& tau = path.switch_times;
    for (int n = 1; n <= max_n; ++n) reach[n] += static_cast<int>(tau.size()) >= n;
    for (int k = 0; k < max_n; ++k) {
      const bool alive = k == 0 || static_cast<int>(tau.size()) >= k;
      if (!alive) continue;
      ++cond[k];
      const double start = k == 0 ? 0.0 : tau[k - 1];
      if (static_cast<int>(tau.size()) > k && tau[k] < std::min(T, start + rep.delta)) ++hit[k];
    }
    for (double pre : path.pre_switch) {
      rep.max_overshoot = std::max(rep.max_overshoot, pre - 2.0);
      rep.band_low = std::min(rep.band_low, 1.0 / pre);
      rep.band_high = std::max(rep.band_high, 1.0 / pre);
    }
    rep.max_switch_jump = std::max(rep.max_switch_jump, path.max_switch_jump);
    rep.max_increment = std::max(rep.max_increment, path.max_increment);
  }
  if (!std::isfinite(rep.band_low)) rep.band_low = rep.band_high = 0.5;
  rep.overshoot_ok = rep.max_overshoot <= 0.1;
  rep.band_ok = rep.band_low >= 0.5 - 0.1 && rep.band_high <= 0.5 + 1e-12;
  rep.continuity_ok = rep.max_switch_jump <= std::max(rep.max_increment, 1e-12);
  rep.pass = rep.overshoot_ok && rep.band_ok && rep.continuity_ok;
  for (int n = 1; n <= max_n; ++n) {
    TauBoundRow r;
    r.n = n;
    r.freq = static_cast<double>(reach[n]) / M;
    r.se = std::sqrt(r.freq * (1 - r.freq) / M);
    const double raw = std::pow(2.0 * n, rep.m) / std::pow(2.0, n);
    r.vacuous = raw >= 1.0;
    r.bound = std::min(1.0, raw);
    r.pass = r.freq <= r.bound + 3 * r.se;
    rep.pass = rep.pass && r.pass;
    rep.rows.push_back(r);
  }
  for (int k = 0; k < max_n; ++k) {
    StepBoundRow r;
    r.k = k;
    r.conditioned = cond[k];
    r.freq = cond[k] ? static_cast<double>(hit[k]) / cond[k] : 0.0;
    r.se = cond[k] ? std::sqrt(r.freq * (1 - r.freq) / cond[k]) : 0.0;
    r.pass = r.freq <= 0.5 + 3 * r.se;
    rep.pass = rep.pass && r.pass;
    rep.steps.push_back(r);
  }
  return rep;
}

namespace {

void probe_linear(const LinearUtilityCoeffs& c, const BSDEProblem& problem, const ScenarioTree& tree) {
  CounterRng rng(0x11ea4, 7);
  std::vector<double> y(2), z(2), zero(2, 0.0), f(2), f0(2);
  for (int p = 0; p < 64; ++p) {
    const int k = static_cast<int>(rng.next_u64() % tree.steps());
    const std::size_t i = rng.next_u64() % tree.level_size(k);
    const auto& u = problem.controls[rng.next_u64() % problem.controls.size()];
    for (int j = 0; j < 2; ++j) {
      y[j] = rng.uniform(-3, 3);
      z[j] = rng.uniform(-3, 3);
    }
    NodeContext ctx{&tree, k, i, tree.grid().time(k), tree.value(k, i)};
    std::fill(f.begin(), f.end(), 0.0);
    std::fill(f0.begin(), f0.end(), 0.0);
    problem.f(ctx, y, z, u, f);
    problem.f(ctx, zero, zero, u, f0);
    const double t = ctx.t, b = ctx.b[0];
    for (int r = 0; r < 2; ++r) {
      double lin = f0[r];
      for (int j = 0; j < 2; ++j) lin += c.alpha[r][j](t, b) * y[j] + c.beta[r][j](t, b) * z[j];
      if (std::fabs(lin - f[r]) > 1e-9 * (1 + std::fabs(f[r])))
        throw StructureError("check_linear_comparison: generator is not of the declared linear form");
    }
  }
}

}  // namespace

LinearComparisonReport check_linear_comparison(const LinearUtilityCoeffs& c, const TreeLinearUtility& util,
                                               const BSDEProblem& problem, const ScenarioTree& tree,
                                               const std::vector<TerminalPair>& pairs,
                                               const EnumerationOptions& opts, double tol) {
  if (problem.value_dim != 2) throw DomainError("check_linear_comparison: d' must be 2");
  if (tree.mode() != TreeMode::Path || tree.dim() != 1) throw ModeError("check_linear_comparison: path tree, d = 1");
  const int n = tree.steps();
  if (static_cast<int>(util.state.size()) != n + 1) throw DomainError("check_linear_comparison: utility/tree mismatch");
  probe_linear(c, problem, tree);

  LinearComparisonReport rep;
  rep.tolerance = tol;
  const double dt = tree.grid().dt(), sdt = tree.sqrt_dt();
  const std::size_t U = problem.controls.size();

  // per node coefficients of the reduced equation and per control the c-term
  std::vector<std::vector<double>> ah(n), bh(n);
  std::vector<std::vector<std::vector<double>>> cterm(n);
  std::vector<double> zero(2, 0.0), f(2);
  for (int k = 0; k < n; ++k) {
    const std::size_t L = tree.level_size(k);
    ah[k].resize(L);
    bh[k].resize(L);
    cterm[k].assign(L, std::vector<double>(U));
    for (std::size_t i = 0; i < L; ++i) {
      const auto& s = util.state[k][i];
      const double t = tree.grid().time(k), b = tree.value(k, i)[0];
      if (s.regime == 1) {
        ah[k][i] = c.alpha[0][1](t, b) * s.ahat + c.alpha[1][1](t, b);
        bh[k][i] = c.beta[0][1](t, b) * s.ahat + c.beta[1][1](t, b);
      } else {
        ah[k][i] = c.alpha[1][0](t, b) * s.ahat + c.alpha[0][0](t, b);
        bh[k][i] = c.beta[1][0](t, b) * s.ahat + c.beta[0][0](t, b);
      }
      if (1 + ah[k][i] * dt - std::fabs(bh[k][i]) * sdt < 0) rep.monotone_scheme = false;
      NodeContext ctx{&tree, k, i, t, tree.value(k, i)};
      for (std::size_t u = 0; u < U; ++u) {
        std::fill(f.begin(), f.end(), 0.0);
        problem.f(ctx, zero, zero, problem.controls[u], f);
        cterm[k][i][u] = s.A1 * f[0] + s.A2 * f[1];
      }
    }
  }

  // slots in canonical order: levels ascending, nodes ascending
  struct Slot {
    int level;
    std::size_t node;
  };
  std::vector<Slot> slots;
  for (int k = 0; k < n; ++k) {
    if (problem.policy_space == PolicySpace::LevelWise) {
      slots.push_back({k, 0});
    } else {
      for (std::size_t i = 0; i < tree.level_size(k); ++i) slots.push_back({k, i});
    }
  }
  const double logc = slots.size() * std::log10(static_cast<double>(U));
  if (U > 1 && logc > std::log10(static_cast<double>(opts.cap)) + 1e-12) {
    std::ostringstream os;
    os << "check_linear_comparison needs 10^" << logc << " policies, above the cap " << opts.cap;
    throw SizeError(os.str());
  }
  std::vector<std::vector<std::size_t>> slot_of(n);
  for (int k = 0; k < n; ++k) slot_of[k].assign(tree.level_size(k), 0);
  {
    std::size_t p = 0;
    for (int k = 0; k < n; ++k) {
      if (problem.policy_space == PolicySpace::LevelWise) {
        std::fill(slot_of[k].begin(), slot_of[k].end(), p++);
      } else {
        for (std::size_t i = 0; i < tree.level_size(k); ++i) slot_of[k][i] = p++;
      }
    }
  }

  auto reduced = [&](const TreeRandomVariable& xi, const std::vector<std::uint32_t>& ch,
                     std::vector<std::vector<double>>& Y) {
    Y.resize(n + 1);
    Y[n].resize(tree.level_size(n));
    for (std::size_t i = 0; i < Y[n].size(); ++i) {
      const auto& s = util.state[n][i];
      Y[n][i] = s.A1 * xi.at(i)[0] + s.A2 * xi.at(i)[1];
    }
    for (int k = n - 1; k >= 0; --k) {
      Y[k].resize(tree.level_size(k));
      for (std::size_t i = 0; i < Y[k].size(); ++i) {
        const double ym = Y[k + 1][tree.child(k, i, 0)], yp = Y[k + 1][tree.child(k, i, 1)];
        const double ey = 0.5 * (ym + yp), ez = 0.5 * (yp - ym) / sdt;
        Y[k][i] = ey + (ah[k][i] * ey + bh[k][i] * ez + cterm[k][i][ch[slot_of[k][i]]]) * dt;
      }
    }
  };

  std::size_t policies = 0;
  std::vector<std::vector<double>> Ya, Yb;
  std::vector<std::uint32_t> ch(slots.size(), 0);
  rep.worst_slack = INFINITY;
  bool gap_done = false;
  for (const auto& pr : pairs) {
    bool premise = true;
    for (std::size_t i = 0; i < tree.level_size(n) && premise; ++i)
      premise = util.Phi(n, i, pr.eta.at(i)) <= util.Phi(n, i, pr.eta_tilde.at(i)) + tol;
    if (!premise) {
      ++rep.skipped;
      continue;
    }
    ++rep.pairs_tested;
    std::vector<std::vector<double>> best_a(n), best_b(n);
    for (int k = 0; k < n; ++k) {
      best_a[k].assign(tree.level_size(k), -INFINITY);
      best_b[k].assign(tree.level_size(k), -INFINITY);
    }
    std::fill(ch.begin(), ch.end(), 0);
    policies = 0;
    while (true) {
      ++policies;
      reduced(pr.eta, ch, Ya);
      reduced(pr.eta_tilde, ch, Yb);
      bool bad = false;
      for (int k = 0; k < n; ++k)
        for (std::size_t i = 0; i < Ya[k].size(); ++i) {
          const double s = Yb[k][i] - Ya[k][i];
          rep.worst_slack = std::min(rep.worst_slack, s);
          bad = bad || s < -tol;
          best_a[k][i] = std::max(best_a[k][i], Ya[k][i]);
          best_b[k][i] = std::max(best_b[k][i], Yb[k][i]);
        }
      rep.policy_violations += bad;
      if (!gap_done) {
        ControlPolicy pol;
        pol.space = problem.policy_space;
        pol.choice.resize(n);
        for (int k = 0; k < n; ++k) {
          pol.choice[k].resize(problem.policy_space == PolicySpace::LevelWise ? 1 : tree.level_size(k));
          for (std::size_t i = 0; i < pol.choice[k].size(); ++i) pol.choice[k][i] = ch[slot_of[k][i]];
        }
        auto sol = solve_bsde(problem, tree, pol, n, pr.eta);
        for (int k = 0; k <= n; ++k)
          for (std::size_t i = 0; i < tree.level_size(k); ++i)
            rep.reduction_gap = std::max(rep.reduction_gap, std::fabs(Ya[k][i] - util.Phi(k, i, sol.Y[k].at(i))));
        gap_done = true;
      }
      std::size_t p = ch.size();
      while (p > 0 && ch[p - 1] + 1 == U) ch[--p] = 0;
      if (p == 0) break;
      ++ch[p - 1];
    }
    bool value_bad = false;
    for (int k = 0; k < n; ++k)
      for (std::size_t i = 0; i < best_a[k].size(); ++i) value_bad = value_bad || best_a[k][i] > best_b[k][i] + tol;
    rep.value_violations += value_bad;
  }
  rep.policies = policies;
  if (rep.pairs_tested == 0) rep.worst_slack = 0.0;
  return rep;
}

std::vector<TerminalPair> linear_pairs(const TreeLinearUtility& util, const TreeRandomVariable& xi,
                                       std::size_t count, double scale, std::uint64_t seed) {
  const int n = xi.level;
  std::vector<TerminalPair> out;
  for (std::size_t p = 0; p < count; ++p) {
    CounterRng rng(seed, p);
    TerminalPair pr{xi, xi};
    for (std::size_t i = 0; i < xi.size(); ++i) {
      const auto& s = util.state[n][i];
      const double A[2] = {s.A1, s.A2};
      const double nn = A[0] * A[0] + A[1] * A[1];
      double d[2] = {rng.uniform(-scale, scale), rng.uniform(-scale, scale)};
      const double proj = A[0] * d[0] + A[1] * d[1];
      const double lift = (proj < 0 ? -proj / nn : 0.0) + rng.uniform(0.0, scale) / std::sqrt(nn);
      for (int j = 0; j < 2; ++j) pr.eta_tilde.at(i)[j] += d[j] + lift * A[j];
    }
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace dynbsde
