#include "dynbsde/master.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dynbsde/detail/engine.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/rng.hpp"

namespace dynbsde {

ForwardValueResult forward_value(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                 const TreeRandomVariable& eta, const EnumerationOptions& opts) {
  if (eta.level != k) throw DomainError("forward_value: eta is not at level k");
  auto r = static_value_at(problem, tree, k, eta, opts);
  return {r.value, r.heuristic, r.evaluated};
}

ForwardDppReport check_forward_dpp(const BSDEProblem& problem, const ScenarioTree& tree, int k1, int k2,
                                   const TreeRandomVariable& eta, const EnumerationOptions& opts) {
  if (!(0 <= k1 && k1 <= k2 && k2 <= tree.steps())) throw DomainError("forward DPP: need 0 <= t1 <= t2 <= n");
  ForwardDppReport rep;
  rep.k1 = k1;
  rep.k2 = k2;
  auto full = forward_value(problem, tree, k2, eta, opts);
  rep.psi = full.value;
  rep.heuristic = full.heuristic;
  if (k1 == k2) {
    rep.composed = rep.psi;
    return rep;
  }
  detail::BackwardEngine eng(problem, tree, k1, k2, eta);
  auto inner = [&] {
    auto r = forward_value(problem, tree, k1, eng.Y(k1), opts);
    rep.heuristic = rep.heuristic || r.heuristic;
    return r.value;
  };
  double best = -INFINITY;
  if (eng.within_cap(opts.cap)) {
    do {
      best = std::max(best, inner());
      ++rep.segment_policies;
    } while (eng.advance());
  } else if (opts.fallback) {
    rep.heuristic = true;
    std::vector<std::uint32_t> cur(eng.slot_count(), 0);
    eng.set_all(cur);
    best = inner();
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      bool improved = false;
      for (std::size_t p : eng.canonical_order()) {
        for (std::uint32_t c = 0; c < eng.choices(); ++c) {
          if (c == cur[p]) continue;
          eng.set_slot(p, c);
          double v = inner();
          ++rep.segment_policies;
          if (v > best + opts.tie_tol * std::max(1.0, std::fabs(best))) {
            best = v;
            cur[p] = c;
            improved = true;
          }
        }
        eng.set_slot(p, cur[p]);
      }
      if (!improved) break;
    }
  } else {
    std::ostringstream os;
    os << "forward DPP segment needs 10^" << eng.log10_count() << " policies, above the cap " << opts.cap;
    throw SizeError(os.str());
  }
  rep.composed = best;
  rep.residual = std::fabs(rep.psi - rep.composed);
  return rep;
}

LipschitzReport check_lipschitz(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                const std::vector<EtaPair>& pairs, const EnumerationOptions& opts) {
  LipschitzReport rep;
  const double L = problem.lipschitz, dt = tree.grid().dt();
  rep.bound = problem.phi_lipschitz * std::exp((L + 0.5 * L * L + 0.5 * L * L * dt) * tree.grid().time(k));
  for (const auto& [a, b] : pairs) {
    TreeRandomVariable diff = a;
    for (std::size_t j = 0; j < diff.values.size(); ++j) diff.values[j] -= b.values[j];
    const double d = l2_norm(tree, diff);
    if (d == 0.0) {
      ++rep.skipped;
      continue;
    }
    ++rep.pairs;
    const double va = forward_value(problem, tree, k, a, opts).value;
    const double vb = forward_value(problem, tree, k, b, opts).value;
    rep.max_ratio = std::max(rep.max_ratio, std::fabs(va - vb) / d);
  }
  rep.pass = rep.max_ratio <= rep.bound * (1 + 1e-12);
  return rep;
}

std::vector<EtaPair> random_eta_pairs(const ScenarioTree& tree, int k, int dim, std::size_t count, double s,
                                      std::uint64_t seed) {
  std::vector<EtaPair> out;
  for (std::size_t p = 0; p < count; ++p) {
    CounterRng rng(seed, p);
    TreeRandomVariable a(k, dim, tree.level_size(k)), b = a;
    for (std::size_t j = 0; j < a.values.size(); ++j) {
      a.values[j] = rng.normal();
      b.values[j] = a.values[j] + s * rng.normal();
    }
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

CylinderFunctional cylinder_power(int p) {
  CylinderFunctional c;
  c.name = "B^" + std::to_string(p);
  c.value = [p](const DiscretePath& w) { return std::pow(w.current()[0], p); };
  c.d_t = [](const DiscretePath&) { return 0.0; };
  c.d_omega = [p](const DiscretePath& w) { return p ? p * std::pow(w.current()[0], p - 1) : 0.0; };
  c.d_omega2 = [p](const DiscretePath& w) { return p > 1 ? p * (p - 1) * std::pow(w.current()[0], p - 2) : 0.0; };
  return c;
}

CylinderFunctional cylinder_time_b() {
  CylinderFunctional c;
  c.name = "tB";
  c.value = [](const DiscretePath& w) { return w.time() * w.current()[0]; };
  c.d_t = [](const DiscretePath& w) { return w.current()[0]; };
  c.d_omega = [](const DiscretePath& w) { return w.time(); };
  c.d_omega2 = [](const DiscretePath&) { return 0.0; };
  return c;
}

CylinderFunctional cylinder_constant(double v) {
  CylinderFunctional c;
  c.name = "const";
  c.value = [v](const DiscretePath&) { return v; };
  c.d_t = c.d_omega = c.d_omega2 = [](const DiscretePath&) { return 0.0; };
  return c;
}

PathProbeReport path_derivative_probe(const CylinderFunctional& eta, const ScenarioTree& tree, double threshold,
                                      bool throw_on_fail) {
  if (tree.dim() != 1) throw DomainError("path derivative probe: d = 1 only");
  if (eta.path_dependent && tree.mode() != TreeMode::Path)
    throw ModeError("path-dependent cylinder needs a path-mode tree");
  PathProbeReport rep;
  const double dt = tree.grid().dt();
  rep.threshold = threshold >= 0 ? threshold : 10.0 * dt;
  for (int k = 0; k < tree.steps(); ++k)
    for (std::size_t i = 0; i < tree.level_size(k); ++i) {
      const auto w = tree.path(k, i);
      const double v = eta.value(w), a = eta.d_t(w), g = eta.d_omega(w), h = eta.d_omega2(w);
      for (int c = 0; c < tree.branching(); ++c) {
        const std::size_t ch = tree.child(k, i, c);
        const double dB = tree.value(k + 1, ch)[0] - tree.value(k, i)[0];
        const double r = std::fabs(eta.value(tree.path(k + 1, ch)) - v - (a * dt + g * dB + 0.5 * h * dt));
        if (r > rep.max_residual) {
          rep.max_residual = r;
          rep.worst_level = k;
        }
      }
    }
  rep.valid = rep.max_residual <= rep.threshold;
  if (!rep.valid && throw_on_fail) {
    std::ostringstream os;
    os << "cylinder '" << eta.name << "' fails the functional Ito probe: residual " << rep.max_residual
       << " above " << rep.threshold;
    throw InvalidCylinderError(os.str());
  }
  return rep;
}

TreeRandomVariable cylinder_rv(const CylinderFunctional& eta, const ScenarioTree& tree, int k) {
  return level_functional(tree, k, PathFunctional{eta.value, eta.path_dependent});
}

double master_plus_rhs(const BSDEProblem& problem, const ScenarioTree& tree, int k, const TreeRandomVariable& eta,
                       const std::vector<double>& gradient) {
  const int dy = problem.value_dim;
  std::vector<double> z(static_cast<std::size_t>(dy) * tree.dim(), 0.0), f(dy);
  double s = 0.0;
  for (std::size_t i = 0; i < tree.level_size(k); ++i) {
    NodeContext ctx{&tree, k, i, tree.grid().time(k), tree.value(k, i)};
    double best = -INFINITY;
    for (const auto& u : problem.controls) {
      std::fill(f.begin(), f.end(), 0.0);
      problem.f(ctx, eta.at(i), z, u, f);
      double v = 0.0;
      for (int r = 0; r < dy; ++r) v += gradient[i * dy + r] * f[r];
      best = std::max(best, v);
    }
    s += best;
  }
  return s;
}

namespace {

std::vector<double> bump_gradient(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                  const TreeRandomVariable& eta, double bump, const EnumerationOptions& opts) {
  std::vector<double> g(eta.values.size());
  TreeRandomVariable e = eta;
  for (std::size_t j = 0; j < e.values.size(); ++j) {
    const double x = eta.values[j], h = bump * (1 + std::fabs(x));
    e.values[j] = x + h;
    const double up = forward_value(problem, tree, k, e, opts).value;
    e.values[j] = x - h;
    const double dn = forward_value(problem, tree, k, e, opts).value;
    e.values[j] = x;
    g[j] = (up - dn) / (2 * h);
  }
  return g;
}

}  // namespace

MasterResidual master_residual(const BSDEProblem& problem, const ScenarioTree& tree, const CylinderFunctional& eta,
                               int k, const MasterConfig& config, const EnumerationOptions& opts) {
  if (problem.value_dim != 1 || tree.dim() != 1) throw DomainError("master residual: d' = 1 and d = 1 only");
  if (k < 1 || k > tree.steps()) throw DomainError("master residual: need 1 <= t <= n (left derivative)");
  if (config.probe) path_derivative_probe(eta, tree);
  MasterResidual r;
  r.level = k;
  r.dt = tree.grid().dt();
  const auto ek = cylinder_rv(eta, tree, k);
  r.psi = forward_value(problem, tree, k, ek, opts).value;
  // eta at time t on the path stopped at t - dt
  TreeRandomVariable frozen(k - 1, 1, tree.level_size(k - 1));
  for (std::size_t j = 0; j < frozen.size(); ++j) {
    auto w = tree.path(k - 1, j);
    w.level = k;
    if (w.full) {
      auto last = w.at(k - 1);
      std::vector<double> row(last.begin(), last.end());
      w.points.insert(w.points.end(), row.begin(), row.end());
    }
    frozen.at(j)[0] = eta.value(w);
  }
  r.d_minus_t = (r.psi - forward_value(problem, tree, k - 1, frozen, opts).value) / r.dt;
  r.gradient = bump_gradient(problem, tree, k, ek, config.bump, opts);
  std::vector<double> z(1), f(1);
  for (std::size_t i = 0; i < tree.level_size(k); ++i) {
    const auto w = tree.path(k, i);
    r.drift_term += r.gradient[i] * (eta.d_t(w) + 0.5 * eta.d_omega2(w));
    z[0] = eta.d_omega(w);
    NodeContext ctx{&tree, k, i, tree.grid().time(k), tree.value(k, i)};
    double best = -INFINITY;
    for (const auto& u : problem.controls) {
      f[0] = 0.0;
      problem.f(ctx, ek.at(i), z, u, f);
      best = std::max(best, r.gradient[i] * f[0]);
    }
    r.sup_term += best;
  }
  r.residual = r.d_minus_t - r.drift_term - r.sup_term;
  return r;
}

IllposedReport illposed_demo(const BSDEProblem& p1, const BSDEProblem& p2, const ScenarioTree& tree, double delta,
                             const EnumerationOptions& opts) {
  if (p1.value_dim != p2.value_dim || p1.controls != p2.controls)
    throw StructureError("ill-posed demo: problems must share dimension and controls");
  const int dy = p1.value_dim, d = tree.dim(), n = tree.steps();
  CounterRng rng(0x111, 1);
  std::vector<double> y(dy), z0(static_cast<std::size_t>(dy) * d, 0.0), a(dy), b(dy);
  for (int p = 0; p < 128; ++p) {
    const int k = static_cast<int>(rng.next_u64() % n);
    const std::size_t i = rng.next_u64() % tree.level_size(k);
    for (double& v : y) v = rng.uniform(-3, 3);
    NodeContext ctx{&tree, k, i, tree.grid().time(k), tree.value(k, i)};
    for (const auto& u : p1.controls) {
      std::fill(a.begin(), a.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
      p1.f(ctx, y, z0, u, a);
      p2.f(ctx, y, z0, u, b);
      if (std::memcmp(a.data(), b.data(), sizeof(double) * dy) != 0)
        throw StructureError("ill-posed demo: generators differ at z = 0");
    }
  }
  IllposedReport rep;
  rep.delta = delta;
  rep.psi1 = forward_value(p1, tree, n, terminal_rv(p1, tree), opts).value;
  rep.psi2 = forward_value(p2, tree, n, terminal_rv(p2, tree), opts).value;
  rep.gap = std::fabs(rep.psi1 - rep.psi2);
  rep.level = std::max(1, n / 2);
  const auto eta = conditional_expectation(tree, terminal_rv(p1, tree), rep.level);
  const auto grad = bump_gradient(p1, tree, rep.level, eta, 1e-4, opts);
  rep.rhs1 = master_plus_rhs(p1, tree, rep.level, eta, grad);
  rep.rhs2 = master_plus_rhs(p2, tree, rep.level, eta, grad);
  rep.rhs_identical = std::memcmp(&rep.rhs1, &rep.rhs2, sizeof(double)) == 0;
  rep.witness = rep.rhs_identical && rep.gap >= delta;
  return rep;
}

std::pair<BSDEProblem, BSDEProblem> illposed_pair() {
  BSDEProblem p;
  p.name = "illposed-f1";
  p.value_dim = 1;
  p.controls = {{0.0}};
  p.lipschitz = 1.0;
  p.xi = [](const NodeContext& ctx, std::span<double> out) { out[0] = ctx.b[0]; };
  p.phi = [](std::span<const double> y) { return y[0]; };
  p.f = [](const NodeContext&, std::span<const double>, std::span<const double>, std::span<const double>,
           std::span<double> out) { out[0] = 0.0; };
  BSDEProblem q = p;
  q.name = "illposed-f2";
  q.f = [](const NodeContext&, std::span<const double>, std::span<const double> z, std::span<const double>,
           std::span<double> out) { out[0] = z[0]; };
  return {p, q};
}

}  // namespace dynbsde
