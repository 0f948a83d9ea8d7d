#include "dynbsde/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dynbsde/detail/engine.hpp"
#include "dynbsde/errors.hpp"
#include "dynbsde/rng.hpp"

namespace dynbsde {

namespace detail {

BackwardEngine::BackwardEngine(const BSDEProblem& problem, const ScenarioTree& tree, int k0, int K,
                               const TreeRandomVariable& eta, std::optional<std::size_t> root)
    : problem_(problem), tree_(tree), k0_(k0), K_(K), dy_(problem.value_dim), d_(tree.dim()) {
  if (problem.controls.empty()) throw DomainError("problem has an empty control set");
  if (k0 < 0 || k0 > K || K > tree.steps()) throw DomainError("levels must satisfy 0 <= k0 <= K <= n");
  if (eta.level != K) throw DomainError("terminal variable is not defined at the terminal level");
  if (eta.dim != dy_ || eta.size() != tree.level_size(K))
    throw DomainError("terminal variable has the wrong shape for this tree/problem");

  const int L = K - k0 + 1;
  nodes_.resize(L);
  if (root) {
    if (*root >= tree.level_size(k0)) throw DomainError("subtree root outside level");
    nodes_[0] = {*root};
    const int b = tree.branching();
    for (int m = k0; m < K; ++m) {
      auto& nxt = nodes_[m - k0 + 1];
      for (std::size_t i : nodes_[m - k0])
        for (int c = 0; c < b; ++c) nxt.push_back(tree.child(m, i, c));
      std::sort(nxt.begin(), nxt.end());
      nxt.erase(std::unique(nxt.begin(), nxt.end()), nxt.end());
    }
  } else {
    for (int m = k0; m <= K; ++m) {
      auto& v = nodes_[m - k0];
      v.resize(tree.level_size(m));
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    }
  }
  Y_.resize(L);
  Zbuf_.resize(L);
  for (int m = k0; m < K; ++m) {
    Y_[m - k0] = TreeRandomVariable(m, dy_, tree.level_size(m));
    Zbuf_[m - k0].assign(tree.level_size(m) * dy_ * d_, 0.0);
  }
  Y_[L - 1] = eta;

  for (int m = K - 1; m >= k0; --m) {
    const auto& nl = nodes_[m - k0];
    if (problem.policy_space == PolicySpace::LevelWise) {
      slots_.push_back({m, 0, nl.size()});
    } else {
      for (std::size_t j = 0; j < nl.size(); ++j) slots_.push_back({m, j, 1});
    }
  }
  // canonical order: levels ascending, nodes ascending
  for (int m = k0; m < K; ++m)
    for (std::size_t p = 0; p < slots_.size(); ++p)
      if (slots_[p].level == m) canonical_.push_back(p);

  ey_.resize(dy_);
  z_.resize(static_cast<std::size_t>(dy_) * d_);
  fout_.resize(dy_);
  choice_.assign(slots_.size(), 0);
  for (std::size_t p = 0; p < slots_.size(); ++p) compute_slot(p);
}

bool BackwardEngine::within_cap(std::uint64_t cap) const {
  if (slots_.empty() || choices() <= 1) return true;
  return log10_count() <= std::log10(static_cast<double>(cap)) + 1e-12;
}

std::span<const double> BackwardEngine::Z(int level, std::size_t node) const {
  std::size_t b = static_cast<std::size_t>(dy_) * d_;
  return {Zbuf_[level - k0_].data() + node * b, b};
}

void BackwardEngine::compute_node(int m, std::size_t i, std::uint32_t c) {
  const int b = tree_.branching();
  const auto& next = Y_[m - k0_ + 1];
  std::fill(ey_.begin(), ey_.end(), 0.0);
  std::fill(z_.begin(), z_.end(), 0.0);
  for (int ch = 0; ch < b; ++ch) {
    auto yc = next.at(tree_.child(m, i, ch));
    for (int r = 0; r < dy_; ++r) {
      ey_[r] += yc[r];
      for (int j = 0; j < d_; ++j) z_[r * d_ + j] += tree_.sign(ch, j) * yc[r];
    }
  }
  const double inv_b = 1.0 / b;
  const double zscale = 1.0 / (b * tree_.sqrt_dt());
  for (int r = 0; r < dy_; ++r) ey_[r] *= inv_b;
  for (auto& v : z_) v *= zscale;
  NodeContext ctx{&tree_, m, i, tree_.grid().time(m), tree_.value(m, i)};
  std::fill(fout_.begin(), fout_.end(), 0.0);
  problem_.f(ctx, ey_, z_, problem_.controls[c], fout_);
  const double dt = tree_.grid().dt();
  auto out = Y_[m - k0_].at(i);
  for (int r = 0; r < dy_; ++r) out[r] = ey_[r] + fout_[r] * dt;
  std::copy(z_.begin(), z_.end(), Zbuf_[m - k0_].begin() + i * z_.size());
}

void BackwardEngine::compute_slot(std::size_t p) {
  const auto& s = slots_[p];
  const auto& nl = nodes_[s.level - k0_];
  for (std::size_t j = s.first; j < s.first + s.count; ++j) compute_node(s.level, nl[j], choice_[p]);
}

void BackwardEngine::set_all(const std::vector<std::uint32_t>& choice) {
  if (choice.size() != slots_.size()) throw DomainError("policy does not match the slot layout");
  for (auto c : choice)
    if (c >= choices()) throw DomainError("policy control index out of range");
  choice_ = choice;
  for (std::size_t p = 0; p < slots_.size(); ++p) compute_slot(p);
}

void BackwardEngine::set_slot(std::size_t p, std::uint32_t c) {
  choice_[p] = c;
  for (std::size_t q = p; q < slots_.size(); ++q) compute_slot(q);
}

bool BackwardEngine::advance() {
  const std::uint32_t U = choices();
  for (std::size_t p = slots_.size(); p-- > 0;) {
    if (choice_[p] + 1 < U) {
      ++choice_[p];
      for (std::size_t q = p; q < slots_.size(); ++q) compute_slot(q);
      return true;
    }
    choice_[p] = 0;
  }
  return false;
}

ControlPolicy BackwardEngine::to_policy(const std::vector<std::uint32_t>& choice) const {
  ControlPolicy pol;
  pol.space = problem_.policy_space;
  pol.choice.resize(K_);
  for (int m = 0; m < K_; ++m)
    pol.choice[m].assign(pol.space == PolicySpace::LevelWise ? 1 : tree_.level_size(m), 0);
  for (std::size_t p = 0; p < slots_.size(); ++p) {
    const auto& s = slots_[p];
    if (pol.space == PolicySpace::LevelWise) {
      pol.choice[s.level][0] = choice[p];
    } else {
      pol.choice[s.level][nodes_[s.level - k0_][s.first]] = choice[p];
    }
  }
  return pol;
}

std::vector<std::uint32_t> BackwardEngine::choice_from(
    const std::function<std::uint32_t(int, std::size_t)>& rule) const {
  std::vector<std::uint32_t> c(slots_.size());
  for (std::size_t p = 0; p < slots_.size(); ++p)
    c[p] = rule(slots_[p].level, nodes_[slots_[p].level - k0_][slots_[p].first]);
  return c;
}

bool BackwardEngine::canonical_less(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) const {
  for (std::size_t q : canonical_)
    if (a[q] != b[q]) return a[q] < b[q];
  return false;
}

}  // namespace detail

ControlPolicy ControlPolicy::constant(const ScenarioTree& tree, int levels, PolicySpace space, std::uint32_t idx) {
  ControlPolicy p;
  p.space = space;
  p.choice.resize(levels);
  for (int m = 0; m < levels; ++m) p.choice[m].assign(space == PolicySpace::LevelWise ? 1 : tree.level_size(m), idx);
  return p;
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

void validate_lipschitz(const BSDEProblem& problem, const ScenarioTree& tree, int probes, std::uint64_t seed) {
  if (!problem.f) throw ProblemValidationError("problem has no generator");
  if (problem.controls.empty()) throw ProblemValidationError("problem has an empty control set");
  const int dy = problem.value_dim, d = tree.dim();
  CounterRng rng(seed, 17);
  std::vector<double> y1(dy), y2(dy), z1(dy * d), z2(dy * d), f1(dy), f2(dy), dyv(dy), dzv(dy * d), df(dy);
  const double L = problem.lipschitz;
  for (int p = 0; p < probes; ++p) {
    int level = static_cast<int>(rng.next_u64() % tree.steps());
    std::size_t node = rng.next_u64() % tree.level_size(level);
    std::size_t u = rng.next_u64() % problem.controls.size();
    for (auto& v : y1) v = rng.uniform(-3, 3);
    for (auto& v : z1) v = rng.uniform(-3, 3);
    double h = std::pow(10.0, rng.uniform(-4, 0));
    for (int r = 0; r < dy; ++r) y2[r] = y1[r] + h * rng.uniform(-1, 1);
    for (std::size_t r = 0; r < z1.size(); ++r) z2[r] = z1[r] + h * rng.uniform(-1, 1);
    NodeContext ctx{&tree, level, node, tree.grid().time(level), tree.value(level, node)};
    std::fill(f1.begin(), f1.end(), 0.0);
    std::fill(f2.begin(), f2.end(), 0.0);
    problem.f(ctx, y1, z1, problem.controls[u], f1);
    problem.f(ctx, y2, z2, problem.controls[u], f2);
    for (int r = 0; r < dy; ++r) {
      dyv[r] = y1[r] - y2[r];
      df[r] = f1[r] - f2[r];
    }
    for (std::size_t r = 0; r < z1.size(); ++r) dzv[r] = z1[r] - z2[r];
    double lhs = norm(df), rhs = L * (norm(dyv) + norm(dzv));
    if (!(lhs <= rhs * (1 + 1e-9) + 1e-12)) {
      std::ostringstream os;
      os << "Lipschitz probe failed for '" << problem.name << "': |df|=" << lhs << " > L*(|dy|+|dz|)=" << rhs
         << " with declared L=" << L;
      throw ProblemValidationError(os.str());
    }
  }
}

std::string stability_warning(const BSDEProblem& problem, const ScenarioTree& tree) {
  const double dt = tree.grid().dt();
  if (problem.lipschitz > 0 && !(dt < 1.0 / (2.0 * problem.lipschitz))) {
    std::ostringstream os;
    os << "explicit scheme: dt=" << dt << " is not below 1/(2L)=" << 1.0 / (2.0 * problem.lipschitz)
       << "; monotonicity of the scheme is not guaranteed";
    return os.str();
  }
  return {};
}

TreeRandomVariable terminal_rv(const BSDEProblem& problem, const ScenarioTree& tree) {
  if (!problem.xi) throw DomainError("problem has no terminal condition");
  const int n = tree.steps();
  TreeRandomVariable rv(n, problem.value_dim, tree.level_size(n));
  for (std::size_t i = 0; i < rv.size(); ++i) {
    NodeContext ctx{&tree, n, i, tree.grid().T, tree.value(n, i)};
    problem.xi(ctx, rv.at(i));
  }
  return rv;
}

BSDESolution solve_bsde(const BSDEProblem& problem, const ScenarioTree& tree, const ControlPolicy& policy,
                        int terminal_level, const TreeRandomVariable& eta) {
  validate_lipschitz(problem, tree);
  if (static_cast<int>(policy.choice.size()) < terminal_level)
    throw DomainError("policy does not cover levels below the terminal level");
  for (int m = 0; m < terminal_level; ++m) {
    std::size_t want = policy.space == PolicySpace::LevelWise ? 1 : tree.level_size(m);
    if (policy.choice[m].size() != want) throw DomainError("policy level size does not match the tree");
  }
  BSDEProblem local = problem;
  local.policy_space = policy.space;
  detail::BackwardEngine eng(local, tree, 0, terminal_level, eta);
  std::vector<std::uint32_t> choice(eng.slot_count());
  // slots run deepest level first; rebuild from the policy
  {
    std::size_t p = 0;
    for (int m = terminal_level - 1; m >= 0; --m) {
      if (policy.space == PolicySpace::LevelWise) {
        choice[p++] = policy.choice[m][0];
      } else {
        for (std::size_t i = 0; i < tree.level_size(m); ++i) choice[p++] = policy.choice[m][i];
      }
    }
  }
  eng.set_all(choice);
  BSDESolution sol;
  sol.value_dim = problem.value_dim;
  sol.bm_dim = tree.dim();
  for (int m = 0; m <= terminal_level; ++m) sol.Y.push_back(eng.Y(m));
  for (int m = 0; m < terminal_level; ++m) {
    std::vector<double> z;
    for (std::size_t i = 0; i < tree.level_size(m); ++i) {
      auto zi = eng.Z(m, i);
      z.insert(z.end(), zi.begin(), zi.end());
    }
    sol.Z.push_back(std::move(z));
  }
  if (auto w = stability_warning(problem, tree); !w.empty()) sol.warnings.push_back(w);
  return sol;
}

BSDESolution solve_bsde(const BSDEProblem& problem, const ScenarioTree& tree, const ControlPolicy& policy) {
  return solve_bsde(problem, tree, policy, tree.steps(), terminal_rv(problem, tree));
}

StaticValueResult static_value_at(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                  const TreeRandomVariable& eta, const EnumerationOptions& opts) {
  validate_lipschitz(problem, tree);
  if (!problem.phi) throw DomainError("problem has no utility");
  detail::BackwardEngine eng(problem, tree, 0, k, eta);
  StaticValueResult res;
  if (auto w = stability_warning(problem, tree); !w.empty()) res.warnings.push_back(w);
  auto phi0 = [&] { return problem.phi(eng.Y(0).at(0)); };
  if (eng.within_cap(opts.cap)) {
    detail::BestTracker best;
    do {
      best.offer(phi0(), eng.choice(), eng, opts.tie_tol);
      ++res.evaluated;
    } while (eng.advance());
    eng.set_all(best.choice);
    res.value = phi0();
    res.policy = eng.to_policy(best.choice);
  } else if (opts.fallback) {
    res.heuristic = true;
    res.warnings.push_back("policy count above cap; coordinate-ascent fallback used (heuristic)");
    double best = phi0();
    res.evaluated = 1;
    const std::uint32_t U = eng.choices();
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      bool changed = false;
      for (std::size_t p : eng.canonical_order()) {
        std::uint32_t keep = eng.choice()[p];
        const std::uint32_t orig = keep;
        for (std::uint32_t c = 0; c < U; ++c) {
          if (c == orig) continue;
          eng.set_slot(p, c);
          ++res.evaluated;
          double v = phi0();
          if (v > best + opts.tie_tol * std::max(1.0, std::fabs(best))) {
            best = v;
            keep = c;
            changed = true;
          }
        }
        eng.set_slot(p, keep);
      }
      if (!changed) break;
    }
    res.value = phi0();
    res.policy = eng.to_policy(eng.choice());
  } else {
    std::ostringstream os;
    os << "policy enumeration needs 10^" << eng.log10_count() << " policies, above the cap " << opts.cap
       << "; enable the coordinate-ascent fallback or shrink the problem";
    throw SizeError(os.str());
  }
  auto y0 = eng.Y(0).at(0);
  res.y0.assign(y0.begin(), y0.end());
  return res;
}

StaticValueResult static_value(const BSDEProblem& problem, const ScenarioTree& tree, const EnumerationOptions& opts) {
  return static_value_at(problem, tree, tree.steps(), terminal_rv(problem, tree), opts);
}

PointSet dedupe_points(PointSet pts, double tol) {
  std::sort(pts.begin(), pts.end());
  PointSet out;
  for (auto& p : pts) {
    bool dup = false;
    for (std::size_t q = out.size(); q-- > 0;) {
      const auto& o = out[q];
      if (p[0] - o[0] > tol) break;
      double m = 0.0;
      for (std::size_t r = 0; r < p.size(); ++r) m = std::max(m, std::fabs(p[r] - o[r]));
      if (m <= tol) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(std::move(p));
  }
  return out;
}

std::vector<PointSet> reachable_set_between(const BSDEProblem& problem, const ScenarioTree& tree, int k, int K,
                                            const TreeRandomVariable& eta, const EnumerationOptions& opts) {
  validate_lipschitz(problem, tree);
  std::vector<PointSet> out(tree.level_size(k));
  auto too_big = [&](const detail::BackwardEngine& eng) {
    std::ostringstream os;
    os << "reachable set needs 10^" << eng.log10_count() << " policies, above the cap " << opts.cap;
    return SizeError(os.str());
  };
  if (tree.mode() == TreeMode::Path && problem.policy_space == PolicySpace::NodeWise && k < K) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      detail::BackwardEngine eng(problem, tree, k, K, eta, i);
      if (!eng.within_cap(opts.cap)) throw too_big(eng);
      do {
        auto y = eng.Y(k).at(i);
        out[i].emplace_back(y.begin(), y.end());
      } while (eng.advance());
    }
  } else {
    detail::BackwardEngine eng(problem, tree, k, K, eta);
    if (!eng.within_cap(opts.cap)) throw too_big(eng);
    do {
      for (std::size_t i = 0; i < out.size(); ++i) {
        auto y = eng.Y(k).at(i);
        out[i].emplace_back(y.begin(), y.end());
      }
    } while (eng.advance());
  }
  for (auto& s : out) s = dedupe_points(std::move(s));
  return out;
}

std::vector<PointSet> reachable_set(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                    const EnumerationOptions& opts) {
  if (k < 0 || k > tree.steps()) throw DomainError("reachable set: level outside grid");
  return reachable_set_between(problem, tree, k, tree.steps(), terminal_rv(problem, tree), opts);
}

EnvelopeReport envelope_bsde(const BSDEProblem& problem, const ScenarioTree& tree, const EnvelopeStructure& structure,
                             const EnumerationOptions& opts) {
  validate_lipschitz(problem, tree);
  const int dy = problem.value_dim, d = tree.dim(), n = tree.steps();
  CounterRng rng(0xe7e10be, 3);
  if (dy >= 2) {
    std::vector<double> y(dy), z(dy * d), f0(dy), f1(dy);
    for (int p = 0; p < structure.probes; ++p) {
      int level = static_cast<int>(rng.next_u64() % n);
      std::size_t node = rng.next_u64() % tree.level_size(level);
      const auto& u = problem.controls[rng.next_u64() % problem.controls.size()];
      NodeContext ctx{&tree, level, node, tree.grid().time(level), tree.value(level, node)};
      for (auto& v : y) v = rng.uniform(-2, 2);
      for (auto& v : z) v = rng.uniform(-2, 2);
      std::fill(f0.begin(), f0.end(), 0.0);
      problem.f(ctx, y, z, u, f0);
      int j = static_cast<int>(rng.next_u64() % dy);
      // increasing in y_j for i != j
      auto y2 = y;
      y2[j] += rng.uniform(0.01, 1.0);
      std::fill(f1.begin(), f1.end(), 0.0);
      problem.f(ctx, y2, z, u, f1);
      for (int i = 0; i < dy; ++i)
        if (i != j && f1[i] < f0[i] - structure.tolerance)
          throw StructureError("envelope: f_" + std::to_string(i) + " is not increasing in y_" + std::to_string(j));
      // independent of z_j for i != j
      auto z2 = z;
      for (int c = 0; c < d; ++c) z2[j * d + c] += rng.uniform(-1, 1);
      std::fill(f1.begin(), f1.end(), 0.0);
      problem.f(ctx, y, z2, u, f1);
      for (int i = 0; i < dy; ++i)
        if (i != j && std::fabs(f1[i] - f0[i]) > structure.tolerance)
          throw StructureError("envelope: f_" + std::to_string(i) + " depends on z_" + std::to_string(j));
    }
  }

  // envelope generator: componentwise max over the finite control set
  BSDEProblem env = problem;
  env.controls = {{0.0}};
  env.f = [&problem, dy](const NodeContext& ctx, std::span<const double> y, std::span<const double> z,
                         std::span<const double>, std::span<double> out) {
    std::vector<double> tmp(dy);
    for (int r = 0; r < dy; ++r) out[r] = -INFINITY;
    for (const auto& u : problem.controls) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      problem.f(ctx, y, z, u, tmp);
      for (int r = 0; r < dy; ++r) out[r] = std::max(out[r], tmp[r]);
    }
  };
  EnvelopeReport rep;
  rep.tolerance = structure.tolerance;
  rep.envelope = solve_bsde(env, tree, ControlPolicy::constant(tree, n, PolicySpace::NodeWise, 0));
  auto xi = terminal_rv(problem, tree);
  for (int t = 0; t < n; ++t) {
    auto sets = reachable_set_between(problem, tree, t, n, xi, opts);
    for (std::size_t i = 0; i < sets.size(); ++i) {
      double v = -INFINITY;
      for (const auto& y : sets[i]) v = std::max(v, problem.phi(y));
      double r = std::fabs(v - problem.phi(rep.envelope.Y[t].at(i)));
      if (r > rep.max_residual) {
        rep.max_residual = r;
        rep.worst_level = t;
      }
    }
  }
  rep.consistent = rep.max_residual <= structure.tolerance;
  return rep;
}

}  // namespace dynbsde
