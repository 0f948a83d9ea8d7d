#include "dynbsde/lattice.hpp"

#include <cmath>
#include <string>

#include "dynbsde/errors.hpp"

namespace dynbsde {

TimeGrid::TimeGrid(double horizon, int steps) : T(horizon), n(steps) {
  if (!(horizon > 0.0)) throw DomainError("time grid: horizon must be positive");
  if (steps < 1) throw DomainError("time grid: step count must be >= 1");
}

std::span<const double> DiscretePath::at(int k) const {
  if (!full) {
    if (k != level) throw ModeError("path point unavailable: recombining node carries only its current value");
    return {points.data(), static_cast<std::size_t>(dim)};
  }
  return {points.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
}

std::span<const double> DiscretePath::current() const {
  if (!full) return {points.data(), static_cast<std::size_t>(dim)};
  return at(level);
}

double DiscretePath::time_integral(int j) const {
  if (!full) throw ModeError("time integral needs the full path");
  double s = 0.0;
  for (int k = 0; k < level; ++k) s += points[static_cast<std::size_t>(k) * dim + j] * grid->dt();
  return s;
}

double DiscretePath::running_max_abs() const {
  if (!full) throw ModeError("running max needs the full path");
  double m = 0.0;
  for (int k = 0; k <= level; ++k) {
    double r = 0.0;
    for (int j = 0; j < dim; ++j) {
      double v = points[static_cast<std::size_t>(k) * dim + j];
      r += v * v;
    }
    m = std::max(m, std::sqrt(r));
  }
  return m;
}

ScenarioTree::ScenarioTree(TimeGrid grid, int d, TreeMode mode, int path_cap)
    : grid_(grid), d_(d), mode_(mode), sqrt_dt_(std::sqrt(grid.dt())) {
  if (d < 1) throw DomainError("tree: Brownian dimension must be >= 1");
  if (grid.n < 1) throw DomainError("tree: step count must be >= 1");
  if (mode == TreeMode::Path && static_cast<long long>(grid.n) * d > path_cap)
    throw SizeError("tree: path mode needs n*d <= " + std::to_string(path_cap) + ", got " +
                    std::to_string(static_cast<long long>(grid.n) * d));
  if (mode == TreeMode::Recombining && std::pow(grid.n + 1.0, d) > 5e7)
    throw SizeError("tree: recombining level size (n+1)^d exceeds 5e7");
  const int n = grid.n;
  sizes_.resize(n + 1);
  values_.resize(n + 1);
  for (int k = 0; k <= n; ++k) {
    std::size_t sz = 1;
    for (int j = 0; j < d; ++j)
      sz *= (mode == TreeMode::Path) ? (std::size_t{1} << k) : static_cast<std::size_t>(k + 1);
    sizes_[k] = sz;
    values_[k].assign(sz * d, 0.0);
  }
  const int b = branching();
  for (int k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < sizes_[k]; ++i) {
      for (int c = 0; c < b; ++c) {
        std::size_t ch = child(k, i, c);
        for (int j = 0; j < d; ++j)
          values_[k + 1][ch * d + j] = values_[k][i * d + j] + sign(c, j) * sqrt_dt_;
      }
    }
  }
  if (mode == TreeMode::Recombining) {
    // recompute from up-counts to avoid accumulated rounding
    for (int k = 0; k <= n; ++k) {
      std::size_t sz = sizes_[k];
      for (std::size_t i = 0; i < sz; ++i) {
        std::size_t rem = i;
        for (int j = d - 1; j >= 0; --j) {
          std::size_t up = rem % (k + 1);
          rem /= (k + 1);
          values_[k][i * d + j] = (2.0 * static_cast<double>(up) - k) * sqrt_dt_;
        }
      }
    }
  }
}

std::size_t ScenarioTree::child(int k, std::size_t i, int c) const {
  if (mode_ == TreeMode::Path) return (i << d_) | static_cast<std::size_t>(c);
  const std::size_t r = k + 1, r2 = k + 2;
  std::size_t rem = i, out = 0, mul = 1;
  for (int j = d_ - 1; j >= 0; --j) {
    std::size_t up = rem % r;
    rem /= r;
    up += (sign(c, j) > 0) ? 1 : 0;
    out += up * mul;
    mul *= r2;
  }
  return out;
}

std::size_t ScenarioTree::parent(int k, std::size_t i) const {
  if (mode_ != TreeMode::Path) throw ModeError("parent: only defined in path mode");
  if (k <= 0) throw DomainError("parent: root has no parent");
  return i >> d_;
}

double ScenarioTree::node_probability(int k, std::size_t i) const {
  if (mode_ == TreeMode::Path) return std::ldexp(1.0, -k * d_);
  std::size_t rem = i;
  double p = 1.0;
  for (int j = 0; j < d_; ++j) {
    std::size_t up = rem % (k + 1);
    rem /= (k + 1);
    // binomial(k, up) / 2^k via lgamma is inexact; use a product
    double c = 1.0;
    for (std::size_t m = 1; m <= up; ++m) c = c * static_cast<double>(k - up + m) / static_cast<double>(m);
    p *= std::ldexp(c, -k);
  }
  return p;
}

std::span<const double> ScenarioTree::value(int k, std::size_t i) const {
  return {values_[k].data() + i * d_, static_cast<std::size_t>(d_)};
}

DiscretePath ScenarioTree::path(int k, std::size_t i) const {
  DiscretePath p;
  p.grid = &grid_;
  p.dim = d_;
  p.level = k;
  if (mode_ == TreeMode::Recombining) {
    p.full = false;
    auto v = value(k, i);
    p.points.assign(v.begin(), v.end());
    return p;
  }
  p.points.assign(static_cast<std::size_t>(k + 1) * d_, 0.0);
  std::size_t idx = i;
  for (int m = k; m >= 0; --m) {
    auto v = value(m, idx);
    for (int j = 0; j < d_; ++j) p.points[static_cast<std::size_t>(m) * d_ + j] = v[j];
    idx >>= d_;
  }
  return p;
}

TreeRandomVariable::TreeRandomVariable(int lvl, int dimension, std::size_t nodes, double fill)
    : level(lvl), dim(dimension), values(nodes * dimension, fill) {}

ScenarioTree build_tree(TimeGrid grid, int d, TreeMode mode, int path_cap) {
  return ScenarioTree(grid, d, mode, path_cap);
}

TreeRandomVariable conditional_expectation(const ScenarioTree& tree, const TreeRandomVariable& rv,
                                           int target_level) {
  if (rv.level < 0 || rv.level > tree.steps()) throw DomainError("conditional expectation: level outside grid");
  if (target_level < 0 || target_level > rv.level)
    throw DomainError("conditional expectation: target level must satisfy 0 <= k <= m");
  if (rv.size() != tree.level_size(rv.level))
    throw DomainError("conditional expectation: variable size does not match its level");
  TreeRandomVariable cur = rv;
  const int b = tree.branching();
  const double w = 1.0 / b;
  for (int m = rv.level - 1; m >= target_level; --m) {
    TreeRandomVariable next(m, rv.dim, tree.level_size(m));
    for (std::size_t i = 0; i < tree.level_size(m); ++i) {
      auto out = next.at(i);
      for (int c = 0; c < b; ++c) {
        auto src = cur.at(tree.child(m, i, c));
        for (int r = 0; r < rv.dim; ++r) out[r] += src[r];
      }
      for (int r = 0; r < rv.dim; ++r) out[r] *= w;
    }
    cur = std::move(next);
  }
  return cur;
}

std::vector<double> expectation(const ScenarioTree& tree, const TreeRandomVariable& rv) {
  auto root = conditional_expectation(tree, rv, 0);
  return root.values;
}

double l2_norm(const ScenarioTree& tree, const TreeRandomVariable& rv) {
  TreeRandomVariable sq(rv.level, 1, rv.size());
  for (std::size_t i = 0; i < rv.size(); ++i) {
    double s = 0.0;
    for (double v : rv.at(i)) s += v * v;
    sq.values[i] = s;
  }
  return std::sqrt(expectation(tree, sq)[0]);
}

double path_functional(const ScenarioTree& tree, int k, std::size_t i, const PathFunctional& f) {
  if (k < 0 || k > tree.steps() || i >= tree.level_size(k)) throw DomainError("path functional: node outside tree");
  if (f.path_dependent && tree.mode() == TreeMode::Recombining)
    throw ModeError("path functional: path-dependent functional on a recombining tree");
  return f.fn(tree.path(k, i));
}

TreeRandomVariable level_functional(const ScenarioTree& tree, int k, const PathFunctional& f) {
  TreeRandomVariable rv(k, 1, tree.level_size(k));
  for (std::size_t i = 0; i < rv.size(); ++i) rv.values[i] = path_functional(tree, k, i, f);
  return rv;
}

TreeRandomVariable brownian_rv(const ScenarioTree& tree, int k) {
  TreeRandomVariable rv(k, tree.dim(), tree.level_size(k));
  for (std::size_t i = 0; i < rv.size(); ++i) {
    auto v = tree.value(k, i);
    std::copy(v.begin(), v.end(), rv.at(i).begin());
  }
  return rv;
}

}  // namespace dynbsde
