#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace dynbsde {

/// Uniform time grid on [0, T] with n steps. Only T and n are stored.
struct TimeGrid {
  double T = 1.0;
  int n = 1;

  TimeGrid() = default;
  TimeGrid(double horizon, int steps);

  double dt() const { return T / n; }
  double time(int k) const { return T * k / n; }
};

enum class TreeMode { Recombining, Path };

/// Discrete path from the root to a node. In recombining mode only the
/// current point is known and `points` holds a single row.
struct DiscretePath {
  const TimeGrid* grid = nullptr;
  int dim = 1;
  int level = 0;
  bool full = true;
  std::vector<double> points;  // (level+1) x dim when full, else dim

  std::span<const double> at(int k) const;
  std::span<const double> current() const;
  double time() const { return grid->time(level); }
  /// Left-endpoint sum of coordinate j over [0, t_level].
  double time_integral(int j = 0) const;
  /// max_k |omega_k| over the path (Euclidean norm).
  double running_max_abs() const;
};

/// Symmetric +-sqrt(dt) random walk tree with 2^d equiprobable children.
///
/// Child code c in [0, 2^d): bit (d-1-j) set means a + step in coordinate j,
/// so codes enumerate sign sequences lexicographically with - before +.
class ScenarioTree {
 public:
  static constexpr int kDefaultPathCap = 22;

  ScenarioTree(TimeGrid grid, int d, TreeMode mode, int path_cap = kDefaultPathCap);

  const TimeGrid& grid() const { return grid_; }
  int dim() const { return d_; }
  TreeMode mode() const { return mode_; }
  int steps() const { return grid_.n; }
  int branching() const { return 1 << d_; }
  double sqrt_dt() const { return sqrt_dt_; }
  std::size_t level_size(int k) const { return sizes_.at(k); }
  double node_probability(int k, std::size_t i) const;

  std::size_t child(int k, std::size_t i, int c) const;
  /// Parent index (path mode only).
  std::size_t parent(int k, std::size_t i) const;
  /// Increment sign (+1/-1) of coordinate j for child code c.
  int sign(int c, int j) const { return ((c >> (d_ - 1 - j)) & 1) ? 1 : -1; }

  std::span<const double> value(int k, std::size_t i) const;
  DiscretePath path(int k, std::size_t i) const;

 private:
  TimeGrid grid_;
  int d_;
  TreeMode mode_;
  double sqrt_dt_;
  std::vector<std::size_t> sizes_;
  std::vector<std::vector<double>> values_;  // per level, size*d
};

/// Vector-valued random variable on one level of a tree.
struct TreeRandomVariable {
  int level = 0;
  int dim = 1;
  std::vector<double> values;  // size(level) x dim, row-major

  TreeRandomVariable() = default;
  TreeRandomVariable(int lvl, int dimension, std::size_t nodes, double fill = 0.0);

  std::size_t size() const { return dim ? values.size() / dim : 0; }
  std::span<double> at(std::size_t i) { return {values.data() + i * dim, static_cast<std::size_t>(dim)}; }
  std::span<const double> at(std::size_t i) const {
    return {values.data() + i * dim, static_cast<std::size_t>(dim)};
  }
};

ScenarioTree build_tree(TimeGrid grid, int d, TreeMode mode,
                        int path_cap = ScenarioTree::kDefaultPathCap);

/// Exact conditional expectation by successive one-step averages.
TreeRandomVariable conditional_expectation(const ScenarioTree& tree, const TreeRandomVariable& rv,
                                           int target_level);

/// Expectation of a level variable (root conditional expectation).
std::vector<double> expectation(const ScenarioTree& tree, const TreeRandomVariable& rv);

/// Tree L2 norm sqrt(E|rv|^2).
double l2_norm(const ScenarioTree& tree, const TreeRandomVariable& rv);

struct PathFunctional {
  std::function<double(const DiscretePath&)> fn;
  bool path_dependent = true;
};

double path_functional(const ScenarioTree& tree, int k, std::size_t i, const PathFunctional& f);

/// Evaluate a scalar functional at every node of level k.
TreeRandomVariable level_functional(const ScenarioTree& tree, int k, const PathFunctional& f);

/// Brownian value B at level k as a d-dimensional variable.
TreeRandomVariable brownian_rv(const ScenarioTree& tree, int k);

}  // namespace dynbsde
