#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/lattice.hpp"

namespace dynbsde {

/// Uniform axis with `count` points on [lo, hi]. count == 1 collapses the
/// axis to the single point lo.
struct AxisGrid {
  double lo = 0.0;
  double hi = 0.0;
  int count = 1;

  double step() const { return count > 1 ? (hi - lo) / (count - 1) : 0.0; }
  double at(int i) const { return count > 1 ? lo + (hi - lo) * i / (count - 1) : lo; }
  /// Axis from bounds and spacing (count rounded to the nearest integer).
  static AxisGrid spaced(double lo, double hi, double h);
};

struct HJBConfig {
  AxisGrid x;                                // Brownian coordinate (d = 1)
  std::vector<AxisGrid> y;                   // one axis per value component, d' <= 2
  std::vector<std::vector<double>> z_grid;   // each entry is a d' x 1 matrix
  int substeps = 0;                          // per tree step, 0 = smallest stable count
  double cfl = 0.5;
  double epsilon = 0.0;                      // 0 = epsilon_factor x interpolation error
  double epsilon_factor = 10.0;
  std::string boundary = "one-sided-extrapolation";
  double trusted_margin = 0.2;
  std::vector<int> keep_levels;              // empty = every tree level
};

/// Finite-difference values of W on (tree level, x, y).
struct DualGrid {
  HJBConfig config;
  TimeGrid time;
  int value_dim = 1;
  int substeps = 0;
  double pde_dt = 0.0;
  double epsilon = 0.0;
  double interp_error = 0.0;
  std::size_t nx = 1, n1 = 1, n2 = 1;
  std::vector<int> levels;
  std::vector<std::vector<double>> slices;

  std::size_t points() const { return nx * n1 * n2; }
  std::size_t index(std::size_t ix, std::size_t i1, std::size_t i2 = 0) const { return (ix * n1 + i1) * n2 + i2; }
  bool has_level(int k) const;
  const std::vector<double>& slice(int k) const;
  double at(int k, std::size_t ix, std::size_t i1, std::size_t i2 = 0) const { return slice(k)[index(ix, i1, i2)]; }
  std::vector<double> y_point(std::size_t i1, std::size_t i2 = 0) const;
  double x_point(std::size_t ix) const { return config.x.at(static_cast<int>(ix)); }
  /// Multilinear interpolation in (x, y); +inf outside the grid.
  double interpolate(int k, double x, std::span<const double> y) const;
  bool trusted_x(std::size_t ix) const;
  bool trusted_y(std::size_t i1, std::size_t i2 = 0) const;
};

/// Largest stable PDE step for the explicit scheme on this config given a
/// velocity bound per y axis.
double max_stable_dt(const HJBConfig& config, std::span<const double> vmax);

/// Terminal-slice interpolation error estimate used for the default epsilon.
double terminal_interpolation_error(const BSDEProblem& problem, const HJBConfig& config, double T);

DualGrid solve_dual_hjb(const BSDEProblem& problem, const TimeGrid& time, const HJBConfig& config);

struct NodalSet {
  int level = 0;
  std::size_t x_index = 0;
  double epsilon = 0.0;
  PointSet points;
  std::vector<std::size_t> flat_indices;
  bool empty_flag = false;
  std::size_t untrusted = 0;
};

NodalSet extract_nodal_set(const DualGrid& grid, int level, std::size_t x_index, double epsilon);

struct DualStaticValue {
  double value = 0.0;
  std::vector<double> argmax;
  std::optional<bool> argmax_near_reachable;
};

/// max of phi over the nodal set; tie-break smallest index. With a reachable
/// set, reports whether y* lies within one grid cell of it.
DualStaticValue dual_static_value(const NodalSet& nodal, const Utility& phi, const PointSet* reachable = nullptr,
                                  std::span<const double> cell = {});

/// Symmetric Hausdorff distance (Euclidean) between finite point sets.
double hausdorff_distance(const PointSet& a, const PointSet& b);
/// sup over a of the distance to b.
double directed_distance(const PointSet& a, const PointSet& b);

struct DualDirectResult {
  double value = std::numeric_limits<double>::infinity();
  std::vector<std::uint32_t> best;  // (z, u) pair index per slot
  std::uint64_t evaluated = 0;
};

/// min over (Z, u) policies on the subtree of (k, node) of E|X_T - xi|^2 with
/// X_k = y and X_{j+1} = X_j - f dt + Z dB. Path-mode trees only.
DualDirectResult dual_value_direct(const BSDEProblem& problem, const ScenarioTree& tree, int k, std::size_t node,
                                   std::span<const double> y, const std::vector<std::vector<double>>& z_grid,
                                   const EnumerationOptions& opts = {});

struct ConditionalDualValue {
  int level = 0;
  std::size_t node = 0;
  PointSet points;
  std::vector<double> values;
};

ConditionalDualValue conditional_dual_value(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                            std::size_t node, const PointSet& points,
                                            const std::vector<std::vector<double>>& z_grid,
                                            const EnumerationOptions& opts = {});

struct GeometricDppReport {
  int k1 = 0, k2 = 0;
  double epsilon = 0.0;
  double rho = 0.0;               // worst max-successor W reached from the eps-nodal set at k1
  double slack_b = 0.0;           // worst W(k1) - eps over y steerable into the eps-nodal set at k2
  double scheme_slack = 0.0;
  std::size_t nodal_points = 0;
  std::size_t steerable_points = 0;
  std::size_t unsteerable = 0;    // nodal points with no policy keeping successors on the grid
  bool inclusion_a = true;
  bool inclusion_b = true;
};

/// Both inclusions of the epsilon geometric DPP on the HJB grid, for every
/// node of level k1 of a d = 1 tree with the grid's time steps.
GeometricDppReport check_geometric_dpp(const BSDEProblem& problem, const ScenarioTree& tree, const DualGrid& grid,
                                       double epsilon, int k1, int k2, double scheme_slack = -1.0,
                                       const EnumerationOptions& opts = {});

struct RegularityReport {
  double c_hat = 0.0;
  std::size_t pairs = 0;
};

/// Fitted C in |W(y1)-W(y2)| <= C (1+|y1|+|y2|) |y1-y2| over grid pairs of a slice.
RegularityReport check_w_regularity(const DualGrid& grid, int level, std::size_t x_index);

void write_dual_grid_csv(std::ostream& os, const DualGrid& grid);
void write_nodal_set_csv(std::ostream& os, const DualGrid& grid, const NodalSet& set);

}  // namespace dynbsde
