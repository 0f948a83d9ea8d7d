#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/duality.hpp"
#include "dynbsde/lattice.hpp"

namespace dynbsde {

/// Phi(level, node, y) with Phi(0, root, .) = phi.
struct DynamicUtility {
  std::function<double(int level, std::size_t node, std::span<const double> y)> eval;
  Utility phi;

  double operator()(int level, std::size_t node, std::span<const double> y) const { return eval(level, node, y); }
};

/// Phi(t, y) = phi(y) at every level.
DynamicUtility static_utility(const Utility& phi);

/// max over deterministic controls on [0, k] of phi(Y_0) with Y_k = y.
/// f must not depend on the node beyond its level.
double deterministic_phi(const BSDEProblem& problem, const TimeGrid& grid, int k, std::span<const double> y,
                         const EnumerationOptions& opts = {});

DynamicUtility deterministic_utility(const BSDEProblem& problem, const TimeGrid& grid,
                                     const EnumerationOptions& opts = {});

struct TerminalPair {
  TreeRandomVariable eta, eta_tilde;
};

struct PairVerdict {
  bool premise = true;
  bool violation = false;
  double slack = 0.0;  // min over nodes of rhs - lhs
  std::size_t worst_node = 0;
};

struct ComparisonReport {
  int k1 = 0, k2 = 0;
  std::size_t tested = 0;
  std::size_t skipped = 0;
  std::size_t violations = 0;
  double worst_slack = 0.0;
  double tolerance = 1e-10;
  std::vector<PairVerdict> pairs;
};

/// Comparison principle test: Phi(k2, eta) <= Phi(k2, eta~) node-wise must
/// imply max_u Phi(k1, Y^u_k1(k2, eta)) <= max_u Phi(k1, Y^u_k1(k2, eta~)).
ComparisonReport check_comparison(const DynamicUtility& Phi, const BSDEProblem& problem, const ScenarioTree& tree,
                                  int k1, int k2, const std::vector<TerminalPair>& pairs,
                                  const EnumerationOptions& opts = {}, double tol = 1e-10);

/// Seeded pairs eta~ = eta + nonnegative perturbation (componentwise, size
/// up to `scale`) at level k.
std::vector<TerminalPair> monotone_pairs(const TreeRandomVariable& eta, std::size_t count, double scale,
                                         std::uint64_t seed);

/// Among candidates maximizing Phi within 1e-10, the lexicographically largest.
std::vector<double> select_maximizer(const DynamicUtility& Phi, int level, std::size_t node,
                                     const PointSet& candidates, double tol = 1e-10);

/// Coefficients of f_i = sum_j alpha^{ij} y_j + beta^{ij} z_j + c_i(u) with
/// d' = 2, d = 1 and phi = a1 y1 + a2 y2.
struct LinearUtilityCoeffs {
  using Coef = std::function<double(double t, double b)>;
  Coef alpha[2][2];
  Coef beta[2][2];
  double a1 = 0.0, a2 = 1.0;

  static LinearUtilityCoeffs constant(const double (&alpha)[2][2], const double (&beta)[2][2], double a1,
                                      double a2);
};

/// Drift and diffusion of the ratio process in regime 1 (odd) or 2 (even).
double riccati_drift(const LinearUtilityCoeffs& c, int regime, double t, double b, double x);
double riccati_vol(const LinearUtilityCoeffs& c, int regime, double t, double b, double x);

struct SwitchingPath {
  double dt = 0.0;
  std::vector<double> t, b, ahat, a1, a2;
  std::vector<int> regime;           // 1 = odd, 2 = even
  std::vector<char> is_switch;
  std::vector<double> switch_times;  // tau_n < T
  std::vector<double> pre_switch;    // |Ahat| just before each inversion
  double max_increment = 0.0;        // largest |A^i_{k+1} - A^i_k| away from switches
  double max_switch_jump = 0.0;      // largest |A^i| change at a switch step beyond the Euler move
};

/// State of the ratio process after one observed increment.
struct SwitchState {
  double ahat = 0.0;
  int regime = 1;
  double A1 = 0.0, A2 = 0.0;
  double anchor = 0.0;  // frozen weight of the current regime
  int switches = 0;
};

SwitchState switching_start(const LinearUtilityCoeffs& c);
/// Euler step on [t, t+dt] with Brownian increment dB observed at b_next.
/// Returns true if a switch was recorded (|Ahat| >= 2 before the horizon).
bool switching_step(const LinearUtilityCoeffs& c, SwitchState& s, double t, double b, double dt, double dB,
                    bool at_horizon, double* pre = nullptr);

/// One Euler path of the truncated switching construction.
SwitchingPath simulate_switching_path(const LinearUtilityCoeffs& c, double T, int steps, std::uint64_t seed,
                                      std::uint64_t path);

std::vector<SwitchingPath> build_linear_utility(const LinearUtilityCoeffs& c, double T, int steps, std::size_t M,
                                                std::uint64_t seed);

/// Switching weights per tree node; Phi(k, i, y) = A1 y1 + A2 y2. Path mode trees only.
struct TreeLinearUtility {
  std::vector<std::vector<SwitchState>> state;  // per level, per node
  DynamicUtility Phi;
};

TreeLinearUtility build_linear_utility(const LinearUtilityCoeffs& c, const ScenarioTree& tree);

void write_switching_path_csv(std::ostream& os, const SwitchingPath& p);

struct TauBoundRow {
  int n = 0;
  double freq = 0.0, se = 0.0, bound = 1.0;
  bool vacuous = false;
  bool pass = true;
};

struct StepBoundRow {
  int k = 0;
  std::size_t conditioned = 0;
  double freq = 0.0, se = 0.0;
  bool pass = true;
};

struct TauBoundReport {
  double C = 0.0, delta = 0.0;
  int m = 0;
  std::size_t paths = 0;
  double max_overshoot = 0.0;
  bool overshoot_ok = true;
  double band_low = 0.0, band_high = 0.0;  // |Ahat| after inversion over all switches
  bool band_ok = true;
  double max_switch_jump = 0.0, max_increment = 0.0;
  bool continuity_ok = true;
  std::vector<TauBoundRow> rows;
  std::vector<StepBoundRow> steps;
  bool pass = true;
};

/// C fitted as 2 x max_t E sup_{s<=t}|Ahat_s - Ahat_0|^2 / t over a pilot run
/// started from each regime at |Ahat_0| in {start, 1/2}.
double fit_moment_constant(const LinearUtilityCoeffs& c, double T, int steps, std::size_t pilot,
                           std::uint64_t seed);

TauBoundReport verify_tau_bound(const LinearUtilityCoeffs& c, double T, int steps, int max_n, std::size_t M,
                                std::uint64_t seed, std::size_t pilot = 2000);

struct LinearComparisonReport {
  std::size_t policies = 0;
  std::size_t pairs_tested = 0;
  std::size_t skipped = 0;
  std::size_t policy_violations = 0;  // fixed-policy reduced comparisons that fail
  std::size_t value_violations = 0;   // max-over-policy comparisons that fail
  double worst_slack = 0.0;
  bool monotone_scheme = true;        // 1 + alpha dt - |beta| sqrt(dt) >= 0 everywhere
  double reduction_gap = 0.0;         // max |Yhat - Phi(Y)| (time discretization of the reduction)
  double tolerance = 1e-8;
};

/// Reduced scalar BSDE for Yhat = A1 Y1 + A2 Y2 on a path-mode tree; checks
/// the one-dimensional comparison per policy and for the value.
LinearComparisonReport check_linear_comparison(const LinearUtilityCoeffs& c, const TreeLinearUtility& util,
                                               const BSDEProblem& problem, const ScenarioTree& tree,
                                               const std::vector<TerminalPair>& pairs,
                                               const EnumerationOptions& opts = {}, double tol = 1e-8);

/// Pairs with A_T . (xi~ - xi) >= 0 node-wise under the tree weights.
std::vector<TerminalPair> linear_pairs(const TreeLinearUtility& util, const TreeRandomVariable& xi,
                                       std::size_t count, double scale, std::uint64_t seed);

}  // namespace dynbsde
