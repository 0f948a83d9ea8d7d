#pragma once

#include <cstdint>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/lattice.hpp"

namespace dynbsde {

/// Controlled forward state dX = drift dt + vol dB with feedback u(t, x).
struct ForwardDynamics {
  std::function<double(double t, double x, double u)> drift, vol;
};

using Params = std::map<std::string, double>;

struct BenchmarkProblem {
  std::string id;
  BSDEProblem problem;
  Params params;
  std::string optimal_control;
  std::optional<double> optimal_value;
  std::string utility_process;
  std::string witness;
  std::optional<ForwardDynamics> forward;  // only for forward-controlled instances
};

// mean-variance: dX = u dt + u dB, phi = y1 + y1^2/(2c) - y2/(2c)
BenchmarkProblem mean_variance(double x0, double c, double T);
double mv_feedback(double x0, double c, double T, double x);
/// c_t = c e^t - e^{t-T} (X*_t - x0)
double mv_ct(double x0, double c, double T, double t, double xstar);
/// Tree analogue of mv_ct on n steps at level k: the weight under which the
/// b = -1 feedback with the time-0 tree-optimal intercept stays optimal from
/// X*_k. Tends to mv_ct as dt -> 0.
double mv_ct_tree(double x0, double c, double T, int n, int k, double xstar);
Utility mv_utility(double c);

// one-dimensional: f = u, xi = B_T, phi = -|c + y|
BenchmarkProblem one_dimensional(double c, double T, std::vector<double> controls = {-1.0, -0.5, 0.0, 0.5, 1.0});

// principal-agent FBSDE
BenchmarkProblem principal_agent(double gamma_a, double gamma_p, double R, double T);
double pa_optimal_action(double gamma_a, double gamma_p);
double pa_contract(double gamma_a, double gamma_p, double R, double T, double BT);
/// R_t = R exp(-gamma_a [u* B_t + (gamma_a - 1)/2 u*^2 t])
double pa_rt(double gamma_a, double gamma_p, double R, double t, double Bt);

// deterministic: f1 = u - y2, f2 = u, xi = 0, phi = y1, U = {0, 1}
BenchmarkProblem deterministic_example(double T);
/// V_t = int_t^{(1+t)^T} (1 + t - s) ds
double deterministic_value(double T, double t);

/// Registered identifiers in stable order ("distortion" is listed but out of scope).
std::vector<std::string> benchmark_ids();
BenchmarkProblem make_benchmark(const std::string& id, const Params& params = {});

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct BenchmarkReport {
  std::string id;
  std::vector<CheckResult> checks;
  bool pass() const;
};

/// Best control policy at one node for the subproblem on [k, K] with terminal
/// eta and utility Phi applied to Y_k(node).
struct NodeOptimum {
  double value = -INFINITY;
  ControlPolicy policy;
  std::uint64_t evaluated = 0;
};

NodeOptimum optimize_node(const BSDEProblem& problem, const ScenarioTree& tree, int k, std::size_t node, int K,
                          const TreeRandomVariable& eta, const Utility& Phi, const EnumerationOptions& opts = {});

/// Phi(Y_k(node)) under the rule (level, node) -> control index.
double evaluate_node(const BSDEProblem& problem, const ScenarioTree& tree, int k, std::size_t node, int K,
                     const TreeRandomVariable& eta, const Utility& Phi,
                     const std::function<std::uint32_t(int, std::size_t)>& rule);

/// Forward state on levels k..n of a path tree with per-node start values
/// and feedback u(t, x); returns X_n.
TreeRandomVariable propagate_forward(const ScenarioTree& tree, int k, const std::vector<double>& start,
                                     const ForwardDynamics& dyn, const std::function<double(double, double)>& u);

struct DeterministicWitness {
  int level = 0;
  double t = 0.0;
  std::vector<int> reopt, original;  // control per level on [k, n)
  bool matches_formula = true;
  std::vector<int> disagree;         // levels where reopt = 1 and original = 0
  double margin = 0.0;
  bool pass = false;
};

DeterministicWitness deterministic_witness(double T, int n, int k, const EnumerationOptions& opts = {});

struct NodeWitness {
  int tested = 0;
  int agree = 0;          // nodes where the expected behaviour holds
  double min_margin = INFINITY;
  bool pass = false;
  std::vector<std::pair<int, std::size_t>> nodes;
};

/// 1-d example with c = T: on {B_t <= t - 2T} the re-optimized control is
/// +1 everywhere in the subtree while u* = -1; nodes with subtree depth above
/// max_depth are not tested.
NodeWitness one_dim_witness(double T, int n, int max_depth = 3, const EnumerationOptions& opts = {});

struct RestorationReport {
  int nodes = 0;
  int restored_mismatch = 0;  // must be 0
  int formula_mismatch = 0;   // continuous-time weight used on the tree (mean-variance only)
  int control_violations = 0; // must be >= 1 with the static utility
  double worst = 0.0;         // largest deviation under the restored utility
  bool pass = false;
  std::string detail;
};

/// 1-d, c = T, Phi(t, y) = -|T - t - B_t + y| on every node of levels 1..n-1.
RestorationReport one_dim_restoration(double T, int n, const EnumerationOptions& opts = {});

struct MvGrid {
  int half = 10;        // 21 x 21
  double a_step = 0.25;
  double b_step = 0.25;
};

/// Mean-variance: affine feedback grid argmax at time 0 and per node at level k
/// with c_t (restored) and with static c (control group).
RestorationReport mv_restoration(double x0, double c, double T, int n, int k, const MvGrid& grid = {});

/// Value of the analytic feedback vs the grid maximum at the root.
struct MvBruteForce {
  double analytic = 0.0, grid_max = 0.0, best_a = 0.0, best_b = 0.0;
  double gap = 0.0;
};
MvBruteForce mv_brute_force(double x0, double c, double T, int n, const MvGrid& grid = {});

/// Principal-agent: constant-action probe grid per node, contracts compared
/// with the time-0 optimal contract under R_t (restored) and R (control).
RestorationReport pa_restoration(double gamma_a, double gamma_p, double R, double T, int n,
                                 const std::vector<double>& offsets = {-0.2, -0.1, 0.0, 0.1, 0.2});

/// Y^P_0 for constant actions on a tree.
double pa_value(double gamma_a, double gamma_p, double R, const ScenarioTree& tree, double u);

BenchmarkReport benchmark_verify(const std::string& id, const Params& params = {});

}  // namespace dynbsde
