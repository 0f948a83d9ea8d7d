#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynbsde/lattice.hpp"

namespace dynbsde {

/// Where a generator or terminal is evaluated. `tree` is null when the
/// evaluation happens off-tree (HJB grids); `b` then holds the x coordinate.
struct NodeContext {
  const ScenarioTree* tree = nullptr;
  int level = 0;
  std::size_t index = 0;
  double t = 0.0;
  std::span<const double> b;
};

/// f(t, node, y, z, u) -> out, z is d' x d row-major.
using Generator = std::function<void(const NodeContext&, std::span<const double> y, std::span<const double> z,
                                     std::span<const double> u, std::span<double> out)>;
using Terminal = std::function<void(const NodeContext&, std::span<double> out)>;
using Utility = std::function<double(std::span<const double> y)>;

/// NodeWise: one control per non-terminal node. LevelWise: one control per
/// level (deterministic controls).
enum class PolicySpace { NodeWise, LevelWise };

struct BSDEProblem {
  std::string name;
  int value_dim = 1;
  Generator f;
  Terminal xi;
  Utility phi;
  std::vector<std::vector<double>> controls;  // finite control set U
  double lipschitz = 0.0;                     // declared L of f in (y, z)
  double phi_lipschitz = 1.0;                 // declared Lip(phi)
  PolicySpace policy_space = PolicySpace::NodeWise;
  bool path_dependent = false;
  bool markovian = true;  // f = f(t, B_t, y, z, u), xi = g(B_T)
};

/// Control indices into BSDEProblem::controls, per level; a level holds one
/// entry per node (NodeWise) or a single entry (LevelWise).
struct ControlPolicy {
  PolicySpace space = PolicySpace::NodeWise;
  std::vector<std::vector<std::uint32_t>> choice;

  std::uint32_t at(int level, std::size_t node) const {
    const auto& c = choice[level];
    return space == PolicySpace::LevelWise ? c[0] : c[node];
  }
  static ControlPolicy constant(const ScenarioTree& tree, int levels, PolicySpace space, std::uint32_t idx);
};

struct BSDESolution {
  int value_dim = 1;
  int bm_dim = 1;
  std::vector<TreeRandomVariable> Y;     // levels 0..k
  std::vector<std::vector<double>> Z;    // levels 0..k-1, node-major d' x d blocks
  std::vector<std::string> warnings;

  std::span<const double> z(int level, std::size_t node) const {
    std::size_t b = static_cast<std::size_t>(value_dim) * bm_dim;
    return {Z[level].data() + node * b, b};
  }
};

struct EnumerationOptions {
  std::uint64_t cap = 1'000'000;
  bool fallback = false;  // coordinate ascent above the cap
  double tie_tol = 1e-12;
  int max_sweeps = 1000;
};

struct StaticValueResult {
  double value = 0.0;
  ControlPolicy policy;
  std::vector<double> y0;
  bool heuristic = false;
  std::uint64_t evaluated = 0;
  std::vector<std::string> warnings;
};

/// Random finite-difference probes of |f(y1,z1)-f(y2,z2)| <= L(|dy|+|dz|).
/// Throws ProblemValidationError on failure.
void validate_lipschitz(const BSDEProblem& problem, const ScenarioTree& tree, int probes = 64,
                        std::uint64_t seed = 0x5eed);

/// dt >= 1/(2L) warning text, empty if fine.
std::string stability_warning(const BSDEProblem& problem, const ScenarioTree& tree);

/// Terminal variable xi at level n.
TreeRandomVariable terminal_rv(const BSDEProblem& problem, const ScenarioTree& tree);

BSDESolution solve_bsde(const BSDEProblem& problem, const ScenarioTree& tree, const ControlPolicy& policy,
                        int terminal_level, const TreeRandomVariable& eta);

/// Solve with the problem's own terminal xi at level n.
BSDESolution solve_bsde(const BSDEProblem& problem, const ScenarioTree& tree, const ControlPolicy& policy);

StaticValueResult static_value(const BSDEProblem& problem, const ScenarioTree& tree,
                               const EnumerationOptions& opts = {});

/// Static value of the problem stopped at level k with terminal eta.
StaticValueResult static_value_at(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                  const TreeRandomVariable& eta, const EnumerationOptions& opts = {});

using PointSet = std::vector<std::vector<double>>;

/// Deduplicate within tol (max norm) and sort lexicographically.
PointSet dedupe_points(PointSet pts, double tol = 1e-10);

/// Per node of level k, attainable Y_k over policies on [k, n].
std::vector<PointSet> reachable_set(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                    const EnumerationOptions& opts = {});

/// Same with terminal eta at level K > k.
std::vector<PointSet> reachable_set_between(const BSDEProblem& problem, const ScenarioTree& tree, int k, int K,
                                            const TreeRandomVariable& eta, const EnumerationOptions& opts = {});

struct EnvelopeReport {
  BSDESolution envelope;
  double max_residual = 0.0;  // max_t,node |V_t - phi(Ybar_t)|
  int worst_level = 0;
  bool consistent = true;
  double tolerance = 1e-10;
};

/// Declared structure for envelope_bsde when d' >= 2: f_i independent of
/// z_j and increasing in y_j for j != i.
struct EnvelopeStructure {
  int probes = 64;
  double tolerance = 1e-10;
};

/// Solve the BSDE with fbar_i = max_u f_i and compare phi(Ybar_t) with the
/// brute-force dynamic value V_t at every level.
EnvelopeReport envelope_bsde(const BSDEProblem& problem, const ScenarioTree& tree,
                             const EnvelopeStructure& structure = {}, const EnumerationOptions& opts = {});

}  // namespace dynbsde
