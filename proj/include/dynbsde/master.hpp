#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/lattice.hpp"

namespace dynbsde {

struct ForwardValueResult {
  double value = 0.0;
  bool heuristic = false;
  std::uint64_t evaluated = 0;
};

/// Psi(k, eta) = max over policies on [0, k] of phi(Y_0) with Y_k = eta.
ForwardValueResult forward_value(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                 const TreeRandomVariable& eta, const EnumerationOptions& opts = {});

struct ForwardDppReport {
  int k1 = 0, k2 = 0;
  double psi = 0.0;       // Psi(k2, eta)
  double composed = 0.0;  // max_u Psi(k1, Y^u_k1(k2, eta))
  double residual = 0.0;
  bool heuristic = false;
  std::uint64_t segment_policies = 0;
};

ForwardDppReport check_forward_dpp(const BSDEProblem& problem, const ScenarioTree& tree, int k1, int k2,
                                   const TreeRandomVariable& eta, const EnumerationOptions& opts = {});

struct LipschitzReport {
  double max_ratio = 0.0;
  double bound = 0.0;  // Lip(phi) exp((L + L^2/2 + L^2 dt/2) t)
  std::size_t pairs = 0;
  std::size_t skipped = 0;
  bool pass = true;
};

using EtaPair = std::pair<TreeRandomVariable, TreeRandomVariable>;

LipschitzReport check_lipschitz(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                const std::vector<EtaPair>& pairs, const EnumerationOptions& opts = {});

/// Seeded pairs: eta1 with N(0, 1) entries, eta2 = eta1 + N(0, s^2) noise.
std::vector<EtaPair> random_eta_pairs(const ScenarioTree& tree, int k, int dim, std::size_t count, double s,
                                      std::uint64_t seed);

/// Scalar eta(t, omega) with caller-supplied path derivatives, d = 1.
struct CylinderFunctional {
  std::string name;
  std::function<double(const DiscretePath&)> value, d_t, d_omega, d_omega2;
  bool path_dependent = false;
};

CylinderFunctional cylinder_power(int p);   // B_t^p
CylinderFunctional cylinder_time_b();       // t B_t
CylinderFunctional cylinder_constant(double c);

struct PathProbeReport {
  double max_residual = 0.0;
  int worst_level = 0;
  double threshold = 0.0;
  bool valid = true;
};

/// Residual of d eta = d_t eta dt + d_omega eta dB + 1/2 d_omega2 eta dt on
/// every tree transition. Throws InvalidCylinderError above `threshold`
/// (default 10 dt) when `throw_on_fail`.
PathProbeReport path_derivative_probe(const CylinderFunctional& eta, const ScenarioTree& tree,
                                      double threshold = -1.0, bool throw_on_fail = true);

TreeRandomVariable cylinder_rv(const CylinderFunctional& eta, const ScenarioTree& tree, int k);

struct MasterConfig {
  double bump = 1e-4;  // h = bump (1 + |eta|)
  bool probe = true;
};

struct MasterResidual {
  int level = 0;
  double dt = 0.0;
  double psi = 0.0;
  double d_minus_t = 0.0;
  double drift_term = 0.0;  // <D_eta Psi, d_t eta + 1/2 d_omega2 eta>
  double sup_term = 0.0;    // sup_u <D_eta Psi, f(t, eta, d_omega eta, u)>
  double residual = 0.0;
  std::vector<double> gradient;
};

/// d' = 1, d = 1.
MasterResidual master_residual(const BSDEProblem& problem, const ScenarioTree& tree, const CylinderFunctional& eta,
                               int k, const MasterConfig& config = {}, const EnumerationOptions& opts = {});

/// sup_u <grad, f(t, eta, 0, u)> with independent per-node maxima.
double master_plus_rhs(const BSDEProblem& problem, const ScenarioTree& tree, int k, const TreeRandomVariable& eta,
                       const std::vector<double>& gradient);

struct IllposedReport {
  double psi1 = 0.0, psi2 = 0.0, gap = 0.0;
  double rhs1 = 0.0, rhs2 = 0.0;
  bool rhs_identical = false;
  bool witness = false;
  double delta = 0.0;
  int level = 0;
};

/// Two problems sharing f(., ., ., 0, .): same Master+ right side, different Psi(T, xi).
IllposedReport illposed_demo(const BSDEProblem& p1, const BSDEProblem& p2, const ScenarioTree& tree,
                             double delta = 1e-6, const EnumerationOptions& opts = {});

/// The shipped instance: f1 = 0, f2 = z, xi = B_T, phi = id.
std::pair<BSDEProblem, BSDEProblem> illposed_pair();

}  // namespace dynbsde
