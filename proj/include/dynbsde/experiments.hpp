#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/dynutil.hpp"

namespace dynbsde {

struct ExperimentInfo {
  std::string id;
  std::string anchor;
  std::string summary;
  bool stochastic = false;
};

/// Registered experiments in stable order.
const std::vector<ExperimentInfo>& list_experiments();
/// One line per experiment: "id → anchor  summary".
std::string format_listing();

/// Flat key = value document. '#' starts a comment; blank lines are ignored.
class ExperimentConfig {
 public:
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string str(const std::string& key, const std::string& def = "") const;
  double num(const std::string& key, double def) const;
  long long integer(const std::string& key, long long def) const;
  std::uint64_t seed() const;
  bool flag(const std::string& key, bool def) const;

  /// Sorted "key=value" lines without output_dir.
  std::string canonical() const;
  /// FNV-1a 64 of canonical(), as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

struct ConfigIssue {
  std::string field;
  std::string message;
};

/// Field-level diagnostics; empty when the config is valid.
std::vector<ConfigIssue> validate_config(const ExperimentConfig& config);

struct Verdict {
  std::string name;
  std::string status;  // "pass", "fail" or "flagged"
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct ExperimentReport {
  std::string experiment;
  std::string anchor;
  std::map<std::string, std::string> config;
  std::vector<Verdict> checks;
  std::vector<std::string> artifacts;
  std::string output_dir;
  double wall_seconds = 0.0;
  bool pass() const;
};

/// Runs a validated config and writes artifacts under
/// <output_dir>/<experiment>-s<seed>-<hash>. Throws ConfigError on invalid input.
ExperimentReport run_experiment(const ExperimentConfig& config);

/// Human-readable report (header names the anchor).
std::string format_report(const ExperimentReport& report);

// Shipped problems used by the experiments.

/// f = 0, xi = B_T, phi = id, single control.
BSDEProblem zero_driver_problem();
/// f_i = sum_j alpha^{ij} y_j + beta^{ij} z_j + k_i u, xi = (B_T, B_T^2 / 2),
/// phi = a1 y1 + a2 y2.
BSDEProblem linear_problem(const LinearUtilityCoeffs& c, const std::vector<double>& controls, double k1 = 1.0,
                           double k2 = 0.5);
/// Constant coefficients used by the linear dynamic utility experiment.
LinearUtilityCoeffs default_linear_coeffs();
/// f = u z - y / 2, xi = B_T, phi = -(y - 0.3)^2, U = {-1, 0, 1}.
BSDEProblem scalar_control_problem();
/// Exact reachable set of the deterministic example at time 0 on n steps,
/// thinned in y1 to spacing at most `thin`.
PointSet deterministic_reachable_set(double T, int n, double thin);

}  // namespace dynbsde
