#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dynbsde/bsde.hpp"
#include "dynbsde/errors.hpp"

namespace dynbsde::detail {

/// Backward solver over levels [k0, K] with controls as "slots". Slots are
/// ordered deepest level first so that changing slot p only invalidates
/// slots p.. (prefix sharing during odometer enumeration).
class BackwardEngine {
 public:
  BackwardEngine(const BSDEProblem& problem, const ScenarioTree& tree, int k0, int K,
                 const TreeRandomVariable& eta, std::optional<std::size_t> root = std::nullopt);

  std::size_t slot_count() const { return slots_.size(); }
  std::uint32_t choices() const { return static_cast<std::uint32_t>(problem_.controls.size()); }
  /// log10 of the number of policies.
  double log10_count() const { return slots_.size() * std::log10(static_cast<double>(choices())); }
  bool within_cap(std::uint64_t cap) const;

  const std::vector<std::size_t>& nodes(int level) const { return nodes_[level - k0_]; }
  const TreeRandomVariable& Y(int level) const { return Y_[level - k0_]; }
  std::span<const double> Z(int level, std::size_t node) const;
  int k0() const { return k0_; }
  int K() const { return K_; }

  const std::vector<std::uint32_t>& choice() const { return choice_; }
  void set_all(const std::vector<std::uint32_t>& choice);
  /// Set slot p and recompute slots p..end.
  void set_slot(std::size_t p, std::uint32_t c);
  /// Advance the odometer (last slot fastest). Returns false after the last policy.
  bool advance();

  ControlPolicy to_policy(const std::vector<std::uint32_t>& choice) const;
  /// Slot choices from a rule (level, node) -> control index.
  std::vector<std::uint32_t> choice_from(const std::function<std::uint32_t(int, std::size_t)>& rule) const;
  /// Lexicographic order of policies with levels ascending, nodes ascending.
  bool canonical_less(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b) const;
  const std::vector<std::size_t>& canonical_order() const { return canonical_; }

 private:
  struct Slot {
    int level;
    std::size_t first;  // index into nodes_ of the level
    std::size_t count;
  };
  void compute_slot(std::size_t p);
  void compute_node(int level, std::size_t node, std::uint32_t c);

  const BSDEProblem& problem_;
  const ScenarioTree& tree_;
  int k0_, K_;
  int dy_, d_;
  std::vector<std::vector<std::size_t>> nodes_;
  std::vector<TreeRandomVariable> Y_;
  std::vector<std::vector<double>> Zbuf_;
  std::vector<Slot> slots_;
  std::vector<std::size_t> canonical_;
  std::vector<std::uint32_t> choice_;
  std::vector<double> ey_, z_, fout_;
};

/// Tie-aware running maximum over enumerated policies.
struct BestTracker {
  double value = -INFINITY;
  std::vector<std::uint32_t> choice;
  bool has = false;

  void offer(double v, const std::vector<std::uint32_t>& c, const BackwardEngine& eng, double tol) {
    if (!has || v > value + tol * std::max(1.0, std::fabs(value))) {
      value = v;
      choice = c;
      has = true;
    } else if (std::fabs(v - value) <= tol * std::max(1.0, std::fabs(value)) && eng.canonical_less(c, choice)) {
      value = std::max(v, value);
      choice = c;
    }
  }
};

}  // namespace dynbsde::detail
