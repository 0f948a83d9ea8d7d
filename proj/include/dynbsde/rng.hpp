#pragma once

#include <cstdint>

namespace dynbsde {

/// Counter-based generator: output k of stream s under seed is
/// splitmix64(key(seed, s) + k * 0x9E3779B97F4A7C15). Streams are
/// independent keys, so per-path generators are split by index.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform on (0, 1), 53-bit.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal by Box-Muller (second variate cached).
  double normal();
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dynbsde
