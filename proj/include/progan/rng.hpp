#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace progan {

/// Seedable random stream with a serializable state.
///
/// Distributions are computed here rather than through <random> adaptors so
/// that the sequence does not depend on the standard library's distribution
/// algorithms or hidden caches; the full state is the engine state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; one engine pair per draw.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::vector<std::size_t> permutation(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

  /// Mixes a seed with a stream id into an independent seed (splitmix64).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

}  // namespace progan
