#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace cil {

/// xoshiro256** generator seeded through SplitMix64.
///
/// Every stochastic step in the library draws from this generator; the
/// standard <random> engines and distributions are not used because their
/// outputs are implementation-defined. Given the same seed the sequence of
/// next_u64() values is identical on every platform. uniform() uses the top
/// 53 bits, normal() is Box-Muller (one value per call, no caching), below()
/// is Lemire's unbiased bounded draw.
///
/// Named streams: stream(root, "batch", 3) hashes the name with FNV-1a,
/// mixes it with the root seed and index, and seeds a fresh generator. The
/// names used by the trainer are "data", "init", "shuffle", "batch" and
/// "conflict".
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0);
  static Rng from_state(const State& state);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Fisher-Yates, last index first.
  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  const State& state() const noexcept { return state_; }

  bool operator==(const Rng&) const = default;

 private:
  Rng() = default;
  State state_{};
};

/// SplitMix64 step; exposed for seed derivation.
std::uint64_t splitmix64(std::uint64_t& x) noexcept;

}  // namespace cil
