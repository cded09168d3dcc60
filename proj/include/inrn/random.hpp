#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace inrn {

/// Counter-based generator: draw i of a stream is a fixed hash of
/// (key, i), so streams are identical on every platform and compiler.
/// split() derives independent child streams without touching the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  Rng split(std::uint64_t stream) const noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Rng seed_rng(std::uint64_t seed) { return Rng(seed); }

/// Fisher-Yates permutation of 0..n-1 driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace inrn
