#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace dapa {

/// Counter-based random stream. Draw `k` of a stream is a pure function of
/// (seed, k): the SplitMix64 output after `k` increments of the state `seed`.
/// Only integer arithmetic is involved, so sequences are identical on every
/// platform; floating-point distributions are derived by hand for the same
/// reason (std:: distributions are implementation-defined).
class RngStream {
 public:
  RngStream() = default;
  explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw consumed pair-wise, no caching).
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Independent child stream keyed by integers; does not advance this stream.
  RngStream derive(std::initializer_list<std::uint64_t> keys) const noexcept;
  RngStream derive(std::string_view label) const noexcept;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace dapa
