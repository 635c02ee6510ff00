#pragma once

#include <cstdint>
#include <string_view>

namespace cfr {

/// Counter-based generator built on the SplitMix64 finalizer.
///
/// The n-th draw (n = 1, 2, ...) of a stream with key k is
///   mix64(k + n * 0x9E3779B97F4A7C15)
/// where mix64 is the SplitMix64 output function
///   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
///   z ^= z >> 27; z *= 0x94D049BB133111EB;
///   z ^= z >> 31.
/// Child streams are keyed by mix64(k ^ mix64(id + 0xD1B54A32D192ED03)), so any
/// (seed, path of ids, counter) triple names one value on every platform.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

  static std::uint64_t mix64(std::uint64_t z) noexcept;

  /// Independent child stream; does not advance this stream.
  CounterRng split(std::uint64_t stream_id) const;
  /// Child stream keyed by a label, hashed with FNV-1a.
  CounterRng split(std::string_view label) const;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive. Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal via Box-Muller (one draw pair per call, second value discarded).
  double normal() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  struct Raw {};
  CounterRng(Raw, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace cfr
