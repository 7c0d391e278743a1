#pragma once

#include <cstdint>
#include <random>

namespace metadro {

/// Splittable pseudo-random generator.
///
/// `split()` derives an independent child stream from the parent and advances
/// the parent by exactly one draw, so a meta batch can hand one child to each
/// episode and still be reproducible no matter how the children are scheduled.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

  /// Child stream keyed by a stable tag; does not advance this generator.
  Rng substream(std::uint64_t tag) const {
    Rng copy = *this;
    return Rng(mix(copy.engine_() + mix(tag)));
  }

  /// Uniform integer in [0, bound).
  std::size_t below(std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(engine_);
  }

  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  // SplitMix64 finalizer; decorrelates nearby seeds.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace metadro
