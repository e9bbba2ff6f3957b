#pragma once

// Counter-based random streams.
//
// Every random draw in the library comes from a Philox4x32-10 block cipher
// keyed by a 64-bit seed.  A stream is identified by (seed, stream_id); the
// stream id occupies the upper half of the 128-bit counter and the block index
// the lower half, so distinct streams never overlap.  Streams are assigned by
// role (one per dataset row, one per tree, one per replication), which makes
// results independent of how work is scheduled across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace itevar {

/// SplitMix64 finalizer; used to derive child seeds from (parent, tag, index).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag,
                                    std::uint64_t index) noexcept {
  return mix64(mix64(parent ^ mix64(tag)) + index);
}

// Tags used with derive_seed so unrelated consumers of one seed stay disjoint.
namespace seed_tag {
inline constexpr std::uint64_t kTree = 0x7452;
inline constexpr std::uint64_t kNuisanceM = 0x6d;
inline constexpr std::uint64_t kNuisanceE = 0x65;
inline constexpr std::uint64_t kNuisanceH = 0x68;
inline constexpr std::uint64_t kEffect = 0x7461;
inline constexpr std::uint64_t kReplication = 0x7265;
inline constexpr std::uint64_t kBootstrap = 0x6273;
inline constexpr std::uint64_t kForest = 0x666f;
}  // namespace seed_tag

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit constexpr Philox4x32(std::uint64_t key) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  constexpr Block operator()(Block ctr) const noexcept {
    std::array<std::uint32_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0};
      k[0] += kW0;
      k[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57;
  static constexpr std::uint32_t kW0 = 0x9E3779B9;
  static constexpr std::uint32_t kW1 = 0xBB67AE85;
  std::array<std::uint32_t, 2> key_;
};

/// Sequential view over one Philox stream.  Satisfies UniformRandomBitGenerator.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
      : cipher_(seed), stream_id_(stream_id) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept {
    if (used_ == 2) refill();
    return buffer_[used_++];
  }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Poisson(mean) by multiplying uniforms; intended for small means.
  std::uint64_t poisson(double mean) noexcept {
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    for (double prod = uniform(); prod > limit; prod *= uniform()) ++k;
    return k;
  }

  /// Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = max() - max() % bound;
    std::uint64_t v;
    do {
      v = (*this)();
    } while (v >= limit);
    return v % bound;
  }

 private:
  void refill() noexcept {
    const auto out = cipher_({static_cast<std::uint32_t>(block_),
                              static_cast<std::uint32_t>(block_ >> 32),
                              static_cast<std::uint32_t>(stream_id_),
                              static_cast<std::uint32_t>(stream_id_ >> 32)});
    ++block_;
    buffer_[0] = (std::uint64_t{out[0]} << 32) | out[1];
    buffer_[1] = (std::uint64_t{out[2]} << 32) | out[3];
    used_ = 0;
  }

  Philox4x32 cipher_;
  std::uint64_t stream_id_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int used_ = 2;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace itevar
