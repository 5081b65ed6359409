#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "filmens/errors.hpp"

namespace filmens {

/// Seedable counter-based random stream built on SplitMix64.
///
/// Output i of stream (seed, stream_id) is mix64(key + (i+1) * GAMMA) with
/// key = mix64(seed ^ mix64(stream_id)).  The same (seed, stream_id, call
/// index) triple yields the same value on every platform, which is what the
/// reproducibility contract of the training code rests on.  Every stochastic
/// call site owns an explicit stream id, so adding a new consumer never
/// shifts the draws of an existing one.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : state_(mix64(seed ^ mix64(stream_id ^ kStreamSalt))) {}

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix64(state_);
  }

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(t);
    have_cached_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Unbiased integer in [0, n) via 64x64->128 multiply-shift.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ValueError("RngStream::below: n must be positive");
    const auto wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kStreamSalt = 0x5851F42D4C957F2Dull;

  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// Fixed stream ids used by the library; call sites never share a stream.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kAugment = 4;
inline constexpr std::uint64_t kData = 5;
}  // namespace streams

}  // namespace filmens
