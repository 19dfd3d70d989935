#pragma once

// Counter-based random streams. A stream is identified by a 128-bit key
// derived from (master seed, stage, job id); every draw is a pure function
// of key and counter, so parallel jobs reproduce bit-for-bit regardless of
// scheduling.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace epca {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Philox4x32-10 (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using result_type = std::uint32_t;
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter round_trip(Counter ctr, Key key) noexcept {
    for (int r = 0; r < 10; ++r) {
      ctr = round(ctr, key);
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

 private:
  static constexpr Counter round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
    const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

// Satisfies UniformRandomBitGenerator, but callers should prefer the
// distribution helpers below: they are defined here so outputs do not
// depend on the standard library's distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stage = 0, std::uint64_t job = 0) noexcept {
    const std::uint64_t a = splitmix64(seed ^ splitmix64(stage + 0x632be59bd9b4e019ULL));
    const std::uint64_t b = splitmix64(a ^ splitmix64(job + 0x8cb92ba72f3d8dd7ULL));
    key_ = {static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    hi_ = a;
  }

  // Independent child stream; children of the same parent with distinct ids
  // never share a key.
  Rng substream(std::uint64_t stage, std::uint64_t job) const noexcept {
    const std::uint64_t parent = (std::uint64_t{key_[1]} << 32) | key_[0];
    return Rng(parent ^ hi_, stage, job);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (avail_ == 0) refill();
    --avail_;
    return buf_[avail_];
  }

  // Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() noexcept {
    for (;;) {
      const double u = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = max() - max() % n;
    for (;;) {
      const std::uint64_t x = (*this)();
      if (x < limit) return x % n;
    }
  }

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

  double exponential() noexcept { return -std::log(uniform()); }

  // Marsaglia & Tsang; shape < 1 uses the U^{1/a} boost.
  double gamma(double shape) noexcept {
    if (shape < 1.0) return gamma(shape + 1.0) * std::pow(uniform(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) noexcept {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

 private:
  void refill() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(counter_),
                                  static_cast<std::uint32_t>(counter_ >> 32),
                                  static_cast<std::uint32_t>(hi_),
                                  static_cast<std::uint32_t>(hi_ >> 32)};
    ++counter_;
    const auto out = Philox4x32::round_trip(ctr, key_);
    buf_[0] = (std::uint64_t{out[0]} << 32) | out[1];
    buf_[1] = (std::uint64_t{out[2]} << 32) | out[3];
    avail_ = 2;
  }

  Philox4x32::Key key_{};
  std::uint64_t hi_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buf_{};
  int avail_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stage tags for substream derivation.
namespace stage {
inline constexpr std::uint64_t generate = 1;
inline constexpr std::uint64_t bootstrap = 2;
inline constexpr std::uint64_t select_m = 3;
inline constexpr std::uint64_t synthetic = 4;
inline constexpr std::uint64_t ht = 5;
inline constexpr std::uint64_t fold_ci = 6;
}  // namespace stage

}  // namespace epca
