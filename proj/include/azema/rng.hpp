#pragma once
// Counter-based random numbers.
//
// Every draw in the library is a pure function of (seed, counter), so a path,
// particle or bridge produces the same numbers whatever thread runs it and in
// whatever order. The generator is Philox4x32-10 (Salmon et al., SC'11).

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace azema {

/// Stream domains keep unrelated consumers of the same seed apart.
enum class Domain : std::uint32_t {
  scenario = 1,
  particle = 2,
  bridge = 3,
  resample = 4,
  inner = 5,
  init = 6,
  rerun = 7,
};

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter apply(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Maps 64 random bits to the open interval (0, 1).
inline double bits_to_open_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

/// Inverse normal CDF, Wichura's AS241 (PPND16), ~1e-16 relative.
/// Maps 32 random bits to the open interval (0, 1).
inline double bits32_to_open_unit(std::uint32_t bits) noexcept {
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-32;
}

inline double inverse_normal_cdf(double p) noexcept {
  if (!(p > 0.0) || !(p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r +
                45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r +
             133.14166789178437745) * r + 3.387132872796366608) /
           (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r +
                21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r +
             42.313330701600911252) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r +
               1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r +
            4.6303378461565452959) * r + 1.42343711074968357734) /
          (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r +
               0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r +
            2.05319162663775882187) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r +
               0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r +
            5.4637849111641143699) * r + 6.6579046435011037772) /
          (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r +
               7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r +
            0.59983220655588793769) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x * M_SQRT1_2); }

/// Upper tail 1 - Phi(x), accurate for large x.
inline double normal_sf(double x) noexcept { return 0.5 * std::erfc(x * M_SQRT1_2); }

/// A keyed stream. `draw(index, step, aux, channel)` returns two uniforms; the
/// same arguments always give the same pair.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, Domain domain) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        domain_(static_cast<std::uint32_t>(domain)) {}

  struct Pair {
    double u0;
    double u1;
  };

  Pair uniforms(std::uint32_t index, std::uint32_t step, std::uint32_t aux, std::uint32_t channel) const noexcept {
    const auto out = Philox4x32::apply({index, step, aux, (domain_ << 24) | (channel & 0xFFFFFFu)}, key_);
    const std::uint64_t a = (std::uint64_t{out[0]} << 32) | out[1];
    const std::uint64_t b = (std::uint64_t{out[2]} << 32) | out[3];
    return {bits_to_open_unit(a), bits_to_open_unit(b)};
  }

  /// The raw 128-bit block; callers needing only 32-bit uniforms can split it.
  Philox4x32::Counter words(std::uint32_t index, std::uint32_t step, std::uint32_t aux,
                            std::uint32_t channel) const noexcept {
    return Philox4x32::apply({index, step, aux, (domain_ << 24) | (channel & 0xFFFFFFu)}, key_);
  }

  double normal(std::uint32_t index, std::uint32_t step, std::uint32_t aux, std::uint32_t channel) const noexcept {
    return inverse_normal_cdf(uniforms(index, step, aux, channel).u0);
  }

  std::uint64_t seed() const noexcept { return (std::uint64_t{key_[1]} << 32) | key_[0]; }

 private:
  Philox4x32::Key key_;
  std::uint32_t domain_;
};

/// Derives an independent seed for a sub-experiment (splitmix64 finalizer).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace azema
