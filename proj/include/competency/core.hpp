#pragma once
// Shared plumbing: error taxonomy, deterministic RNG, seed mixing, small
// numeric helpers. Everything here must behave identically across runs and
// across worker counts, so no std::random distributions are used.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace competency {

// Bad user input, bad arguments, violated preconditions. CLI maps to exit 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Inconsistent model/layer configuration.
struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

// Non-finite values or failed numeric invariants during computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File/serialization problems (missing artifact, version mismatch, bad magic).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

[[nodiscard]] constexpr std::uint64_t avalanche64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

// Per-index substream derivation. mix_seed(s, i) != mix_seed(s, j) for i != j
// with overwhelming probability; results do not depend on evaluation order,
// which is what makes parallel generation bit-stable.
[[nodiscard]] constexpr std::uint64_t mix_seed(std::uint64_t seed,
                                               std::uint64_t index) {
  return avalanche64(seed + (index + 1) * kGoldenGamma);
}

// Counter-based splitmix64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += kGoldenGamma;
    return avalanche64(state_);
  }

  // [0, 1), 53-bit resolution.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // (0, 1]
  double next_unit_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // [0, n), n > 0. Multiply-shift; bias is < 2^-64 per draw.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Index drawn proportionally to nonnegative weights (need not be normalized).
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw NumericError("categorical: nonpositive weight sum");
    double u = next_unit() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  double normal() {
    const double kTwoPi = 6.283185307179586476925286766559;
    double u1 = next_unit_pos();
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Marsaglia-Tsang; shape > 0, unit scale.
  double gamma_draw(double shape) {
    if (!(shape > 0.0)) throw NumericError("gamma_draw: shape must be > 0");
    if (shape < 1.0) {
      double u = next_unit_pos();
      return gamma_draw(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = next_unit_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Dirichlet over the given concentration vector; output sums to 1.
  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    std::vector<double> out(alpha.size());
    double total = 0.0;
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      out[i] = gamma_draw(alpha[i]);
      total += out[i];
    }
    if (!(total > 0.0)) throw NumericError("dirichlet: degenerate draw");
    for (double& v : out) v /= total;
    return out;
  }

  // Deterministic Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

[[nodiscard]] inline double norm_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

// Nearest-rank percentile, p in (0, 100]: the ceil(p/100 * n)-th smallest.
// The epsilon keeps float noise from bumping exact ranks (e.g. thirds) up.
[[nodiscard]] inline double nearest_rank_percentile(std::vector<double> values,
                                                    double p) {
  if (values.empty()) throw ValidationError("percentile of empty set");
  if (!(p > 0.0 && p <= 100.0)) throw ValidationError("percentile p out of range");
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(values.size()) - 1e-9));
  if (rank == 0) rank = 1;
  if (rank > values.size()) rank = values.size();
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  return values[rank - 1];
}

[[nodiscard]] inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

[[nodiscard]] inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace competency
