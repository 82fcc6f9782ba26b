#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace adstory {

inline constexpr std::string_view kVersion = "1.0.0";

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary input (Y4M, WAV, tensor cache, checkpoint). Carries the
/// byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Semantically invalid input (bad vocabulary entry, wrong vector length,
/// inconsistent lengths). `line` is 1-based, 0 when not line oriented.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite loss during training.
class NumericError : public Error {
 public:
  NumericError(std::int64_t step, double last_finite_loss)
      : Error("non-finite loss at step " + std::to_string(step) +
              " (last finite loss " + std::to_string(last_finite_loss) + ")"),
        step_(step),
        last_finite_loss_(last_finite_loss) {}
  std::int64_t step() const noexcept { return step_; }
  double last_finite_loss() const noexcept { return last_finite_loss_; }

 private:
  std::int64_t step_;
  double last_finite_loss_;
};

/// Exact frame rate, e.g. 30000/1001.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool positive() const { return num > 0 && den > 0; }
  Rational reduced() const {
    const auto g = std::gcd(num, den);
    return g ? Rational{num / g, den / g} : *this;
  }
  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num * b.den == b.num * a.den;
  }
};

/// Index of the whole second containing frame `k`: floor(k / fps).
inline std::int64_t second_of_frame(std::int64_t k, Rational fps) {
  return (k * fps.den) / fps.num;
}

/// Number of whole seconds covered by `n_frames` frames: ceil(n / fps).
inline std::int64_t seconds_for_frames(std::int64_t n_frames, Rational fps) {
  return (n_frames * fps.den + fps.num - 1) / fps.num;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_shortest(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of an independent stream derived from a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

// Portable sampling helpers. std::*_distribution output is implementation
// defined; these only depend on the (standardized) mt19937_64 stream.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n) by rejection; n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Standard normal via Box-Muller.
inline double normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

template <class It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace adstory
