#pragma once

// Exactly reversible fixed-point arithmetic. A value is an int64 mantissa
// with an implicit scale 2^-F; multiplication by a rational n/d pushes the
// bits it would destroy into a per-scalar information buffer so the step can
// be undone exactly.

#include <gmpxx.h>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace momnet {

using Mantissa = std::int64_t;

inline constexpr int kDefaultFracBits = 32;

/// Mantissa arithmetic left the int64 range.
class FixedPointOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// gamma = n/d in lowest terms with 0 <= n <= d. n = 0 is accepted and
/// marks the non-invertible ResNet mode.
struct Ratio {
  std::int64_t n = 9;
  std::int64_t d = 10;

  /// Validates and reduces; throws std::invalid_argument.
  static Ratio make(std::int64_t n, std::int64_t d);
  /// Parses "N/D" (or a bare "0" / "1").
  static Ratio parse(std::string_view text);

  [[nodiscard]] double value() const { return static_cast<double>(n) / static_cast<double>(d); }
  /// 1 - gamma, computed from integers so (d-n)/d is a single rounding.
  [[nodiscard]] double complement() const {
    return static_cast<double>(d - n) / static_cast<double>(d);
  }
  [[nodiscard]] bool invertible() const { return n > 0; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Ratio&, const Ratio&) = default;
};

/// Non-negative integer of unbounded size. Values below 2^64 stay inline;
/// larger ones move to a GMP integer.
class InfoBuffer {
 public:
  InfoBuffer() = default;
  explicit InfoBuffer(std::uint64_t v) : small_(v) {}
  explicit InfoBuffer(const mpz_class& v);
  InfoBuffer(const InfoBuffer& other);
  InfoBuffer& operator=(const InfoBuffer& other);
  InfoBuffer(InfoBuffer&&) noexcept = default;
  InfoBuffer& operator=(InfoBuffer&&) noexcept = default;

  /// this = this * m + a, with a < m.
  void mul_add(std::uint64_t m, std::uint64_t a);
  /// this = floor(this / m); returns the remainder.
  std::uint64_t divmod(std::uint64_t m);

  [[nodiscard]] bool is_zero() const { return !big_ && small_ == 0; }
  [[nodiscard]] std::size_t bit_length() const;
  [[nodiscard]] mpz_class to_mpz() const;

  friend bool operator==(const InfoBuffer& a, const InfoBuffer& b);

 private:
  void normalize();

  std::uint64_t small_ = 0;
  std::unique_ptr<mpz_class> big_;
};

[[nodiscard]] inline std::size_t buffer_bits(const InfoBuffer& buf) { return buf.bit_length(); }

/// Floor division and the matching remainder in [0, d).
[[nodiscard]] inline std::pair<Mantissa, Mantissa> floor_divmod(Mantissa c, Mantissa d) {
  Mantissa q = c / d;
  Mantissa r = c % d;
  if (r < 0) {
    r += d;
    q -= 1;
  }
  return {q, r};
}

/// c <- c * n/d, rounding information pushed into buf.
void reversible_mul(InfoBuffer& buf, Mantissa& c, Ratio r);
/// Exact inverse of reversible_mul with the same ratio.
void reversible_mul_inverse(InfoBuffer& buf, Mantissa& c, Ratio r);

/// Nearest multiple of 2^-F (ties to even). Throws std::invalid_argument for
/// non-finite x or F outside [1, 62], FixedPointOverflow when out of range.
[[nodiscard]] Mantissa encode(double x, int frac_bits);
[[nodiscard]] double decode(Mantissa m, int frac_bits);

/// Overflow-checked mantissa arithmetic.
[[nodiscard]] Mantissa checked_add(Mantissa a, Mantissa b);
[[nodiscard]] Mantissa checked_sub(Mantissa a, Mantissa b);

/// Little-endian, length-prefixed encoding of a (mantissa, buffer) pair:
/// u32 mantissa byte count, mantissa bytes (two's complement), u32 buffer
/// byte count, buffer magnitude bytes.
void serialize_pair(Mantissa c, const InfoBuffer& buf, std::vector<std::uint8_t>& out);
/// Reads one pair starting at `offset`, advancing it. Throws
/// std::invalid_argument on truncated input.
[[nodiscard]] std::pair<Mantissa, InfoBuffer> deserialize_pair(std::span<const std::uint8_t> in,
                                                               std::size_t& offset);

}  // namespace momnet
