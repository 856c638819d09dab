#include "momnet/revarith.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <numeric>

namespace momnet {
namespace {

constexpr double kTwo62 = 4611686018427387904.0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t& off) {
  if (off + 4 > in.size()) throw std::invalid_argument("deserialize_pair: truncated length");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
  off += 4;
  return v;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("ratio: cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Ratio Ratio::make(std::int64_t n, std::int64_t d) {
  if (d <= 0 || n < 0 || n > d) {
    throw std::invalid_argument("ratio: need 0 <= n <= d and d > 0, got " + std::to_string(n) +
                                "/" + std::to_string(d));
  }
  if (n == 0) return {0, 1};
  const std::int64_t g = std::gcd(n, d);
  return {n / g, d / g};
}

Ratio Ratio::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    const std::int64_t v = parse_int(text);
    return make(v, 1);
  }
  return make(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
}

std::string Ratio::str() const { return std::to_string(n) + "/" + std::to_string(d); }

InfoBuffer::InfoBuffer(const mpz_class& v) {
  if (sgn(v) < 0) throw std::invalid_argument("InfoBuffer: negative value");
  big_ = std::make_unique<mpz_class>(v);
  normalize();
}

InfoBuffer::InfoBuffer(const InfoBuffer& other)
    : small_(other.small_), big_(other.big_ ? std::make_unique<mpz_class>(*other.big_) : nullptr) {}

InfoBuffer& InfoBuffer::operator=(const InfoBuffer& other) {
  if (this != &other) {
    small_ = other.small_;
    big_ = other.big_ ? std::make_unique<mpz_class>(*other.big_) : nullptr;
  }
  return *this;
}

void InfoBuffer::normalize() {
  if (big_ && mpz_sizeinbase(big_->get_mpz_t(), 2) <= 64) {
    std::uint64_t v = 0;
    mpz_export(&v, nullptr, -1, sizeof(v), 0, 0, big_->get_mpz_t());
    small_ = v;
    big_.reset();
  }
}

void InfoBuffer::mul_add(std::uint64_t m, std::uint64_t a) {
  if (!big_) {
    std::uint64_t prod = 0;
    std::uint64_t sum = 0;
    if (!__builtin_mul_overflow(small_, m, &prod) && !__builtin_add_overflow(prod, a, &sum)) {
      small_ = sum;
      return;
    }
    big_ = std::make_unique<mpz_class>();
    mpz_import(big_->get_mpz_t(), 1, -1, sizeof(small_), 0, 0, &small_);
  }
  mpz_mul_ui(big_->get_mpz_t(), big_->get_mpz_t(), m);
  mpz_add_ui(big_->get_mpz_t(), big_->get_mpz_t(), a);
}

std::uint64_t InfoBuffer::divmod(std::uint64_t m) {
  if (!big_) {
    const std::uint64_t r = small_ % m;
    small_ /= m;
    return r;
  }
  const std::uint64_t r = mpz_fdiv_q_ui(big_->get_mpz_t(), big_->get_mpz_t(), m);
  normalize();
  return r;
}

std::size_t InfoBuffer::bit_length() const {
  if (big_) return mpz_sizeinbase(big_->get_mpz_t(), 2);
  return static_cast<std::size_t>(std::bit_width(small_));
}

mpz_class InfoBuffer::to_mpz() const {
  if (big_) return *big_;
  mpz_class v;
  mpz_import(v.get_mpz_t(), 1, -1, sizeof(small_), 0, 0, &small_);
  return v;
}

bool operator==(const InfoBuffer& a, const InfoBuffer& b) {
  if (a.big_ && b.big_) return *a.big_ == *b.big_;
  if (!a.big_ && !b.big_) return a.small_ == b.small_;
  return false;  // normalized: a big value never fits in 64 bits
}

Mantissa checked_add(Mantissa a, Mantissa b) {
  Mantissa out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw FixedPointOverflow("mantissa addition overflow");
  return out;
}

Mantissa checked_sub(Mantissa a, Mantissa b) {
  Mantissa out = 0;
  if (__builtin_sub_overflow(a, b, &out)) throw FixedPointOverflow("mantissa subtraction overflow");
  return out;
}

void reversible_mul(InfoBuffer& buf, Mantissa& c, Ratio r) {
  if (r.n == r.d) return;
  if (r.n == 0) throw std::invalid_argument("reversible_mul: ratio 0 is not invertible");
  auto [q, rem] = floor_divmod(c, r.d);
  buf.mul_add(static_cast<std::uint64_t>(r.d), static_cast<std::uint64_t>(rem));
  const auto low = static_cast<Mantissa>(buf.divmod(static_cast<std::uint64_t>(r.n)));
  Mantissa scaled = 0;
  if (__builtin_mul_overflow(q, r.n, &scaled)) throw FixedPointOverflow("reversible_mul overflow");
  c = checked_add(scaled, low);
}

void reversible_mul_inverse(InfoBuffer& buf, Mantissa& c, Ratio r) {
  if (r.n == r.d) return;
  if (r.n == 0) throw std::invalid_argument("reversible_mul_inverse: ratio 0 is not invertible");
  auto [q, rem] = floor_divmod(c, r.n);
  buf.mul_add(static_cast<std::uint64_t>(r.n), static_cast<std::uint64_t>(rem));
  const auto low = static_cast<Mantissa>(buf.divmod(static_cast<std::uint64_t>(r.d)));
  Mantissa scaled = 0;
  if (__builtin_mul_overflow(q, r.d, &scaled)) {
    throw FixedPointOverflow("reversible_mul_inverse overflow");
  }
  c = checked_add(scaled, low);
}

Mantissa encode(double x, int frac_bits) {
  if (frac_bits < 1 || frac_bits > 62) {
    throw std::invalid_argument("encode: frac_bits must lie in [1, 62]");
  }
  if (!std::isfinite(x)) throw std::invalid_argument("encode: non-finite input");
  const double scaled = std::nearbyint(std::ldexp(x, frac_bits));
  if (!(std::abs(scaled) < kTwo62)) throw FixedPointOverflow("encode: value out of range");
  return static_cast<Mantissa>(scaled);
}

double decode(Mantissa m, int frac_bits) {
  return std::ldexp(static_cast<double>(m), -frac_bits);
}

void serialize_pair(Mantissa c, const InfoBuffer& buf, std::vector<std::uint8_t>& out) {
  put_u32(out, 8);
  const auto u = static_cast<std::uint64_t>(c);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  const mpz_class v = buf.to_mpz();
  std::size_t count = 0;
  std::vector<std::uint8_t> bytes((mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8 + 1);
  mpz_export(bytes.data(), &count, -1, 1, -1, 0, v.get_mpz_t());
  put_u32(out, static_cast<std::uint32_t>(count));
  out.insert(out.end(), bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(count));
}

std::pair<Mantissa, InfoBuffer> deserialize_pair(std::span<const std::uint8_t> in,
                                                 std::size_t& offset) {
  const std::uint32_t mlen = get_u32(in, offset);
  if (mlen != 8 || offset + mlen > in.size()) {
    throw std::invalid_argument("deserialize_pair: bad mantissa field");
  }
  std::uint64_t u = 0;
  for (std::uint32_t i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(in[offset + i]) << (8 * i);
  offset += 8;
  const std::uint32_t blen = get_u32(in, offset);
  if (offset + blen > in.size()) throw std::invalid_argument("deserialize_pair: truncated buffer");
  mpz_class v;
  if (blen > 0) mpz_import(v.get_mpz_t(), blen, -1, 1, -1, 0, in.data() + offset);
  offset += blen;
  return {static_cast<Mantissa>(u), InfoBuffer(v)};
}

}  // namespace momnet
