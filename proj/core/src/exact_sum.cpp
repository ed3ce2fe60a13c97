#include "fuxi/exact_sum.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "fuxi/errors.hpp"

namespace fuxi {

void ExactSum::add_shifted(std::uint64_t mantissa, int shift) {
  int limb = shift / 64;
  const int bit = shift % 64;
  unsigned __int128 carry = static_cast<unsigned __int128>(mantissa) << bit;
  while (carry != 0) {
    if (limb >= kLimbs) throw EvaluationError("ExactSum overflow");
    const unsigned __int128 s = static_cast<unsigned __int128>(limbs_[limb]) + static_cast<std::uint64_t>(carry);
    limbs_[limb] = static_cast<std::uint64_t>(s);
    carry = (carry >> 64) + (s >> 64);
    ++limb;
  }
}

void ExactSum::add(double x) {
  if (!std::isfinite(x) || x < 0.0) throw EvaluationError("ExactSum accepts nonnegative finite values only");
  if (x == 0.0) return;
  const auto bits = std::bit_cast<std::uint64_t>(x);
  const int exp = static_cast<int>((bits >> 52) & 0x7FF);
  std::uint64_t mant = bits & ((std::uint64_t{1} << 52) - 1);
  // value = mant · 2^(exp−1075) for normals (implicit bit added), mant · 2^-1074 for subnormals.
  int shift = 0;
  if (exp == 0) {
    shift = 0;
  } else {
    mant |= std::uint64_t{1} << 52;
    shift = exp - 1;
  }
  add_shifted(mant, shift);
}

void ExactSum::merge(const ExactSum& other) {
  std::uint64_t carry = 0;
  for (int i = 0; i < kLimbs; ++i) {
    const unsigned __int128 s =
        static_cast<unsigned __int128>(limbs_[i]) + other.limbs_[i] + carry;
    limbs_[i] = static_cast<std::uint64_t>(s);
    carry = static_cast<std::uint64_t>(s >> 64);
  }
  if (carry) throw EvaluationError("ExactSum overflow");
}

double ExactSum::value() const {
  int top = -1;
  for (int i = kLimbs - 1; i >= 0; --i) {
    if (limbs_[i]) {
      top = i * 64 + 63 - std::countl_zero(limbs_[i]);
      break;
    }
  }
  if (top < 0) return 0.0;
  auto bit_at = [&](int b) -> std::uint64_t {
    if (b < 0) return 0;
    return (limbs_[b / 64] >> (b % 64)) & 1u;
  };
  auto any_below = [&](int b) {  // any set bit strictly below position b
    if (b <= 0) return false;
    const int limb = b / 64, off = b % 64;
    if (off && (limbs_[limb] & ((std::uint64_t{1} << off) - 1))) return true;
    for (int i = 0; i < limb; ++i) {
      if (limbs_[i]) return true;
    }
    return false;
  };
  // Keep 53 significant bits, or fewer when the result is subnormal.
  const int low = std::max(top - 52, 0);
  std::uint64_t mant = 0;
  for (int b = top; b >= low; --b) mant = (mant << 1) | bit_at(b);
  const std::uint64_t guard = bit_at(low - 1);
  const bool sticky = any_below(low - 1);
  if (guard && (sticky || (mant & 1u))) ++mant;
  // mant · 2^(low − 1074)
  const double r = std::ldexp(static_cast<double>(mant), low - 1074);
  if (!std::isfinite(r)) throw EvaluationError("ExactSum result overflows double");
  return r;
}

}  // namespace fuxi
