#pragma once

#include <array>
#include <cstdint>

namespace fuxi {

// Exact accumulator for nonnegative finite doubles: a fixed-point integer in
// units of 2^-1074 wide enough for any sum of up to 2^64 values. Merging two
// accumulators is exact, so a set total equals the merged totals of any
// partition of it; value() rounds once, to nearest-even.
class ExactSum {
 public:
  void add(double x);
  void merge(const ExactSum& other);
  double value() const;
  bool operator==(const ExactSum&) const = default;

 private:
  static constexpr int kLimbs = 35;  // 2240 bits
  void add_shifted(std::uint64_t mantissa, int shift);
  std::array<std::uint64_t, kLimbs> limbs_{};
};

}  // namespace fuxi
