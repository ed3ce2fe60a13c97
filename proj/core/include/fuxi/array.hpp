#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fuxi {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. The data length always equals the
// product of the shape; every constructor and mutator enforces it.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Array vector(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 accessors. rows()/cols() treat a rank-1 array as a single row.
  std::size_t rows() const {
    if (shape_.size() == 2) return shape_[0];
    return shape_.size() == 1 ? 1 : bad_rank();
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    return shape_.size() == 1 ? shape_[0] : bad_rank();
  }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  // Reinterpret with a new shape of identical element count.
  Array reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  [[noreturn]] std::size_t bad_rank() const;

  Shape shape_;
  std::vector<double> data_;
};

void require_same_shape(const Array& a, const Array& b, const char* what);

// In-place helpers used by the optimizer and the backward pass.
void add_inplace(Array& dst, const Array& src);
void scale_inplace(Array& dst, double s);
double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(const Array& a);
double max_abs_diff(const Array& a, const Array& b);

}  // namespace fuxi
