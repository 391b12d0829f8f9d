#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "seprep/error.hpp"

namespace seprep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. T is float for training/inference and double for
// verification runs.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T v);
  Tensor reshaped(Shape shape) const;

  // Rows [begin, end) along axis 0.
  Tensor slice0(std::size_t begin, std::size_t end) const;
  // Gathers the given indices along axis 0.
  Tensor gather0(std::span<const std::size_t> indices) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  std::vector<U> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<U>(t[i]);
  return Tensor<U>(t.shape(), std::move(out));
}

// Bitwise equality of the float payload (distinguishes -0 from +0).
template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// Throws NumericError naming `op` when any element is NaN or Inf.
template <typename T>
void check_finite(std::span<const T> values, const char* op);

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  check_finite(t.data(), op);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace seprep
