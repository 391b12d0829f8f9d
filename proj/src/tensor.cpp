#include "seprep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace seprep {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range for " + shape_str(shape_));
  return shape_[axis];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
Tensor<T> Tensor<T>::slice0(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin >= end || end > shape_[0]) {
    throw ShapeError("slice0 out of range for " + shape_str(shape_));
  }
  const std::size_t row = data_.size() / shape_[0];
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                             data_.begin() + static_cast<std::ptrdiff_t>(end * row)));
}

template <typename T>
Tensor<T> Tensor<T>::gather0(std::span<const std::size_t> indices) const {
  if (shape_.empty() || indices.empty()) throw ShapeError("gather0 needs a nonempty index set");
  const std::size_t row = data_.size() / shape_[0];
  std::vector<T> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_[0]) throw ShapeError("gather0 index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  Shape s = shape_;
  s[0] = indices.size();
  return Tensor(std::move(s), std::move(out));
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(T)) == 0);
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
void check_finite(std::span<const T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template bool bit_identical(const Tensor<float>&, const Tensor<float>&);
template bool bit_identical(const Tensor<double>&, const Tensor<double>&);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template void check_finite(std::span<const float>, const char*);
template void check_finite(std::span<const double>, const char*);

}  // namespace seprep
