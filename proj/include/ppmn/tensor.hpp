#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppmn {

// Input that violates a shape or geometry contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file contents (PPM, checkpoint, config).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf, divergence, or a failed gradient check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t sample_size() const { return c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

// Dense (n, c, h, w) array in row-major order.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T* sample(std::size_t n) { return data_.data() + n * shape_.sample_size(); }
  const T* sample(std::size_t n) const { return data_.data() + n * shape_.sample_size(); }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  void fill(T value);
  void zero() { fill(T(0)); }

  // Same data, new extents. Element count must not change.
  BasicTensor reshaped(Shape shape) const;

  bool all_finite() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

// Copies sample `src_n` of `src` into sample `dst_n` of `dst`.
template <typename T>
void copy_sample(const BasicTensor<T>& src, std::size_t src_n, BasicTensor<T>& dst, std::size_t dst_n);

// Largest absolute element-wise difference; shapes must match.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace ppmn
