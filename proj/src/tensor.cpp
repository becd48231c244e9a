#include "ppmn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ppmn {

std::string Shape::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w) + "]";
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
  }
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return BasicTensor(shape, data_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void copy_sample(const BasicTensor<T>& src, std::size_t src_n, BasicTensor<T>& dst, std::size_t dst_n) {
  if (src.shape().sample_size() != dst.shape().sample_size()) {
    throw ShapeError("copy_sample: sample extents differ, " + src.shape().str() + " vs " + dst.shape().str());
  }
  std::memcpy(dst.sample(dst_n), src.sample(src_n), src.shape().sample_size() * sizeof(T));
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void copy_sample(const Tensor&, std::size_t, Tensor&, std::size_t);
template void copy_sample(const TensorD&, std::size_t, TensorD&, std::size_t);
template double max_abs_diff(const Tensor&, const Tensor&);
template double max_abs_diff(const TensorD&, const TensorD&);

}  // namespace ppmn
