#include "ppmn/simd.hpp"

namespace ppmn::simd {
namespace {

void axpy_scalar(float a, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += a * x[i];
  }
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
  float s = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

void add_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += x[i];
  }
}

void relu_scalar(const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  }
}

void relu_backward_scalar(const float* x, const float* gy, float* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    gx[i] = x[i] > 0.0f ? gy[i] : 0.0f;
  }
}

void sgd_update_scalar(float* value, float* momentum_buf, const float* grad, std::size_t n, float lr,
                       float momentum, float decay) {
  for (std::size_t i = 0; i < n; ++i) {
    const float g = grad[i] + decay * value[i];
    momentum_buf[i] = momentum * momentum_buf[i] + lr * g;
    value[i] -= momentum_buf[i];
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, "scalar",         axpy_scalar,          dot_scalar,
                                 add_scalar,  relu_scalar,      relu_backward_scalar, sgd_update_scalar};
  return table;
}

}  // namespace ppmn::simd
