#include <arm_neon.h>

#include <cmath>

#include "ppmn/simd.hpp"

namespace ppmn::simd {

namespace {

void axpy_neon(float a, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
  }
  for (; i < n; ++i) {
    y[i] = std::fma(a, x[i], y[i]);
  }
}

float dot_neon(const float* x, const float* y, std::size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
  }
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) {
    s = std::fma(x[i], y[i], s);
  }
  return s;
}

void add_neon(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vld1q_f32(x + i)));
  }
  for (; i < n; ++i) {
    y[i] += x[i];
  }
}

void relu_neon(const float* x, float* y, std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    vst1q_f32(y + i, vmaxq_f32(vld1q_f32(x + i), zero));
  }
  for (; i < n; ++i) {
    y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  }
}

void relu_backward_neon(const float* x, const float* gy, float* gx, std::size_t n) {
  const float32x4_t zero = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t mask = vcgtq_f32(vld1q_f32(x + i), zero);
    vst1q_f32(gx + i, vreinterpretq_f32_u32(vandq_u32(vreinterpretq_u32_f32(vld1q_f32(gy + i)), mask)));
  }
  for (; i < n; ++i) {
    gx[i] = x[i] > 0.0f ? gy[i] : 0.0f;
  }
}

void sgd_update_neon(float* value, float* momentum_buf, const float* grad, std::size_t n, float lr,
                     float momentum, float decay) {
  const float32x4_t vlr = vdupq_n_f32(lr);
  const float32x4_t vmom = vdupq_n_f32(momentum);
  const float32x4_t vdecay = vdupq_n_f32(decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t v = vld1q_f32(value + i);
    const float32x4_t g = vfmaq_f32(vld1q_f32(grad + i), vdecay, v);
    const float32x4_t m = vfmaq_f32(vmulq_f32(vlr, g), vmom, vld1q_f32(momentum_buf + i));
    vst1q_f32(momentum_buf + i, m);
    vst1q_f32(value + i, vsubq_f32(v, m));
  }
  for (; i < n; ++i) {
    const float g = std::fma(decay, value[i], grad[i]);
    momentum_buf[i] = std::fma(momentum, momentum_buf[i], lr * g);
    value[i] -= momentum_buf[i];
  }
}

}  // namespace

const KernelTable& neon_table_unchecked() {
  static const KernelTable table{Isa::neon, "neon",    axpy_neon,          dot_neon,
                                 add_neon,  relu_neon, relu_backward_neon, sgd_update_neon};
  return table;
}

}  // namespace ppmn::simd
