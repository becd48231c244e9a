#pragma once

#include <cstddef>
#include <string_view>

namespace ppmn::simd {

enum class Isa { scalar, avx2, neon };

// Data-parallel inner loops used by every dense kernel. One table per
// instruction set; the scalar table is the reference the others are
// tested against.
struct KernelTable {
  Isa isa;
  const char* name;
  // y += a * x
  void (*axpy)(float a, const float* x, float* y, std::size_t n);
  float (*dot)(const float* x, const float* y, std::size_t n);
  // y += x
  void (*add)(const float* x, float* y, std::size_t n);
  void (*relu)(const float* x, float* y, std::size_t n);
  // gx = x > 0 ? gy : 0
  void (*relu_backward)(const float* x, const float* gy, float* gx, std::size_t n);
  // g = grad + decay * value; m = momentum * m + lr * g; value -= m
  void (*sgd_update)(float* value, float* momentum_buf, const float* grad, std::size_t n, float lr,
                     float momentum, float decay);
};

const KernelTable& scalar_table();
// nullptr when the variant is not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Table used by the kernels. Chosen on first use: PPMN_SIMD=scalar|avx2|neon
// forces a variant, otherwise the widest supported one.
const KernelTable& active();
// Throws std::invalid_argument if the variant is unavailable.
void select(Isa isa);
Isa parse_isa(std::string_view name);

inline void axpy(float a, const float* x, float* y, std::size_t n) { active().axpy(a, x, y, n); }
inline float dot(const float* x, const float* y, std::size_t n) { return active().dot(x, y, n); }
inline void add(const float* x, float* y, std::size_t n) { active().add(x, y, n); }
inline void relu(const float* x, float* y, std::size_t n) { active().relu(x, y, n); }
inline void relu_backward(const float* x, const float* gy, float* gx, std::size_t n) {
  active().relu_backward(x, gy, gx, n);
}

// Double precision runs only inside the gradient-check harness; plain loops.
inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}
inline double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}
inline void add(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}
inline void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}
inline void relu_backward(const double* x, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
}

}  // namespace ppmn::simd
