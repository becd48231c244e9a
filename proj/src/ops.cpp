#include "ppmn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ppmn/parallel.hpp"
#include "ppmn/simd.hpp"

namespace ppmn {

Extent2 ConvSpec::effective_kernel() const {
  return {kernel.h + (kernel.h - 1) * (rate - 1), kernel.w + (kernel.w - 1) * (rate - 1)};
}

void ConvSpec::validate() const {
  if (out_channels == 0 || kernel.h == 0 || kernel.w == 0 || stride.h == 0 || stride.w == 0 || rate == 0) {
    throw ShapeError("conv spec: out_channels, kernel, stride and rate must all be >= 1");
  }
}

Extent2 conv_output_extent(const Shape& input, const ConvSpec& spec) {
  spec.validate();
  const Extent2 eff = spec.effective_kernel();
  const std::size_t padded_h = input.h + 2 * spec.padding.h;
  const std::size_t padded_w = input.w + 2 * spec.padding.w;
  if (padded_h < eff.h || padded_w < eff.w) {
    throw ShapeError("conv: padded input " + std::to_string(padded_h) + "x" + std::to_string(padded_w) +
                     " is smaller than the effective kernel " + std::to_string(eff.h) + "x" +
                     std::to_string(eff.w) + " (input " + input.str() + ")");
  }
  return {(padded_h - eff.h) / spec.stride.h + 1, (padded_w - eff.w) / spec.stride.w + 1};
}

namespace {

template <typename T>
Extent2 check_conv_args(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::size_t bias_len,
                        const ConvSpec& spec) {
  const Shape& in = input.shape();
  const Shape& ws = weights.shape();
  if (ws.n != spec.out_channels || ws.h != spec.kernel.h || ws.w != spec.kernel.w) {
    throw ShapeError("conv: weights " + ws.str() + " do not match spec (out_channels " +
                     std::to_string(spec.out_channels) + ", kernel " + std::to_string(spec.kernel.h) + "x" +
                     std::to_string(spec.kernel.w) + ")");
  }
  if (in.c != ws.c) {
    throw ShapeError("conv: input " + in.str() + " has " + std::to_string(in.c) + " channels but weights " +
                     ws.str() + " expect " + std::to_string(ws.c));
  }
  if (bias_len != spec.out_channels) {
    throw ShapeError("conv: bias has " + std::to_string(bias_len) + " values, expected " +
                     std::to_string(spec.out_channels));
  }
  if (in.n == 0) {
    throw ShapeError("conv: empty batch in input " + in.str());
  }
  return conv_output_extent(in, spec);
}

// Patch matrix for one sample: row k = (ci, ky, kx), column p = (oy, ox).
template <typename T>
void im2col(const T* in, const Shape& shape, const ConvSpec& spec, Extent2 out, T* col) {
  const std::size_t plane = out.h * out.w;
  for (std::size_t ci = 0; ci < shape.c; ++ci) {
    const T* src = in + ci * shape.h * shape.w;
    for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel.w; ++kx) {
        T* row = col + ((ci * spec.kernel.h + ky) * spec.kernel.w + kx) * plane;
        for (std::size_t oy = 0; oy < out.h; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride.h + ky * spec.rate) - static_cast<long>(spec.padding.h);
          T* dst = row + oy * out.w;
          if (iy < 0 || iy >= static_cast<long>(shape.h)) {
            std::fill(dst, dst + out.w, T(0));
            continue;
          }
          const T* src_row = src + static_cast<std::size_t>(iy) * shape.w;
          for (std::size_t ox = 0; ox < out.w; ++ox) {
            const long ix =
                static_cast<long>(ox * spec.stride.w + kx * spec.rate) - static_cast<long>(spec.padding.w);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(shape.w)) ? T(0) : src_row[ix];
          }
        }
      }
    }
  }
}

// Scatter-adds a patch-matrix gradient back onto one input sample.
template <typename T>
void col2im(const T* col, const Shape& shape, const ConvSpec& spec, Extent2 out, T* in) {
  const std::size_t plane = out.h * out.w;
  for (std::size_t ci = 0; ci < shape.c; ++ci) {
    T* dst = in + ci * shape.h * shape.w;
    for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel.w; ++kx) {
        const T* row = col + ((ci * spec.kernel.h + ky) * spec.kernel.w + kx) * plane;
        for (std::size_t oy = 0; oy < out.h; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride.h + ky * spec.rate) - static_cast<long>(spec.padding.h);
          if (iy < 0 || iy >= static_cast<long>(shape.h)) continue;
          T* dst_row = dst + static_cast<std::size_t>(iy) * shape.w;
          const T* src = row + oy * out.w;
          for (std::size_t ox = 0; ox < out.w; ++ox) {
            const long ix =
                static_cast<long>(ox * spec.stride.w + kx * spec.rate) - static_cast<long>(spec.padding.w);
            if (ix >= 0 && ix < static_cast<long>(shape.w)) dst_row[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                              const ConvSpec& spec) {
  const Extent2 out = check_conv_args(input, weights, bias.size(), spec);
  const Shape& in = input.shape();
  const std::size_t k_len = in.c * spec.kernel.h * spec.kernel.w;
  const std::size_t plane = out.h * out.w;
  BasicTensor<T> output(Shape{in.n, spec.out_channels, out.h, out.w});

  parallel_for(in.n, [&](std::size_t n) {
    std::vector<T> col(k_len * plane);
    im2col(input.sample(n), in, spec, out, col.data());
    T* dst = output.sample(n);
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      T* row = dst + co * plane;
      std::fill(row, row + plane, bias[co]);
      const T* w = weights.ptr() + co * k_len;
      for (std::size_t k = 0; k < k_len; ++k) {
        simd::axpy(w[k], col.data() + k * plane, row, plane);
      }
    }
  });
  return output;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const ConvSpec& spec,
                             const BasicTensor<T>& grad_out) {
  const Extent2 out = check_conv_args(input, weights, spec.out_channels, spec);
  const Shape& in = input.shape();
  const Shape expected{in.n, spec.out_channels, out.h, out.w};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv backward: grad_out " + grad_out.shape().str() + " does not match forward output " +
                     expected.str());
  }
  const std::size_t k_len = in.c * spec.kernel.h * spec.kernel.w;
  const std::size_t plane = out.h * out.w;
  const std::size_t col_len = k_len * plane;

  std::vector<T> cols(in.n * col_len);
  parallel_for(in.n, [&](std::size_t n) { im2col(input.sample(n), in, spec, out, cols.data() + n * col_len); });

  ConvGrads<T> grads{BasicTensor<T>(in), BasicTensor<T>(weights.shape()), std::vector<T>(spec.out_channels)};

  // Weight and bias gradients: one output channel per task, batch summed in order.
  parallel_for(spec.out_channels, [&](std::size_t co) {
    T* gw = grads.weights.ptr() + co * k_len;
    T gb = T(0);
    for (std::size_t n = 0; n < in.n; ++n) {
      const T* g = grad_out.sample(n) + co * plane;
      for (std::size_t p = 0; p < plane; ++p) gb += g[p];
      const T* col = cols.data() + n * col_len;
      for (std::size_t k = 0; k < k_len; ++k) {
        gw[k] += simd::dot(g, col + k * plane, plane);
      }
    }
    grads.bias[co] = gb;
  });

  parallel_for(in.n, [&](std::size_t n) {
    std::vector<T> gcol(col_len, T(0));
    const T* g = grad_out.sample(n);
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      const T* w = weights.ptr() + co * k_len;
      for (std::size_t k = 0; k < k_len; ++k) {
        simd::axpy(w[k], g + co * plane, gcol.data() + k * plane, plane);
      }
    }
    col2im(gcol.data(), in, spec, out, grads.input.sample(n));
  });
  return grads;
}

template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                std::span<const T> bias, const ConvSpec& spec) {
  const Extent2 out = check_conv_args(input, weights, bias.size(), spec);
  const Shape& in = input.shape();
  BasicTensor<T> output(Shape{in.n, spec.out_channels, out.h, out.w});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t co = 0; co < spec.out_channels; ++co) {
      for (std::size_t oy = 0; oy < out.h; ++oy) {
        for (std::size_t ox = 0; ox < out.w; ++ox) {
          double acc = static_cast<double>(bias[co]);
          for (std::size_t ci = 0; ci < in.c; ++ci) {
            for (std::size_t ky = 0; ky < spec.kernel.h; ++ky) {
              const long iy =
                  static_cast<long>(oy * spec.stride.h + ky * spec.rate) - static_cast<long>(spec.padding.h);
              if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
              for (std::size_t kx = 0; kx < spec.kernel.w; ++kx) {
                const long ix =
                    static_cast<long>(ox * spec.stride.w + kx * spec.rate) - static_cast<long>(spec.padding.w);
                if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
                acc += static_cast<double>(weights.at(co, ci, ky, kx)) *
                       static_cast<double>(input.at(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
              }
            }
          }
          output.at(n, co, oy, ox) = static_cast<T>(acc);
        }
      }
    }
  }
  return output;
}

template <typename T>
BasicTensor<T> dilate_kernel(const BasicTensor<T>& weights, std::size_t rate) {
  if (rate == 0) {
    throw ShapeError("dilate_kernel: rate must be >= 1");
  }
  const Shape& ws = weights.shape();
  if (ws.h == 0 || ws.w == 0) {
    throw ShapeError("dilate_kernel: empty kernel " + ws.str());
  }
  const Shape dilated{ws.n, ws.c, ws.h + (ws.h - 1) * (rate - 1), ws.w + (ws.w - 1) * (rate - 1)};
  BasicTensor<T> out(dilated);
  for (std::size_t o = 0; o < ws.n; ++o) {
    for (std::size_t i = 0; i < ws.c; ++i) {
      for (std::size_t ky = 0; ky < ws.h; ++ky) {
        for (std::size_t kx = 0; kx < ws.w; ++kx) {
          out.at(o, i, ky * rate, kx * rate) = weights.at(o, i, ky, kx);
        }
      }
    }
  }
  return out;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolSpec& spec) {
  const Shape& in = input.shape();
  if (spec.window.h == 0 || spec.window.w == 0 || spec.stride.h == 0 || spec.stride.w == 0) {
    throw ShapeError("maxpool: window and stride must be >= 1");
  }
  if (in.h < spec.window.h || in.w < spec.window.w) {
    throw ShapeError("maxpool: window " + std::to_string(spec.window.h) + "x" + std::to_string(spec.window.w) +
                     " does not fit input " + in.str());
  }
  const std::size_t oh = (in.h - spec.window.h) / spec.stride.h + 1;
  const std::size_t ow = (in.w - spec.window.w) / spec.stride.w + 1;
  MaxPoolResult<T> result{BasicTensor<T>(Shape{in.n, in.c, oh, ow}), std::vector<std::uint32_t>(in.n * in.c * oh * ow)};
  parallel_for(in.n * in.c, [&](std::size_t nc) {
    const std::size_t base = nc * in.h * in.w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + (oy * spec.stride.h) * in.w + ox * spec.stride.w;
        for (std::size_t wy = 0; wy < spec.window.h; ++wy) {
          for (std::size_t wx = 0; wx < spec.window.w; ++wx) {
            const std::size_t idx = base + (oy * spec.stride.h + wy) * in.w + ox * spec.stride.w + wx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (nc * oh + oy) * ow + ox;
        result.output[o] = input[best];
        result.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  });
  return result;
}

template <typename T>
BasicTensor<T> maxpool_backward(std::span<const std::uint32_t> argmax, const Shape& input_shape,
                                const BasicTensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("maxpool backward: argmax map has " + std::to_string(argmax.size()) +
                     " entries but grad_out " + grad_out.shape().str() + " has " + std::to_string(grad_out.size()));
  }
  BasicTensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad_in.size()) {
      throw ShapeError("maxpool backward: argmax index out of range for input " + input_shape.str());
    }
    grad_in[argmax[i]] += grad_out[i];
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  simd::relu(input.ptr(), out.ptr(), input.size());
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw ShapeError("relu backward: input " + input.shape().str() + " vs grad_out " + grad_out.shape().str());
  }
  BasicTensor<T> grad_in(input.shape());
  simd::relu_backward(input.ptr(), grad_out.ptr(), grad_in.ptr(), input.size());
  return grad_in;
}

namespace {

template <typename T>
void check_fc_args(const BasicTensor<T>& input, const BasicTensor<T>& weights) {
  const std::size_t in_len = input.shape().sample_size();
  if (weights.shape().sample_size() != in_len) {
    throw ShapeError("fc: input " + input.shape().str() + " flattens to " + std::to_string(in_len) +
                     " features but weights " + weights.shape().str() + " expect " +
                     std::to_string(weights.shape().sample_size()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias) {
  check_fc_args(input, weights);
  const std::size_t out_len = weights.shape().n;
  if (bias.size() != out_len) {
    throw ShapeError("fc: bias has " + std::to_string(bias.size()) + " values, expected " + std::to_string(out_len));
  }
  const std::size_t in_len = input.shape().sample_size();
  const std::size_t batch = input.shape().n;
  BasicTensor<T> out(Shape{batch, out_len, 1, 1});
  parallel_for(batch, [&](std::size_t n) {
    const T* x = input.sample(n);
    T* y = out.sample(n);
    for (std::size_t o = 0; o < out_len; ++o) {
      y[o] = bias[o] + simd::dot(weights.ptr() + o * in_len, x, in_len);
    }
  });
  return out;
}

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& grad_out) {
  check_fc_args(input, weights);
  const std::size_t out_len = weights.shape().n;
  const std::size_t in_len = input.shape().sample_size();
  const std::size_t batch = input.shape().n;
  if (grad_out.shape() != Shape{batch, out_len, 1, 1}) {
    throw ShapeError("fc backward: grad_out " + grad_out.shape().str() + " does not match output [" +
                     std::to_string(batch) + "x" + std::to_string(out_len) + "x1x1]");
  }
  FcGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(weights.shape()), std::vector<T>(out_len)};
  parallel_for(out_len, [&](std::size_t o) {
    T* gw = grads.weights.ptr() + o * in_len;
    T gb = T(0);
    for (std::size_t n = 0; n < batch; ++n) {
      const T g = grad_out.sample(n)[o];
      gb += g;
      simd::axpy(g, input.sample(n), gw, in_len);
    }
    grads.bias[o] = gb;
  });
  parallel_for(batch, [&](std::size_t n) {
    T* gx = grads.input.sample(n);
    const T* g = grad_out.sample(n);
    for (std::size_t o = 0; o < out_len; ++o) {
      simd::axpy(g[o], weights.ptr() + o * in_len, gx, in_len);
    }
  });
  return grads;
}

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) {
    throw ShapeError("concat: no inputs");
  }
  const Shape& first = parts.front()->shape();
  std::size_t channels = 0;
  for (const BasicTensor<T>* p : parts) {
    const Shape& s = p->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat: non-channel extents differ, " + first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = out.sample(n);
    for (const BasicTensor<T>* p : parts) {
      const std::size_t len = p->shape().sample_size();
      std::copy(p->sample(n), p->sample(n) + len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const std::size_t> channels) {
  const Shape& s = grad.shape();
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != s.c) {
    throw ShapeError("split_channels: parts sum to " + std::to_string(total) + " channels but tensor " + s.str() +
                     " has " + std::to_string(s.c));
  }
  std::vector<BasicTensor<T>> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape{s.n, c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = grad.sample(n);
    for (auto& part : parts) {
      const std::size_t len = part.shape().sample_size();
      std::copy(src, src + len, part.sample(n));
      src += len;
    }
  }
  return parts;
}

template <typename T>
BasicTensor<T> softmax_pair_forward(const BasicTensor<T>& logits) {
  if (logits.shape().sample_size() != 2) {
    throw ShapeError("softmax_pair: expected two logits per sample, got " + logits.shape().str());
  }
  BasicTensor<T> probs(logits.shape());
  for (std::size_t n = 0; n < logits.shape().n; ++n) {
    const T s0 = logits.sample(n)[0];
    const T s1 = logits.sample(n)[1];
    const T m = std::max(s0, s1);
    const T e0 = std::exp(s0 - m);
    const T e1 = std::exp(s1 - m);
    probs.sample(n)[0] = e0 / (e0 + e1);
    probs.sample(n)[1] = e1 / (e0 + e1);
  }
  return probs;
}

template <typename T>
BasicTensor<T> softmax_pair_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_out) {
  if (probs.shape() != grad_out.shape() || probs.shape().sample_size() != 2) {
    throw ShapeError("softmax_pair backward: probs " + probs.shape().str() + " vs grad_out " +
                     grad_out.shape().str());
  }
  BasicTensor<T> grad_in(probs.shape());
  for (std::size_t n = 0; n < probs.shape().n; ++n) {
    const T* p = probs.sample(n);
    const T* g = grad_out.sample(n);
    const T inner = p[0] * g[0] + p[1] * g[1];
    grad_in.sample(n)[0] = p[0] * (g[0] - inner);
    grad_in.sample(n)[1] = p[1] * (g[1] - inner);
  }
  return grad_in;
}

#define PPMN_INSTANTIATE_OPS(T)                                                                                  \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,        \
                                         const ConvSpec&);                                                        \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&,             \
                                        const BasicTensor<T>&);                                                   \
  template BasicTensor<T> conv2d_reference(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>,      \
                                           const ConvSpec&);                                                      \
  template BasicTensor<T> dilate_kernel(const BasicTensor<T>&, std::size_t);                                      \
  template MaxPoolResult<T> maxpool_forward(const BasicTensor<T>&, const PoolSpec&);                              \
  template BasicTensor<T> maxpool_backward(std::span<const std::uint32_t>, const Shape&, const BasicTensor<T>&);  \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                    \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>);           \
  template FcGrads<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const>);                                \
  template std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>&, std::span<const std::size_t>);       \
  template BasicTensor<T> softmax_pair_forward(const BasicTensor<T>&);                                            \
  template BasicTensor<T> softmax_pair_backward(const BasicTensor<T>&, const BasicTensor<T>&);

PPMN_INSTANTIATE_OPS(float)
PPMN_INSTANTIATE_OPS(double)

#undef PPMN_INSTANTIATE_OPS

}  // namespace ppmn
