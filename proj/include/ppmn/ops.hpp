#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ppmn/tensor.hpp"

namespace ppmn {

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend constexpr bool operator==(const Extent2&, const Extent2&) = default;
};

// Convolution geometry. `rate` spaces kernel taps `rate` pixels apart
// (atrous / dilated convolution).
struct ConvSpec {
  std::size_t out_channels = 1;
  Extent2 kernel{1, 1};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};
  std::size_t rate = 1;

  // k + (k - 1)(rate - 1) along each axis.
  Extent2 effective_kernel() const;
  void validate() const;
};

// Spatial output extent of a convolution; throws ShapeError when the padded
// input cannot hold one effective kernel.
Extent2 conv_output_extent(const Shape& input, const ConvSpec& spec);

// Lowered (patch-matrix) convolution. Cross-correlation, no kernel flip.
// weights: [out_c, in_c, kh, kw]; bias: out_c values.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias,
                              const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const ConvSpec& spec,
                             const BasicTensor<T>& grad_out);

// Direct loop definition; the normative oracle for conv2d_forward.
template <typename T>
BasicTensor<T> conv2d_reference(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                std::span<const T> bias, const ConvSpec& spec);

// Zero-inflates a kernel: taps land at stride-`rate` positions of a
// k + (k - 1)(rate - 1) grid.
template <typename T>
BasicTensor<T> dilate_kernel(const BasicTensor<T>& weights, std::size_t rate);

struct PoolSpec {
  Extent2 window{2, 2};
  Extent2 stride{2, 2};
};

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  // Flat input index of each output's winner; ties go to the first element
  // in row-major scan order.
  std::vector<std::uint32_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor<T>& input, const PoolSpec& spec);

template <typename T>
BasicTensor<T> maxpool_backward(std::span<const std::uint32_t> argmax, const Shape& input_shape,
                                const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

// Derivative at exactly 0 is taken as 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_out);

// Fully connected layer over each flattened sample. weights: [out, in, 1, 1].
// Output shape [n, out, 1, 1].
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, std::span<const T> bias);

template <typename T>
struct FcGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& grad_out);

// Stacks channels in argument order. All inputs share (n, h, w).
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const BasicTensor<T>* parts[] = {&a, &b};
  return concat_channels<T>(parts);
}

// Inverse of concat_channels for gradients.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const std::size_t> channels);

// Two-unit softmax per sample. logits: [n, 2, 1, 1].
template <typename T>
BasicTensor<T> softmax_pair_forward(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> softmax_pair_backward(const BasicTensor<T>& probs, const BasicTensor<T>& grad_out);

}  // namespace ppmn
