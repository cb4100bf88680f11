#pragma once

// Forward and backward kernels for the layer primitives used by the two
// networks. Each backward accumulates (+=) into the provided gradient
// buffers, which must already have the matching shape.

#include <string_view>
#include <type_traits>

#include "bldn/tensor.hpp"

namespace bldn {

struct ConvPadding {
  int top = 0;
  int left = 0;
  int bottom = 0;
  int right = 0;

  /// Padding that keeps spatial size for a k x k kernel. Even kernels pad
  /// the trailing side (k = 2 -> top/left 0, bottom/right 1).
  static ConvPadding same(int kernel) {
    const int before = (kernel - 1) / 2;
    const int after = kernel - 1 - before;
    return {before, before, after, after};
  }
  static ConvPadding uniform(int pad) { return {pad, pad, pad, pad}; }
};

enum class Activation { relu, leaky_relu, tanh, exp, sigmoid, softmax_channels, linear };

inline constexpr double kLeakyReluSlope = 0.1;

std::string_view to_string(Activation kind);

/// kernel: (out_channels, in_channels, kh, kw); bias: (1, out_channels, 1, 1) or empty.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const Tensor4<T>& kernel,
                          const std::type_identity_t<Tensor4<T>>* bias,
                          ConvPadding pad);

template <typename T>
void conv2d_backward(const Tensor4<T>& input, const Tensor4<T>& kernel, ConvPadding pad,
                     const Tensor4<T>& grad_out, Tensor4<T>* grad_input, Tensor4<T>* grad_kernel,
                     Tensor4<T>* grad_bias);

/// 2x2 max pooling. Ties resolve to the first element in row-major block order.
template <typename T>
Tensor4<T> pool2_forward(const Tensor4<T>& input);

template <typename T>
void pool2_backward(const Tensor4<T>& input, const Tensor4<T>& grad_out, Tensor4<T>& grad_input);

template <typename T>
Tensor4<T> upsample_nearest_forward(const Tensor4<T>& input, int factor);

template <typename T>
void upsample_nearest_backward(const Tensor4<T>& grad_out, int factor, Tensor4<T>& grad_input);

template <typename T>
Tensor4<T> activation_forward(const Tensor4<T>& input, Activation kind);

/// Needs both the forward input and its output.
template <typename T>
void activation_backward(const Tensor4<T>& input, const Tensor4<T>& output, Activation kind,
                         const Tensor4<T>& grad_out, Tensor4<T>& grad_input);

template <typename T>
Tensor4<T> concat_channels_forward(const Tensor4<T>& a, const Tensor4<T>& b);

}  // namespace bldn
