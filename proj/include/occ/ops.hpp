#pragma once

#include <vector>

#include "occ/tensor.hpp"

namespace occ {

struct ConvParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

enum class Activation { identity, relu, leaky_relu, sigmoid, tanh, elu };

const char* activation_name(Activation kind);
Activation parse_activation(const std::string& name);

// Output extent of a zero-padded convolution along one axis.
int conv_output_extent(int input, int kernel, const ConvParams& p);

/// 2-D convolution. input N x C x H x W, weight O x C x k x k, bias O (or undefined).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, ConvParams params);

/// Adjoint of conv2d with respect to its input.
/// input N x C x H x W, weight C x O x k x k, bias O (or undefined);
/// output extent is (H - 1) * stride - 2 * padding + k.
Tensor conv2d_transposed(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                         int padding);

// 2x2 window, stride 2. Ties route the gradient to the first (top-left) maximum.
Tensor max_pool2(const Tensor& input);
// Mean of each 2x2 window, stride 2.
Tensor avg_pool2(const Tensor& input);
Tensor upsample_nearest2(const Tensor& input);

Tensor activation(const Tensor& input, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::relu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid); }

// Elementwise; b may have the same shape as a or hold a single value.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor square(const Tensor& a);

// Concatenation along axis 1 (channels) of N x C_i x ... tensors.
Tensor concat(const std::vector<Tensor>& parts);
inline Tensor concat(const Tensor& a, const Tensor& b) { return concat(std::vector<Tensor>{a, b}); }

Tensor reshape(const Tensor& a, Shape shape);

// a: M x K, b: K x N.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matrix product over B x M x K tensors with optional per-operand transposition.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
// Fully connected: input N x F, weight O x F, bias O.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Softmax over the last axis.
Tensor softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor abs_mean(const Tensor& a);

// Mean binary cross-entropy; prediction is clipped to [1e-7, 1 - 1e-7].
Tensor bce(const Tensor& prediction, const Tensor& target);

}  // namespace occ
