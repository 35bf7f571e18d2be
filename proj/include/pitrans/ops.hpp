#pragma once

#include <cstdint>
#include <vector>

#include "pitrans/tensor.hpp"

namespace pitrans {

// Every op below records itself on the active tape when any input requires grad.
// Shape violations throw DimensionError.

// Elementwise, operands of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, float c);
Tensor mul_scalar(const Tensor& x, float c);

Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope = 0.2f);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

// Full reductions to a shape-{1} tensor, accumulated in double.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// out.shape[i] = x.shape[perm[i]].
Tensor permute(const Tensor& x, const std::vector<int>& perm);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor index_select(const Tensor& x, int axis, const std::vector<std::int64_t>& indices);

/// Nearest-neighbour x2 upsampling of a b x c x h x w tensor.
Tensor upsample_nearest2x(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Batched product over matching leading dims: (..., m, k) x (..., k, n).
Tensor matmul(const Tensor& a, const Tensor& b);

/// 2-D cross-correlation. input b x c_in x h x w, weight c_out x c_in x k x k,
/// bias c_out or undefined. Implemented as patch gather + GEMM.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

/// Dense layer over the last axis: x (..., in), weight (out, in), bias (out) or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-channel batch normalization of a b x c x h x w tensor. In training mode the
/// batch statistics normalize and the running buffers are updated in place
/// (running_var with the unbiased batch variance); otherwise the running buffers
/// normalize.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, float momentum, float eps);

/// Mean binary cross-entropy of sigmoid(logits) against a constant target in {0, 1},
/// evaluated in log space; each element's loss is capped at -log(1e-12).
Tensor bce_with_logits(const Tensor& logits, float target);

}  // namespace pitrans
