#pragma once

#include <span>
#include <utility>

#include "cgmlp/tape.hpp"
#include "cgmlp/tensor.hpp"

// Differentiable kernels. Every op records a backward rule when any input is
// attached to a tape; with no tape involved it is a plain forward kernel.
// Inputs attached to two different tapes are rejected.
namespace cgmlp::ops {

enum class Padding { kSame, kValid };

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kGeluSqrt2OverPi = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;

// [m x k] * [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Affine map over the last axis: [... x d] * [d x e] + bias[e] -> [... x e].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Adds bias[d] along the last axis of x [... x d].
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// Cross-correlation with per-output-channel bias.
// input [B x Cin x H x W], kernel [Cout x Cin x kH x kW], bias [Cout].
// kSame pads so that H' = ceil(H / stride), splitting odd totals toward the
// bottom/right; kValid pads nothing.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, Padding padding);

// 2x2 window, stride 2. Ties route the gradient to the first element of the
// window in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input);

// Standardizes the last axis (biased variance, eps = kLayerNormEps) then
// applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

// 0.5 x (1 + tanh(kGeluSqrt2OverPi (x + kGeluCubic x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// First half then second half along `axis`. The extent must be even.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_axis(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> concat_axis(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Sum of all entries as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// [B x n x d] -> [B x d], mean over the token axis.
template <typename T>
Tensor<T> mean_tokens(const Tensor<T>& x);

// Affine map along the token axis, independently for every feature column:
// y[b, i, c] = sum_j weight[i, j] * x[b, j, c] + bias[i].
// x [B x n x c], weight [m x n], bias [m] -> [B x m x c].
template <typename T>
Tensor<T> token_affine(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Non-overlapping p x p patches, row-major over the patch grid, each flattened
// channel-major: [B x C x H x W] -> [B x (H/p)(W/p) x C p p].
template <typename T>
Tensor<T> patchify(const Tensor<T>& img, std::size_t patch);

// One token per spatial location, row-major: [B x C x h x w] -> [B x hw x C].
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& feature_map);

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace cgmlp::ops
