#ifndef ADVLAB_OPS_HPP
#define ADVLAB_OPS_HPP

#include "advlab/graph.hpp"
#include "advlab/tensor.hpp"

// Differentiable kernels. Image tensors are NCHW; the leading axis of every
// tensor that flows through the model is the batch axis, and no op mixes
// values across samples, so per-sample results do not depend on batch size.
namespace advlab::ops {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kGroupNormEps = 1e-5;

/// Cross-correlation with zero padding. x:[B,Cin,H,W], w:[Cout,Cin,k,k], bias:[Cout] or invalid.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var bias, int stride, int padding);

/// Adjoint of conv2d. x:[B,Cin,H,W], w:[Cin,Cout,k,k]; output side (H-1)*stride - 2*padding + k.
template <typename T>
Var conv_transpose2d(Graph<T>& g, Var x, Var w, Var bias, int stride, int padding);

/// x:[B,...] flattened per sample to `in`, w:[out,in], bias:[out] or invalid -> [B,out].
/// 2x2 max pooling with stride 2; H and W must be even. Ties route the
/// gradient to the first maximum in row-major order.
template <typename T>
Var max_pool2x2(Graph<T>& g, Var x);

template <typename T>
Var linear(Graph<T>& g, Var x, Var w, Var bias);

template <typename T>
Var leaky_relu(Graph<T>& g, Var x, double slope = kLeakySlope);

template <typename T>
Var sigmoid(Graph<T>& g, Var x);

/// Per-sample group normalization with per-channel affine. x:[B,C,H,W], gamma/beta:[C].
template <typename T>
Var group_norm(Graph<T>& g, Var x, Var gamma, Var beta, int groups, double eps = kGroupNormEps);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// a*x + b*y, elementwise.
template <typename T>
Var axpby(Graph<T>& g, double a, Var x, double b, Var y);

template <typename T>
Var scale(Graph<T>& g, Var x, double c);

template <typename T>
Var add_scalar(Graph<T>& g, Var x, double c);

template <typename T>
Var square(Graph<T>& g, Var x);

/// Multiplies every sample's values by a constant tensor of identical shape.
template <typename T>
Var mul_const(Graph<T>& g, Var x, const Tensor<T>& c);

/// Channel concatenation of two [B,C,H,W] tensors.
template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b);

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);

/// [B,C,H,W] -> [B,C].
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);

/// Sum of all elements -> [1].
template <typename T>
Var sum(Graph<T>& g, Var x);

/// Mean of all elements -> [1].
template <typename T>
Var mean(Graph<T>& g, Var x);

// Per-sample reductions: [B,...] -> [B]. Targets are constants.

/// Sum of |pred - target|; the subgradient at zero is 0.
template <typename T>
Var abs_error_sum(Graph<T>& g, Var pred, const Tensor<T>& target);

template <typename T>
Var squared_error_sum(Graph<T>& g, Var pred, const Tensor<T>& target);

template <typename T>
Var mean_abs_error(Graph<T>& g, Var pred, const Tensor<T>& target);

/// (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).
template <typename T>
Var soft_dice(Graph<T>& g, Var prob, const Tensor<T>& target, double smooth);

/// Mean binary cross-entropy with probabilities clamped to [clamp, 1-clamp].
template <typename T>
Var binary_cross_entropy(Graph<T>& g, Var prob, const Tensor<T>& target, double clamp);

/// Per-sample dot product with a constant weight tensor of the same per-sample shape.
template <typename T>
Var dot_per_sample(Graph<T>& g, Var x, const Tensor<T>& w);

} // namespace advlab::ops

#endif // ADVLAB_OPS_HPP
