#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dctm/tensor.hpp"

namespace dctm {

// Elementwise arithmetic. Operands must have equal shapes, or one of them must
// hold a single element (scalar broadcast). Nothing richer is supported.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

/// 2-d matrix product [m,k]x[k,n] -> [m,n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Affine map over the last axis: x[..., in] * weight[in, out] + bias[out].
/// `bias` may be an undefined tensor.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

enum class Padding { zero, reflect };

struct Conv3dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  Padding mode = Padding::zero;
  std::size_t groups = 1;
};

/// Cross-correlation of input[B, Cin, D, H, W] with kernels
/// [Cout, Cin/groups, kd, kh, kw]; optional bias[Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernels, const Conv3dOptions& opt,
                 const Tensor<T>& bias = {});

template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

/// Normalizes along `axis` to zero mean / unit variance, then applies the
/// optional per-position affine gain[n] and bias[n] (n = extent of `axis`).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Mean negative log-likelihood of `labels` under softmax(logits[B, K]).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Mean over one axis; the axis is removed from the result shape.
template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, std::size_t axis);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
/// Repeats size-1 axes of `x` up to `shape` (same rank).
template <typename T> Tensor<T> expand(const Tensor<T>& x, const Shape& shape);
/// x[..., n] * gain[n].
template <typename T> Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gain);

/// Mean squared off-diagonal entry of the Pearson correlation matrix between
/// the columns of features[B, F]. Requires B >= 2 and F >= 2.
template <typename T>
Tensor<T> correlation_penalty(const Tensor<T>& features, double eps = 1e-8);

}  // namespace dctm
