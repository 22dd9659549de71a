#pragma once

// Differentiable primitives. All ops take and return BasicTensor<T> for
// T in {float, double}; shape mismatches raise DimensionError naming the
// offending axes.

#include <cstddef>
#include <span>
#include <vector>

#include "repro/autodiff/tensor.hpp"

namespace repro::ad {

// elementwise
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);

/// x + b where b's shape equals the trailing axes of x (bias, positional table).
template <typename T>
BasicTensor<T> add_trailing(const BasicTensor<T>& x, const BasicTensor<T>& b);

// linear algebra
/// [M,K] x [K,N] -> [M,N]
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Batched [B,M,K] x [B,K,N] -> [B,M,N]; trans_* transposes the last two axes
/// of the corresponding operand.
template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a = false,
                   bool trans_b = false);

/// y = x W^T + bias over the last axis of x. weight is [out, in]; bias may be
/// undefined.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// Cross-correlation of input [N,C,H,W] with weight [K,C,kh,kw] plus bias [K]
/// (bias may be undefined). Lowered to im2col + GEMM.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding);

// normalization and probabilities
/// Softmax along the last axis with max subtraction. NaN input -> NumericError.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Divides each row (last axis) by its sum.
template <typename T> BasicTensor<T> row_normalize(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps = T(1e-5));

// losses
/// Mean over rows of -log softmax(logits)[target].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);

/// Mean over rows of -log probs[target]; probs are already normalized.
template <typename T>
BasicTensor<T> cross_entropy_probs(const BasicTensor<T>& probs, std::span<const int> targets);

// reductions
template <typename T> BasicTensor<T> sum_all(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean_all(const BasicTensor<T>& x);
/// Mean over one axis; the axis is removed from the shape.
template <typename T> BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis);

// layout
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm);
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t start,
                     std::size_t length);
/// Zero-pads (or truncates) every axis at its end to reach `shape`.
template <typename T> BasicTensor<T> resize_end(const BasicTensor<T>& x, Shape shape);

/// Index of the largest entry in each row of a [N,K] tensor (first on ties).
template <typename T> std::vector<int> argmax_rows(const BasicTensor<T>& x);

}  // namespace repro::ad
