#pragma once

// Differentiable tensor operations. Every function allocates a new output and,
// when a tape is active and an input requires gradients, records its backward
// rule. Shapes are checked up front; mismatches throw ShapeError naming both
// operands.

#include <cstddef>
#include <span>
#include <vector>

#include "nightformer/tensor.hpp"

namespace nf {

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

/// x[..., C] + b[C] broadcast over every leading index.
template <typename T> BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

/// x[..., C] with every length-C row r multiplied by s[r].
template <typename T> BasicTensor<T> scale_rows(const BasicTensor<T>& x, const BasicTensor<T>& s);

/// Sum of squares over the last axis: [..., C] -> [...] (rank-1 input gives [1]).
template <typename T> BasicTensor<T> row_sum_squares(const BasicTensor<T>& x);

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a[m,k] * b[n,k]^T -> [m,n] without materializing the transpose.
template <typename T> BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& x);

/// Numerically stable softmax along `axis` (max-subtracted).
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

template <typename T> BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& x);

/// x / (mean(x) + eps), gradient taken through the mean as well.
template <typename T> BasicTensor<T> normalize_unit_mean(const BasicTensor<T>& x, T eps);

/// Row-wise layer normalization of x[R, C] with affine gain and shift.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          T eps = T(1e-5));

/// Divides each row of x[R, C] by its sum.
template <typename T> BasicTensor<T> row_normalize(const BasicTensor<T>& x);

/// Rows of x[R, C] at `rows`, in the given order.
template <typename T> BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> rows);

/// Cross-correlation of x[H, W, Cin] with w[kh, kw, Cin, Cout] under zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t stride, std::size_t padding);

/// Bilinear 2x upsampling of x[H, W, C] with half-pixel centers (align_corners = false).
template <typename T> BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x);

/// Mean binary cross-entropy on logits; target is a constant of the same shape.
template <typename T> BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target);

/// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps); target is a constant.
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& prob, const BasicTensor<T>& target, T eps = T(1));

/// Mean over rows of -log softmax(logits[r])[targets[r]].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);

}  // namespace nf
