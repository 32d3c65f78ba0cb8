#pragma once

#include <span>
#include <vector>

#include "stablept/tensor.hpp"

namespace stablept {

// Differentiable tensor operations. Each op validates its shape contract,
// computes the value with Eigen, and records a backward rule on the active
// tape when any input requires gradients. No broadcasting beyond
// bias-addition over the last axis.

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& a, const Tensor& bias);  // bias over the last axis
Tensor scale(const Tensor& a, double factor);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise

// a: (..., k) with leading axes flattened to rows, b: (k, n) -> (..., n).
// c[i][j] = sum_t a[i][t] * b[t][j]; dA = dC B^T, dB = A^T dC.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // 2-D

Tensor tanh(const Tensor& a);

// Row-wise over the last axis, with row-max subtraction for stability.
Tensor softmax_rows(const Tensor& a);
// Row-wise log(sum(exp(x))) -> (rows, 1).
Tensor logsumexp_rows(const Tensor& a);

// Per-position normalization of the last axis, then affine by gain/bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// (b, l, d) -> (b, d), mean over the middle axis.
Tensor mean_axis1(const Tensor& a);

Tensor sum(const Tensor& a);  // -> shape {1}
Tensor reshape(const Tensor& a, std::vector<Index> shape);

Tensor slice_axis0(const Tensor& a, Index i);
Tensor stack_axis0(std::span<const Tensor> parts);
Tensor concat_rows(const Tensor& a, const Tensor& b);  // 2-D, along axis 0

// table: (R, n), ids in [0, R) -> (|ids|, n); backward scatter-adds rows.
Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids);
// a: (b, o, d), pos[i] in [0, o) -> (b, d) with out[i] = a[i, pos[i], :].
Tensor take_positions(const Tensor& a, const std::vector<Index>& pos);
// a: (m, n), cols[i] in [0, n) -> (m, 1) with out[i] = a[i, cols[i]].
Tensor take_per_row(const Tensor& a, const std::vector<Index>& cols);
// a: (m, n), ids in [0, n) -> (m, |ids|).
Tensor gather_cols(const Tensor& a, const std::vector<Index>& ids);

// Row-wise x / max(||x||, eps) over the last axis.
Tensor normalize_rows(const Tensor& a, double eps = 1e-8);

}  // namespace stablept
