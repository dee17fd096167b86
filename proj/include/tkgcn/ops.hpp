#pragma once

#include <vector>

#include "tkgcn/tape.hpp"
#include "tkgcn/tensor.hpp"

namespace tkgcn {

// Differentiable op catalog. Every op validates shapes (std::invalid_argument
// on mismatch), checks its output for NaN/Inf (std::runtime_error naming the
// op), and records a backward closure when gradients are being traced.
//
// Gradients accumulate additively, so tensors reused across several ops
// receive the sum of all downstream contributions.

// (m,k)x(k,n)->(m,n); (m,k)x(k)->(m); (k)x(k,n)->(n).
Tensor matmul(const Tensor& a, const Tensor& b);

// Same-shape elementwise sum, or rank-2 plus rank-1 row broadcast
// ((m,n) + (n) adds the vector to every row).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product, same shapes only.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& x);
// ELU with alpha = 1: x > 0 ? x : exp(x) - 1.
Tensor elu(const Tensor& x);

// Softmax along the last axis, computed with max subtraction.
Tensor softmax(const Tensor& x);

// Layer normalization along the last axis with learnable gain and bias
// (both shaped like the last axis). Population variance; eps keeps the
// constant-row case finite while leaving unit variance intact in f64.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

Tensor transpose(const Tensor& a);  // rank 2
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);

// Mean over one axis (removes it; result of reducing rank 1 has shape {1}).
Tensor mean(const Tensor& a, std::size_t axis);
// Sum of squared entries; single-element result.
Tensor sum_sq(const Tensor& a);

// K^n for square K by repeated multiplication; n = 0 yields a constant
// identity with no gradient path to K.
Tensor matpow(const Tensor& k, std::size_t n);

namespace detail {
// Shared by custom ops defined outside this catalog (graph convolution,
// pooling): throws std::runtime_error if `t` holds NaN/Inf.
void check_finite(const Tensor& t, const char* op_name);
}  // namespace detail

}  // namespace tkgcn
