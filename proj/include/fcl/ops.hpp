#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fcl/autograd.hpp"
#include "fcl/tensor.hpp"

namespace fcl {

// Differentiable ops. Each records a graph node when grad mode is on and any
// input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
// x [n x in] * w[out x in]^T + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor sum(const Tensor& a);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x);  // over the last dimension of a 2-D tensor

// Normalizes each row, then applies gain and bias of the row width.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Gathers rows of table [V x d] by index.
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

// Multi-head attention over [batch*seq x d] projections.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                 std::size_t seq, std::size_t heads);

// Mean over rows of -log softmax(logits)[target].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

// Mean over rows of T^2 * KL(softmax(student/T) || softmax(teacher/T)). The
// teacher is treated as a constant.
Tensor distill_kl(const Tensor& student, const Tensor& teacher, double temperature);

}  // namespace fcl
