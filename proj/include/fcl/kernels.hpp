#pragma once

// Dense compute kernels. Every kernel has an OpenMP-parallel version (used by
// the autograd ops) and a serial reference kept for tests and benchmarks.
// Parallel kernels split work only across independent output elements and
// accumulate each element in the same order as the reference, so results are
// bit-identical for any thread count.

#include <cstddef>

#include "fcl/tensor.hpp"

namespace fcl::kernels {

enum class Trans { no, yes };

struct GemmShape {
    std::size_t m, n, k;
};

// C[m x n] = op(A)[m x k] * op(B)[k x n], or C += ... when accumulate is set.
// op(X) is X or X^T according to the flags; storage is row-major and dense.
// Products are accumulated in double.
void gemm(Trans ta, Trans tb, GemmShape s, const real* a, const real* b, real* c, bool accumulate);
void gemm_reference(Trans ta, Trans tb, GemmShape s, const real* a, const real* b, real* c,
                    bool accumulate);

struct AttentionShape {
    std::size_t batch, seq, heads, head_dim;
    std::size_t model_dim() const { return heads * head_dim; }
};

// Bidirectional scaled dot-product attention over [batch*seq x heads*head_dim]
// activations. probs receives batch*heads*seq*seq softmax weights.
void attention_forward(AttentionShape s, const real* q, const real* k, const real* v, real* probs,
                       real* out);
void attention_forward_reference(AttentionShape s, const real* q, const real* k, const real* v,
                                 real* probs, real* out);

// Accumulates into dq/dk/dv (any may be null to skip).
void attention_backward(AttentionShape s, const real* q, const real* k, const real* v,
                        const real* probs, const real* dout, real* dq, real* dk, real* dv);

int max_threads();

}  // namespace fcl::kernels
