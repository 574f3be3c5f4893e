#pragma once

#include <memory>
#include <vector>

#include "idfm/attn_mask.hpp"
#include "idfm/tensor.hpp"

namespace idfm {

// Differentiable tensor primitives. Every op is pure: identical inputs give
// bitwise-identical outputs, outputs are checked finite, and when a tape is
// active the op records its backward step on it. Shapes are validated and
// violations raise shape errors.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// s * (a . b^T): a [m x k], b [n x k] -> [m x n]. Realizes Q.K^T / sqrt(d).
Tensor matmul_nt(const Tensor& a, const Tensor& b, double s = 1.0);

// Plain row softmax (the unmasked joint-attention path).
Tensor softmax_rows(const Tensor& logits);
// Row softmax over allowed columns only; disallowed outputs are exactly 0
// and never enter the reductions. A fully-masked row is a hard error.
Tensor masked_softmax(const Tensor& logits, std::shared_ptr<const AttnMask> mask);

// Per-row standardization, no affine part.
Tensor layer_norm(const Tensor& x, double eps = 1e-6);

Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

// Broadcast a length-D vector over the rows of [R x D].
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

// out[i, :] = table[ids[i], :]. Backward scatter-adds in row order.
Tensor rows_gather(const Tensor& table, const std::vector<int>& ids);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int row0, int count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int col0, int count);

Tensor sum(const Tensor& x);     // -> scalar
Tensor sum_sq(const Tensor& x);  // -> scalar

// Raw kernels, exposed for the benchmarks.
namespace kernels {
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n);
}

}  // namespace idfm
