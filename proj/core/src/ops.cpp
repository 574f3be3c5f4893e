#include "idfm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace idfm {

namespace kernels {

namespace {

#if defined(__GNUC__) && (defined(__x86_64__) || defined(__aarch64__))
using v4d = double __attribute__((vector_size(32)));

inline v4d v4load(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

inline void v4store(double* p, v4d v) { __builtin_memcpy(p, &v, sizeof(v)); }

// Dense path: 4x8 register tile so the inner loop is FMA-bound instead of
// store-bound. Remainders fall back to plain loops.
void gemm_tiled(const double* __restrict a, const double* __restrict b, double* __restrict c, int m, int k,
                int n) {
  constexpr int MR = 4, NR = 8;
  int i = 0;
  for (; i + MR <= m; i += MR) {
    const double* __restrict a0 = a + static_cast<std::size_t>(i + 0) * k;
    const double* __restrict a1 = a + static_cast<std::size_t>(i + 1) * k;
    const double* __restrict a2 = a + static_cast<std::size_t>(i + 2) * k;
    const double* __restrict a3 = a + static_cast<std::size_t>(i + 3) * k;
    int j = 0;
    for (; j + NR <= n; j += NR) {
      v4d c00 = {}, c01 = {}, c10 = {}, c11 = {}, c20 = {}, c21 = {}, c30 = {}, c31 = {};
      const double* __restrict bp = b + j;
      for (int p = 0; p < k; ++p, bp += n) {
        const v4d b0 = v4load(bp), b1 = v4load(bp + 4);
        const v4d va0 = {a0[p], a0[p], a0[p], a0[p]};
        const v4d va1 = {a1[p], a1[p], a1[p], a1[p]};
        const v4d va2 = {a2[p], a2[p], a2[p], a2[p]};
        const v4d va3 = {a3[p], a3[p], a3[p], a3[p]};
        c00 += va0 * b0;
        c01 += va0 * b1;
        c10 += va1 * b0;
        c11 += va1 * b1;
        c20 += va2 * b0;
        c21 += va2 * b1;
        c30 += va3 * b0;
        c31 += va3 * b1;
      }
      double* crow0 = c + static_cast<std::size_t>(i + 0) * n + j;
      double* crow1 = c + static_cast<std::size_t>(i + 1) * n + j;
      double* crow2 = c + static_cast<std::size_t>(i + 2) * n + j;
      double* crow3 = c + static_cast<std::size_t>(i + 3) * n + j;
      v4store(crow0, v4load(crow0) + c00);
      v4store(crow0 + 4, v4load(crow0 + 4) + c01);
      v4store(crow1, v4load(crow1) + c10);
      v4store(crow1 + 4, v4load(crow1 + 4) + c11);
      v4store(crow2, v4load(crow2) + c20);
      v4store(crow2 + 4, v4load(crow2 + 4) + c21);
      v4store(crow3, v4load(crow3) + c30);
      v4store(crow3 + 4, v4load(crow3 + 4) + c31);
    }
    for (; j < n; ++j) {
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (int p = 0; p < k; ++p) {
        const double bv = b[static_cast<std::size_t>(p) * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c[static_cast<std::size_t>(i + 0) * n + j] += s0;
      c[static_cast<std::size_t>(i + 1) * n + j] += s1;
      c[static_cast<std::size_t>(i + 2) * n + j] += s2;
      c[static_cast<std::size_t>(i + 3) * n + j] += s3;
    }
  }
  for (; i < m; ++i) {
    const double* __restrict arow = a + static_cast<std::size_t>(i) * k;
    double* __restrict crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
// Narrow outputs (per-head attention value products), n == 16: the C row
// stays in four vector registers across the k loop, and zero A entries are
// skipped, so rows of B blocked by an attention mask never enter the
// accumulation at all. This is what makes instance isolation exact at the
// bit level.
void gemm_rowacc16_skipzero(const double* __restrict a, const double* __restrict b, double* __restrict c,
                            int m, int k) {
  for (int i = 0; i < m; ++i) {
    const double* __restrict arow = a + static_cast<std::size_t>(i) * k;
    v4d acc0 = {}, acc1 = {}, acc2 = {}, acc3 = {};
    const double* __restrict brow = b;
    for (int p = 0; p < k; ++p, brow += 16) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const v4d va = {av, av, av, av};
      acc0 += va * v4load(brow);
      acc1 += va * v4load(brow + 4);
      acc2 += va * v4load(brow + 8);
      acc3 += va * v4load(brow + 12);
    }
    double* __restrict crow = c + static_cast<std::size_t>(i) * 16;
    v4store(crow, v4load(crow) + acc0);
    v4store(crow + 4, v4load(crow + 4) + acc1);
    v4store(crow + 8, v4load(crow + 8) + acc2);
    v4store(crow + 12, v4load(crow + 12) + acc3);
  }
}
#else
void gemm_tiled(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}
#endif

// Generic narrow path with the same zero-skip contract.
void gemm_rowacc_skipzero(const double* __restrict a, const double* __restrict b, double* __restrict c, int m,
                          int k, int n) {
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__aarch64__))
  if (n == 16) {
    gemm_rowacc16_skipzero(a, b, c, m, k);
    return;
  }
#endif
  for (int i = 0; i < m; ++i) {
    const double* __restrict arow = a + static_cast<std::size_t>(i) * k;
    double acc[16] = {0.0};
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* __restrict brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    double* __restrict crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] += acc[j];
  }
}

}  // namespace

// C += A.B with A [m x k], B [k x n], all row-major.
void gemm_nn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  if (n <= 16) {
    gemm_rowacc_skipzero(a, b, c, m, k, n);
  } else {
    gemm_tiled(a, b, c, m, k, n);
  }
}

namespace {

thread_local std::vector<double> g_scratch;

// Transpose src [r x c] into the thread-local scratch, returned as [c x r].
const double* transpose_scratch(const double* src, int r, int c) {
  g_scratch.resize(static_cast<std::size_t>(r) * c);
  double* dst = g_scratch.data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) dst[static_cast<std::size_t>(j) * r + i] = src[static_cast<std::size_t>(i) * c + j];
  return dst;
}

}  // namespace

// C += A.B^T with A [m x k], B [n x k].
void gemm_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  const double* bt = transpose_scratch(b, n, k);  // [k x n]
  gemm_nn_acc(a, bt, c, m, k, n);
}

// C += A^T.B with A [k x m], B [k x n].
void gemm_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  const double* at = transpose_scratch(a, k, m);  // [m x k]
  gemm_nn_acc(at, b, c, m, k, n);
}

}  // namespace kernels

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) shape_error(std::string(op) + ": " + a.shape_str() + " vs " + b.shape_str());
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) shape_error(std::string(op) + ": expected a matrix, got " + t.shape_str());
}

// Allocates out's accumulator when the op should record. The accumulator
// must exist before the backward closure captures its copy of `out`.
bool wants_backward(Tensor& out, bool any_input_tracked) {
  if (Tape::active() != nullptr && any_input_tracked) {
    out.ensure_grad();
    return true;
  }
  return false;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (wants_backward(out, tracked(a) || tracked(b))) {
    out.node = Tape::active()->record([a = a, b = b, out]() mutable {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.has_grad()) a.grad()[i] += out.grad()[i];
        if (b.has_grad()) b.grad()[i] += out.grad()[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  check_finite(out, "sub");
  if (wants_backward(out, tracked(a) || tracked(b))) {
    out.node = Tape::active()->record([a = a, b = b, out]() mutable {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.has_grad()) a.grad()[i] += out.grad()[i];
        if (b.has_grad()) b.grad()[i] -= out.grad()[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");
  if (wants_backward(out, tracked(a) || tracked(b))) {
    out.node = Tape::active()->record([a = a, b = b, out]() mutable {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.has_grad()) a.grad()[i] += out.grad()[i] * b.data()[i];
        if (b.has_grad()) b.grad()[i] += out.grad()[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  check_finite(out, "scale");
  if (wants_backward(out, tracked(a))) {
    out.node = Tape::active()->record([a = a, out, s]() mutable {
      if (!a.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) a.grad()[i] += out.grad()[i] * s;
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    shape_error("matmul: inner dimensions disagree, " + a.shape_str() + " vs " + b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm_nn_acc(a.data(), b.data(), out.data(), m, k, n);
  check_finite(out, "matmul");
  if (wants_backward(out, tracked(a) || tracked(b))) {
    out.node = Tape::active()->record([a = a, b = b, out, m, k, n]() mutable {
      if (a.has_grad()) kernels::gemm_nt_acc(out.grad(), b.data(), a.grad(), m, n, k);
      if (b.has_grad()) kernels::gemm_tn_acc(a.data(), out.grad(), b.grad(), k, m, n);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, double s) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols())
    shape_error("matmul_nt: inner dimensions disagree, " + a.shape_str() + " vs " + b.shape_str());
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  kernels::gemm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
  if (s != 1.0)
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= s;
  check_finite(out, "matmul_nt");
  if (wants_backward(out, tracked(a) || tracked(b))) {
    out.node = Tape::active()->record([a = a, b = b, out, m, k, n, s]() mutable {
      // dA += s * dC.B ; dB += s * dC^T.A
      const double* dc = out.grad();
      std::vector<double> scaled;
      if (s != 1.0) {
        scaled.resize(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) scaled[i] = dc[i] * s;
        dc = scaled.data();
      }
      if (a.has_grad()) kernels::gemm_nn_acc(dc, b.data(), a.grad(), m, n, k);
      if (b.has_grad()) kernels::gemm_tn_acc(dc, a.data(), b.grad(), n, m, k);
    });
  }
  return out;
}

namespace {

// dX_ij = P_ij * (dP_ij - sum_k dP_ik P_ik), restricted to allowed columns
// (P is exactly 0 elsewhere, so the restriction changes nothing but keeps
// disallowed entries out of the arithmetic).
void softmax_backward_rows(Tensor x, Tensor out, const AttnMask* mask) {
  const int rows = out.rows(), cols = out.cols();
  for (int i = 0; i < rows; ++i) {
    const double* p = out.data() + static_cast<std::size_t>(i) * cols;
    const double* dp = out.grad() + static_cast<std::size_t>(i) * cols;
    double* dx = x.grad() + static_cast<std::size_t>(i) * cols;
    const std::uint8_t* allow = mask ? mask->row(i) : nullptr;
    double inner = 0.0;
    for (int j = 0; j < cols; ++j) {
      if (allow && !allow[j]) continue;
      inner += dp[j] * p[j];
    }
    for (int j = 0; j < cols; ++j) {
      if (allow && !allow[j]) continue;
      dx[j] += p[j] * (dp[j] - inner);
    }
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  require_matrix(logits, "softmax_rows");
  const int rows = logits.rows(), cols = logits.cols();
  Tensor out = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const double* x = logits.data() + static_cast<std::size_t>(i) * cols;
    double* y = out.data() + static_cast<std::size_t>(i) * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    const double inv = 1.0 / total;
    for (int j = 0; j < cols; ++j) y[j] *= inv;
  }
  check_finite(out, "softmax_rows");
  if (wants_backward(out, tracked(logits))) {
    out.node = Tape::active()->record([logits = logits, out]() mutable {
      if (logits.has_grad()) softmax_backward_rows(logits, out, nullptr);
    });
  }
  return out;
}

Tensor masked_softmax(const Tensor& logits, std::shared_ptr<const AttnMask> mask) {
  require_matrix(logits, "masked_softmax");
  if (!mask) shape_error("masked_softmax: null mask");
  const int rows = logits.rows(), cols = logits.cols();
  if (mask->seq_len != rows || rows != cols)
    shape_error("masked_softmax: mask size " + std::to_string(mask->seq_len) + " vs logits " + logits.shape_str());
  Tensor out = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const double* x = logits.data() + static_cast<std::size_t>(i) * cols;
    const std::uint8_t* allow = mask->row(i);
    double* y = out.data() + static_cast<std::size_t>(i) * cols;
    // Max-subtraction over allowed entries only; disallowed logits never
    // enter any reduction, which keeps instance isolation exact.
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j)
      if (allow[j] && x[j] > mx) mx = x[j];
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::domain_error("masked_softmax: fully masked row " + std::to_string(i));
    double total = 0.0;
    for (int j = 0; j < cols; ++j) {
      if (!allow[j]) continue;
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    const double inv = 1.0 / total;
    for (int j = 0; j < cols; ++j)
      if (allow[j]) y[j] *= inv;
  }
  check_finite(out, "masked_softmax");
  if (wants_backward(out, tracked(logits))) {
    out.node = Tape::active()->record([logits = logits, out, mask]() mutable {
      if (logits.has_grad()) softmax_backward_rows(logits, out, mask.get());
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_matrix(x, "layer_norm");
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const double* xi = x.data() + static_cast<std::size_t>(i) * cols;
    double* yi = out.data() + static_cast<std::size_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xi[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= cols;
    const double s = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = s;
    for (int j = 0; j < cols; ++j) yi[j] = (xi[j] - mean) * s;
  }
  check_finite(out, "layer_norm");
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out, inv_std = std::move(inv_std)]() mutable {
      if (!x.has_grad()) return;
      const int rows = out.rows(), cols = out.cols();
      for (int i = 0; i < rows; ++i) {
        const double* y = out.data() + static_cast<std::size_t>(i) * cols;
        const double* dy = out.grad() + static_cast<std::size_t>(i) * cols;
        double* dx = x.grad() + static_cast<std::size_t>(i) * cols;
        double mean_dy = 0.0, mean_dyy = 0.0;
        for (int j = 0; j < cols; ++j) {
          mean_dy += dy[j];
          mean_dyy += dy[j] * y[j];
        }
        mean_dy /= cols;
        mean_dyy /= cols;
        const double s = inv_std[static_cast<std::size_t>(i)];
        for (int j = 0; j < cols; ++j) dx[j] += s * (dy[j] - mean_dy - y[j] * mean_dyy);
      }
    });
  }
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  }
  check_finite(out, "gelu");
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out]() mutable {
      if (!x.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        x.grad()[i] += out.grad()[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.dims());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  check_finite(out, "silu");
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out]() mutable {
      if (!x.has_grad()) return;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.data()[i];
        const double sig = 1.0 / (1.0 + std::exp(-v));
        x.grad()[i] += out.grad()[i] * sig * (1.0 + v * (1.0 - sig));
      }
    });
  }
  return out;
}

namespace {

void require_rowvec(const Tensor& x, const Tensor& v, const char* op) {
  require_matrix(x, op);
  const bool ok = (v.rank() == 1 && v.dim(0) == x.cols()) ||
                  (v.rank() == 2 && v.rows() == 1 && v.cols() == x.cols());
  if (!ok) shape_error(std::string(op) + ": vector " + v.shape_str() + " does not broadcast over " + x.shape_str());
}

}  // namespace

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rowvec(x, v, "add_rowvec");
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out.data()[static_cast<std::size_t>(i) * cols + j] =
          x.data()[static_cast<std::size_t>(i) * cols + j] + v.data()[j];
  check_finite(out, "add_rowvec");
  if (wants_backward(out, tracked(x) || tracked(v))) {
    out.node = Tape::active()->record([x = x, v = v, out]() mutable {
      const int rows = out.rows(), cols = out.cols();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const double g = out.grad()[static_cast<std::size_t>(i) * cols + j];
          if (x.has_grad()) x.grad()[static_cast<std::size_t>(i) * cols + j] += g;
          if (v.has_grad()) v.grad()[j] += g;
        }
    });
  }
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require_rowvec(x, v, "mul_rowvec");
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out.data()[static_cast<std::size_t>(i) * cols + j] =
          x.data()[static_cast<std::size_t>(i) * cols + j] * v.data()[j];
  check_finite(out, "mul_rowvec");
  if (wants_backward(out, tracked(x) || tracked(v))) {
    out.node = Tape::active()->record([x = x, v = v, out]() mutable {
      const int rows = out.rows(), cols = out.cols();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * cols + j;
          if (x.has_grad()) x.grad()[k] += out.grad()[k] * v.data()[j];
          if (v.has_grad()) v.grad()[j] += out.grad()[k] * x.data()[k];
        }
    });
  }
  return out;
}

Tensor rows_gather(const Tensor& table, const std::vector<int>& ids) {
  require_matrix(table, "rows_gather");
  const int vocab = table.rows(), d = table.cols();
  for (int id : ids)
    if (id < 0 || id >= vocab) shape_error("rows_gather: id " + std::to_string(id) + " out of range");
  const int rows = static_cast<int>(ids.size());
  if (rows == 0) shape_error("rows_gather: empty id list");
  Tensor out = Tensor::zeros({rows, d});
  for (int i = 0; i < rows; ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d, d,
                out.data() + static_cast<std::size_t>(i) * d);
  if (wants_backward(out, tracked(table))) {
    out.node = Tape::active()->record([table = table, out, ids]() mutable {
      if (!table.has_grad()) return;
      const int d = table.cols();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* g = out.grad() + i * d;
        double* t = table.grad() + static_cast<std::size_t>(ids[i]) * d;
        for (int j = 0; j < d; ++j) t[j] += g[j];
      }
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_rows: no parts");
  const int cols = parts[0].cols();
  int rows = 0;
  bool any = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != cols) shape_error("concat_rows: column mismatch");
    rows += p.rows();
    any = any || tracked(p);
  }
  Tensor out = Tensor::zeros({rows, cols});
  int r = 0;
  for (const Tensor& p : parts) {
    std::copy_n(p.data(), p.size(), out.data() + static_cast<std::size_t>(r) * cols);
    r += p.rows();
  }
  if (wants_backward(out, any)) {
    out.node = Tape::active()->record([parts = parts, out]() mutable {
      const int cols = out.cols();
      int r = 0;
      for (Tensor& p : parts) {
        if (p.has_grad()) {
          const double* g = out.grad() + static_cast<std::size_t>(r) * cols;
          for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] += g[i];
        }
        r += p.rows();
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int row0, int count) {
  require_matrix(x, "slice_rows");
  if (row0 < 0 || count <= 0 || row0 + count > x.rows()) shape_error("slice_rows: range out of bounds");
  const int cols = x.cols();
  Tensor out = Tensor::zeros({count, cols});
  std::copy_n(x.data() + static_cast<std::size_t>(row0) * cols, out.size(), out.data());
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out, row0]() mutable {
      if (!x.has_grad()) return;
      double* dst = x.grad() + static_cast<std::size_t>(row0) * out.cols();
      for (std::size_t i = 0; i < out.size(); ++i) dst[i] += out.grad()[i];
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_cols: no parts");
  const int rows = parts[0].rows();
  int cols = 0;
  bool any = false;
  for (const Tensor& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != rows) shape_error("concat_cols: row mismatch");
    cols += p.cols();
    any = any || tracked(p);
  }
  Tensor out = Tensor::zeros({rows, cols});
  int c = 0;
  for (const Tensor& p : parts) {
    for (int i = 0; i < rows; ++i)
      std::copy_n(p.data() + static_cast<std::size_t>(i) * p.cols(), p.cols(),
                  out.data() + static_cast<std::size_t>(i) * cols + c);
    c += p.cols();
  }
  if (wants_backward(out, any)) {
    out.node = Tape::active()->record([parts = parts, out]() mutable {
      const int rows = out.rows(), cols = out.cols();
      int c = 0;
      for (Tensor& p : parts) {
        if (p.has_grad()) {
          for (int i = 0; i < rows; ++i) {
            const double* g = out.grad() + static_cast<std::size_t>(i) * cols + c;
            double* dp = p.grad() + static_cast<std::size_t>(i) * p.cols();
            for (int j = 0; j < p.cols(); ++j) dp[j] += g[j];
          }
        }
        c += p.cols();
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int col0, int count) {
  require_matrix(x, "slice_cols");
  if (col0 < 0 || count <= 0 || col0 + count > x.cols()) shape_error("slice_cols: range out of bounds");
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros({rows, count});
  for (int i = 0; i < rows; ++i)
    std::copy_n(x.data() + static_cast<std::size_t>(i) * cols + col0, count,
                out.data() + static_cast<std::size_t>(i) * count);
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out, col0]() mutable {
      if (!x.has_grad()) return;
      const int rows = out.rows(), count = out.cols(), cols = x.cols();
      for (int i = 0; i < rows; ++i) {
        const double* g = out.grad() + static_cast<std::size_t>(i) * count;
        double* dx = x.grad() + static_cast<std::size_t>(i) * cols + col0;
        for (int j = 0; j < count; ++j) dx[j] += g[j];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out]() mutable {
      if (!x.has_grad()) return;
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += g;
    });
  }
  return out;
}

Tensor sum_sq(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum_sq");
  if (wants_backward(out, tracked(x))) {
    out.node = Tape::active()->record([x = x, out]() mutable {
      if (!x.has_grad()) return;
      const double g = out.grad()[0];
      for (std::size_t i = 0; i < x.size(); ++i) x.grad()[i] += 2.0 * x.data()[i] * g;
    });
  }
  return out;
}

}  // namespace idfm
