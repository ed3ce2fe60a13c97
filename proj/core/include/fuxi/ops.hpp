#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fuxi/array.hpp"

namespace fuxi {

using TokenId = std::int32_t;

// ---- linear algebra --------------------------------------------------------

// C = A·B for A[m×k], B[k×n]. Gradient rule: dA = dC·Bᵀ, dB = Aᵀ·dC.
Array matmul(const Array& a, const Array& b);
// C = A·Bᵀ for A[m×k], B[n×k].
Array matmul_nt(const Array& a, const Array& b);
// C = Aᵀ·B for A[k×m], B[k×n].
Array matmul_tn(const Array& a, const Array& b);

// Accumulating variants: out += op(a, b). `out` must already have the result shape.
void matmul_acc(const Array& a, const Array& b, Array& out);
void matmul_nt_acc(const Array& a, const Array& b, Array& out);
void matmul_tn_acc(const Array& a, const Array& b, Array& out);

// C = alpha·op(A)·op(B) + beta·C on strided row-major buffers; op transposes
// when the flag is set. Lets callers multiply column blocks (attention heads)
// without copying them out.
void gemm_strided(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc);

// Adds bias[n] to every row of x[m×n].
void add_row_bias(Array& x, const Array& bias);
// out[n] += column sums of x[m×n].
void accumulate_column_sums(const Array& x, Array& out);

// ---- nonlinearities --------------------------------------------------------

// Numerically stable softmax along `axis` (max-subtracted).
Array softmax(const Array& x, std::size_t axis);
// Softmax over the last axis of a rank-2 array, in place.
void softmax_rows_inplace(Array& x);

double gelu(double x);
// d/dx gelu(x) = Φ(x) + x·φ(x).
double gelu_grad(double x);
Array gelu(const Array& x);

// ---- normalization ---------------------------------------------------------

// y = gain ⊙ x / sqrt(mean(x²) + eps) for a single vector x[d].
Array rmsnorm(const Array& x, const Array& gain, double eps);
// Row-wise rmsnorm of x[T×d].
Array rmsnorm_rows(const Array& x, const Array& gain, double eps);
// Backward of rmsnorm_rows. Adds into dx and dgain (both pre-shaped).
void rmsnorm_rows_backward(const Array& x, const Array& gain, double eps, const Array& dy, Array& dx,
                           Array* dgain);

// ---- rotary position encoding ---------------------------------------------

// Rotates consecutive coordinate pairs (2j, 2j+1) of each row t by the angle
// positions[t]·theta^(−2j/d_head). x is [T×d_head]; d_head must be even.
Array rope_apply(const Array& x, std::span<const std::int64_t> positions, double theta);

// Applies the rotation head-by-head to x[T×(n_heads·d_head)] in place. With
// inverse=true the rotation angle is negated, which is also the backward rule.
void rope_heads_inplace(Array& x, std::size_t n_heads, std::span<const std::int64_t> positions,
                        double theta, bool inverse = false);

// ---- loss ------------------------------------------------------------------

struct CrossEntropyResult {
  double loss = 0.0;
  Array grad;  // d loss / d logits, same shape as logits
};

// Mean negative log-likelihood of targets[t] under softmax(logits[t]) over
// all rows of logits[T×V]. Gradient = (softmax − onehot)/T.
CrossEntropyResult cross_entropy_next_token(const Array& logits, std::span<const TokenId> targets);

}  // namespace fuxi
