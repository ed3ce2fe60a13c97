#include "fuxi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "fuxi/errors.hpp"

extern "C" {
#include <cblas.h>
void openblas_set_num_threads(int num_threads);
}

namespace fuxi {

namespace {

void require_rank2(const Array& a, const char* what) {
  if (a.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_to_string(a.shape()));
}

[[noreturn]] void mismatch(const char* what, const Array& a, const Array& b) {
  throw ShapeError(std::string(what) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                   shape_to_string(b.shape()));
}

}  // namespace

namespace {

// One BLAS thread: parallelism belongs to the callers, and a fixed
// partitioning keeps every product bit-reproducible.
void pin_blas_threads() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), 1.0, c, static_cast<int>(n));
}

}  // namespace

void gemm_strided(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void matmul_acc(const Array& a, const Array& b, Array& out) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) mismatch("matmul", a, b);
  if (out.shape() != Shape{m, n}) mismatch("matmul (output)", out, a);
  gemm(CblasNoTrans, CblasNoTrans, m, n, k, a.data().data(), k, b.data().data(), n, out.data().data());
}

void matmul_nt_acc(const Array& a, const Array& b, Array& out) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) mismatch("matmul_nt", a, b);
  if (out.shape() != Shape{m, n}) mismatch("matmul_nt (output)", out, a);
  gemm(CblasNoTrans, CblasTrans, m, n, k, a.data().data(), k, b.data().data(), k, out.data().data());
}

void matmul_tn_acc(const Array& a, const Array& b, Array& out) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) mismatch("matmul_tn", a, b);
  if (out.shape() != Shape{m, n}) mismatch("matmul_tn (output)", out, a);
  gemm(CblasTrans, CblasNoTrans, m, n, k, a.data().data(), m, b.data().data(), n, out.data().data());
}

Array matmul(const Array& a, const Array& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.shape()[1] != b.shape()[0]) mismatch("matmul", a, b);
  Array out({a.shape()[0], b.shape()[1]});
  matmul_acc(a, b, out);
  return out;
}

Array matmul_nt(const Array& a, const Array& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.shape()[1] != b.shape()[1]) mismatch("matmul_nt", a, b);
  Array out({a.shape()[0], b.shape()[0]});
  matmul_nt_acc(a, b, out);
  return out;
}

Array matmul_tn(const Array& a, const Array& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.shape()[0] != b.shape()[0]) mismatch("matmul_tn", a, b);
  Array out({a.shape()[1], b.shape()[1]});
  matmul_tn_acc(a, b, out);
  return out;
}

void add_row_bias(Array& x, const Array& bias) {
  const std::size_t n = x.cols();
  if (bias.size() != n) mismatch("add_row_bias", x, bias);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
  }
}

void accumulate_column_sums(const Array& x, Array& out) {
  const std::size_t n = x.cols();
  if (out.size() != n) mismatch("accumulate_column_sums", x, out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
  }
}

Array softmax(const Array& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Array out = x;
  auto d = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = d[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, d[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        double e = std::exp(d[base + i * inner] - mx);
        d[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < len; ++i) d[base + i * inner] /= sum;
    }
  }
  return out;
}

void softmax_rows_inplace(Array& x) {
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
}

double gelu(double x) {
  return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double gelu_grad(double x) {
  const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Array gelu(const Array& x) {
  Array out = x;
  for (auto& v : out.data()) v = gelu(v);
  return out;
}

Array rmsnorm(const Array& x, const Array& gain, double eps) {
  if (x.rank() != 1) throw ShapeError("rmsnorm: expected a vector, got " + shape_to_string(x.shape()));
  Array out = rmsnorm_rows(x.reshaped({1, x.size()}), gain, eps);
  return out.reshaped({x.size()});
}

Array rmsnorm_rows(const Array& x, const Array& gain, double eps) {
  const std::size_t d = x.cols();
  if (gain.size() != d) mismatch("rmsnorm", x, gain);
  Array out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    const double ms = dot(in, in) / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < d; ++j) o[j] = gain[j] * in[j] * inv;
  }
  return out;
}

void rmsnorm_rows_backward(const Array& x, const Array& gain, double eps, const Array& dy, Array& dx,
                           Array* dgain) {
  const std::size_t d = x.cols();
  require_same_shape(x, dy, "rmsnorm_backward");
  require_same_shape(x, dx, "rmsnorm_backward");
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto g = dy.row(r);
    auto out = dx.row(r);
    const double ms = dot(in, in) / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(ms + eps);
    double proj = 0.0;  // Σ dy_i g_i x_i
    for (std::size_t j = 0; j < d; ++j) proj += g[j] * gain[j] * in[j];
    const double coeff = inv * inv * inv * proj / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) out[j] += inv * gain[j] * g[j] - coeff * in[j];
    if (dgain) {
      for (std::size_t j = 0; j < d; ++j) (*dgain)[j] += g[j] * in[j] * inv;
    }
  }
}

namespace {

// cos/sin of every pair's angle at one position; shared by all heads.
void rotation_table(double pos, std::span<const double> freqs, bool inverse, std::vector<double>& cs,
                    std::vector<double>& sn) {
  for (std::size_t j = 0; j < freqs.size(); ++j) {
    const double angle = (inverse ? -pos : pos) * freqs[j];
    cs[j] = std::cos(angle);
    sn[j] = std::sin(angle);
  }
}

void rotate_block(std::span<double> row, std::size_t offset, const std::vector<double>& cs,
                  const std::vector<double>& sn) {
  for (std::size_t j = 0; j < cs.size(); ++j) {
    double& a = row[offset + 2 * j];
    double& b = row[offset + 2 * j + 1];
    const double a0 = a, b0 = b;
    a = a0 * cs[j] - b0 * sn[j];
    b = a0 * sn[j] + b0 * cs[j];
  }
}

void check_positions(std::span<const std::int64_t> positions, std::size_t rows) {
  if (positions.size() != rows) {
    throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " + std::to_string(rows) + " rows");
  }
  for (auto p : positions) {
    if (p < 0) throw ConfigError("rope: negative position");
  }
}

}  // namespace

Array rope_apply(const Array& x, std::span<const std::int64_t> positions, double theta) {
  const std::size_t d = x.cols();
  if (d % 2 != 0) throw ConfigError("rope: head dimension must be even, got " + std::to_string(d));
  Array out = x;
  rope_heads_inplace(out, 1, positions, theta);
  return out;
}

void rope_heads_inplace(Array& x, std::size_t n_heads, std::span<const std::int64_t> positions, double theta,
                        bool inverse) {
  const std::size_t width = x.cols();
  if (n_heads == 0 || width % n_heads != 0) throw ConfigError("rope: width not divisible by head count");
  const std::size_t d_head = width / n_heads;
  if (d_head % 2 != 0) throw ConfigError("rope: head dimension must be even, got " + std::to_string(d_head));
  check_positions(positions, x.rows());
  const std::size_t half = d_head / 2;
  std::vector<double> freqs(half), cs(half), sn(half);
  for (std::size_t j = 0; j < half; ++j) {
    freqs[j] = std::pow(theta, -2.0 * static_cast<double>(j) / static_cast<double>(d_head));
  }
  for (std::size_t t = 0; t < x.rows(); ++t) {
    rotation_table(static_cast<double>(positions[t]), freqs, inverse, cs, sn);
    auto row = x.row(t);
    for (std::size_t h = 0; h < n_heads; ++h) rotate_block(row, h * d_head, cs, sn);
  }
}

CrossEntropyResult cross_entropy_next_token(const Array& logits, std::span<const TokenId> targets) {
  require_rank2(logits, "cross_entropy");
  const std::size_t t_count = logits.rows();
  const std::size_t vocab = logits.cols();
  if (targets.size() != t_count) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(t_count) +
                     " rows");
  }
  CrossEntropyResult res{0.0, Array(logits.shape())};
  const double scale = 1.0 / static_cast<double>(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    const TokenId target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(target) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    auto row = logits.row(t);
    auto g = res.grad.row(t);
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      g[j] = std::exp(row[j] - mx);
      sum += g[j];
    }
    const double lse = mx + std::log(sum);
    res.loss += lse - row[static_cast<std::size_t>(target)];
    for (std::size_t j = 0; j < vocab; ++j) g[j] = g[j] / sum * scale;
    g[static_cast<std::size_t>(target)] -= scale;
  }
  res.loss *= scale;
  return res;
}

}  // namespace fuxi
