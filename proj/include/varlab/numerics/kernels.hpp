#pragma once

// Hot loops. Each kernel has a plain serial reference (`*_serial`) and an
// OpenMP version that splits work over independent output rows. Both sum in
// the same order with double accumulators, so they agree bit for bit at any
// thread count; the unit tests hold them to that.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace varlab::kernels {

// Below this many multiply-adds the parallel region costs more than it saves.
inline constexpr std::size_t kParallelWork = 1u << 15;

// C[M,N] = A[M,K] * B[K,N]
template <typename T>
void matmul_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * static_cast<double>(b[p * n + j]);
      }
      c[i * n + j] = static_cast<T>(acc);
    }
  }
}

namespace detail {

inline constexpr std::size_t kRowTile = 4;
inline constexpr std::size_t kColTile = 16;

// Rows [row0, row0+rows) of C = A*B. Each output keeps its own accumulator
// and sums over p in order, exactly like matmul_serial; the 4x16 block just
// stays in registers.
template <typename T>
void matmul_rows(const T* a, const T* b, T* c, std::size_t row0, std::size_t rows, std::size_t k,
                 std::size_t n) {
  std::size_t j0 = 0;
  if (rows == kRowTile) {
    for (; j0 + kColTile <= n; j0 += kColTile) {
      double acc[kRowTile][kColTile] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const T* brow = b + p * n + j0;
        double bv[kColTile];
        for (std::size_t j = 0; j < kColTile; ++j) bv[j] = static_cast<double>(brow[j]);
        for (std::size_t r = 0; r < kRowTile; ++r) {
          const double av = static_cast<double>(a[(row0 + r) * k + p]);
          for (std::size_t j = 0; j < kColTile; ++j) acc[r][j] += av * bv[j];
        }
      }
      for (std::size_t r = 0; r < kRowTile; ++r) {
        for (std::size_t j = 0; j < kColTile; ++j) c[(row0 + r) * n + j0 + j] = static_cast<T>(acc[r][j]);
      }
    }
  }
  if (j0 == n) return;
  // Ragged edge: one row at a time over the remaining columns.
  const std::size_t width = n - j0;
  std::vector<double> acc(width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const T* arow = a + (row0 + r) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(arow[p]);
      const T* brow = b + p * n + j0;
      for (std::size_t j = 0; j < width; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < width; ++j) c[(row0 + r) * n + j0 + j] = static_cast<T>(acc[j]);
  }
}

}  // namespace detail

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t tiles = (m + detail::kRowTile - 1) / detail::kRowTile;
  const bool parallel = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t t = 0; t < tiles; ++t) {
    const std::size_t row0 = t * detail::kRowTile;
    const std::size_t rows = std::min(detail::kRowTile, m - row0);
    detail::matmul_rows(a, b, c, row0, rows, k, n);
  }
}

// C[K,N] = A[M,K]^T * B[M,N]
template <typename T>
void matmul_tn_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < m; ++p) {
        acc += static_cast<double>(a[p * k + i]) * static_cast<double>(b[p * n + j]);
      }
      c[i * n + j] = static_cast<T>(acc);
    }
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> at(k * m);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t i = 0; i < k; ++i) at[i * m + p] = a[p * k + i];
  }
  matmul(at.data(), b, c, k, m, n);
}

// C[M,N] = A[M,K] * B[N,K]^T
template <typename T>
void matmul_nt_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a[i * k + p]) * static_cast<double>(b[j * k + p]);
      }
      c[i * n + j] = static_cast<T>(acc);
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  matmul(a, bt.data(), c, m, k, n);
}

// ---------------------------------------------------------------------------
// Multi-head attention over row-major [T, heads*head_dim] buffers.
//
// Query i may look at key j when key_block[j] <= query_block[i]; null block
// arrays mean every key is visible. With qk_norm, q and k are scaled to unit
// length per head before the dot product and `scale` acts as a temperature.

struct AttentionShape {
  std::size_t tq = 0;
  std::size_t tk = 0;
  std::size_t heads = 1;
  std::size_t head_dim = 0;
  std::size_t width() const { return heads * head_dim; }
};

struct AttentionMaskView {
  const int* query_block = nullptr;
  const int* key_block = nullptr;
  bool allowed(std::size_t i, std::size_t j) const {
    return query_block == nullptr || key_block[j] <= query_block[i];
  }
};

inline constexpr double kNormEps = 1e-12;

namespace detail {

template <typename T>
double head_norm(const T* row, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) s += static_cast<double>(row[d]) * static_cast<double>(row[d]);
  return std::sqrt(s + kNormEps);
}

// One (query row, head) pair. probs receives tk entries; masked keys get 0.
template <typename T>
void attend_row(const T* q, const T* k, const T* v, T* out, T* probs, std::size_t i,
                std::size_t h, const AttentionShape& s, const AttentionMaskView& mask,
                bool qk_norm, double scale, std::vector<double>& scores) {
  const std::size_t w = s.width();
  const std::size_t off = h * s.head_dim;
  const T* qi = q + i * w + off;
  const double qn = qk_norm ? head_norm(qi, s.head_dim) : 1.0;
  scores.assign(s.tk, 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < s.tk; ++j) {
    if (!mask.allowed(i, j)) continue;
    const T* kj = k + j * w + off;
    double dot = 0.0;
    for (std::size_t d = 0; d < s.head_dim; ++d) dot += static_cast<double>(qi[d]) * static_cast<double>(kj[d]);
    if (qk_norm) dot /= qn * head_norm(kj, s.head_dim);
    scores[j] = dot * scale;
    mx = std::max(mx, scores[j]);
  }
  double denom = 0.0;
  for (std::size_t j = 0; j < s.tk; ++j) {
    if (!mask.allowed(i, j)) continue;
    scores[j] = std::exp(scores[j] - mx);
    denom += scores[j];
  }
  T* oi = out + i * w + off;
  for (std::size_t d = 0; d < s.head_dim; ++d) oi[d] = T(0);
  std::vector<double> acc(s.head_dim, 0.0);
  for (std::size_t j = 0; j < s.tk; ++j) {
    const double p = mask.allowed(i, j) ? scores[j] / denom : 0.0;
    if (probs) probs[j] = static_cast<T>(p);
    if (p == 0.0) continue;
    const T* vj = v + j * w + off;
    for (std::size_t d = 0; d < s.head_dim; ++d) acc[d] += p * static_cast<double>(vj[d]);
  }
  for (std::size_t d = 0; d < s.head_dim; ++d) oi[d] = static_cast<T>(acc[d]);
}

}  // namespace detail

// probs (optional) is laid out [heads, tq, tk].
template <typename T>
void attention_forward_serial(const T* q, const T* k, const T* v, T* out, T* probs,
                              const AttentionShape& s, const AttentionMaskView& mask, bool qk_norm,
                              double scale) {
  std::vector<double> scores;
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t i = 0; i < s.tq; ++i) {
      T* p = probs ? probs + (h * s.tq + i) * s.tk : nullptr;
      detail::attend_row(q, k, v, out, p, i, h, s, mask, qk_norm, scale, scores);
    }
  }
}

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs,
                       const AttentionShape& s, const AttentionMaskView& mask, bool qk_norm,
                       double scale) {
  const std::size_t rows = s.heads * s.tq;
  const bool parallel = rows * s.tk * s.head_dim >= kParallelWork;
#pragma omp parallel if (parallel)
  {
    std::vector<double> scores;
#pragma omp for schedule(static)
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t h = r / s.tq;
      const std::size_t i = r % s.tq;
      T* p = probs ? probs + (h * s.tq + i) * s.tk : nullptr;
      detail::attend_row(q, k, v, out, p, i, h, s, mask, qk_norm, scale, scores);
    }
  }
}

// Gradients for attention_forward given its saved probabilities. All grad
// buffers are accumulated into. Parallel over heads so no two threads write
// the same element.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* gout, T* gq,
                        T* gk, T* gv, const AttentionShape& s, bool qk_norm, double scale) {
  const std::size_t w = s.width();
  const std::size_t dh = s.head_dim;
  const bool parallel = s.heads > 1 && s.heads * s.tq * s.tk * dh >= kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::size_t h = 0; h < s.heads; ++h) {
    const std::size_t off = h * dh;
    // Unit-normalized copies (or plain copies) of q and k for this head.
    std::vector<double> qh(s.tq * dh), kh(s.tk * dh), qn(s.tq, 1.0), kn(s.tk, 1.0);
    for (std::size_t i = 0; i < s.tq; ++i) {
      if (qk_norm) qn[i] = detail::head_norm(q + i * w + off, dh);
      for (std::size_t d = 0; d < dh; ++d) qh[i * dh + d] = static_cast<double>(q[i * w + off + d]) / qn[i];
    }
    for (std::size_t j = 0; j < s.tk; ++j) {
      if (qk_norm) kn[j] = detail::head_norm(k + j * w + off, dh);
      for (std::size_t d = 0; d < dh; ++d) kh[j * dh + d] = static_cast<double>(k[j * w + off + d]) / kn[j];
    }
    std::vector<double> gqh(s.tq * dh, 0.0), gkh(s.tk * dh, 0.0), gvh(s.tk * dh, 0.0);
    std::vector<double> dp(s.tk);
    for (std::size_t i = 0; i < s.tq; ++i) {
      const T* p = probs + (h * s.tq + i) * s.tk;
      const T* go = gout + i * w + off;
      double dot_pd = 0.0;
      for (std::size_t j = 0; j < s.tk; ++j) {
        const double pj = static_cast<double>(p[j]);
        if (pj == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        double acc = 0.0;
        for (std::size_t d = 0; d < dh; ++d) {
          acc += static_cast<double>(go[d]) * static_cast<double>(v[j * w + off + d]);
          gvh[j * dh + d] += pj * static_cast<double>(go[d]);
        }
        dp[j] = acc;
        dot_pd += pj * acc;
      }
      for (std::size_t j = 0; j < s.tk; ++j) {
        const double pj = static_cast<double>(p[j]);
        if (pj == 0.0) continue;
        const double ds = pj * (dp[j] - dot_pd) * scale;
        for (std::size_t d = 0; d < dh; ++d) {
          gqh[i * dh + d] += ds * kh[j * dh + d];
          gkh[j * dh + d] += ds * qh[i * dh + d];
        }
      }
    }
    // Back through the normalization: d(x/|x|) = (g - x̂ (x̂·g)) / |x|.
    auto unnormalize = [&](std::vector<double>& g, const std::vector<double>& xh,
                           const std::vector<double>& norms, std::size_t rows, T* dst) {
      for (std::size_t r = 0; r < rows; ++r) {
        double proj = 0.0;
        if (qk_norm) {
          for (std::size_t d = 0; d < dh; ++d) proj += xh[r * dh + d] * g[r * dh + d];
        }
        for (std::size_t d = 0; d < dh; ++d) {
          const double gd = (g[r * dh + d] - xh[r * dh + d] * proj) / norms[r];
          dst[r * w + off + d] += static_cast<T>(gd);
        }
      }
    };
    if (gq) unnormalize(gqh, qh, qn, s.tq, gq);
    if (gk) unnormalize(gkh, kh, kn, s.tk, gk);
    if (gv) {
      for (std::size_t j = 0; j < s.tk; ++j) {
        for (std::size_t d = 0; d < dh; ++d) gv[j * w + off + d] += static_cast<T>(gvh[j * dh + d]);
      }
    }
  }
}

}  // namespace varlab::kernels
