#pragma once

// Differentiable tensor ops. Feature maps are NHWC; sequences are [B, T, C].

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "varlab/errors.hpp"
#include "varlab/numerics/kernels.hpp"
#include "varlab/numerics/tensor.hpp"

namespace varlab::ops {

template <typename T>
using TensorT = BasicTensor<T>;

namespace detail {

inline void same_shape(const Shape& a, const Shape& b, const char* op) {
  expects(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  expects(shape_numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return TensorT<T>::make_result(std::move(shape), x.values(), "reshape", {x},
                                 [x](std::span<const T> g) mutable {
                                   detail::add_into<T>(x.grad_buffer(), g);
                                 });
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), "add", {a, b},
                                 [a, b](std::span<const T> g) mutable {
                                   if (a.requires_grad()) detail::add_into<T>(a.grad_buffer(), g);
                                   if (b.requires_grad()) detail::add_into<T>(b.grad_buffer(), g);
                                 });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), "sub", {a, b},
                                 [a, b](std::span<const T> g) mutable {
                                   if (a.requires_grad()) detail::add_into<T>(a.grad_buffer(), g);
                                   if (b.requires_grad()) {
                                     auto gb = b.grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                   }
                                 });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return TensorT<T>::make_result(a.shape(), std::move(out), "mul", {a, b},
                                 [a, b](std::span<const T> g) mutable {
                                   if (a.requires_grad()) {
                                     auto ga = a.grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                                   }
                                   if (b.requires_grad()) {
                                     auto gb = b.grad_buffer();
                                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                                   }
                                 });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, double s) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(static_cast<double>(x[i]) * s);
  return TensorT<T>::make_result(x.shape(), std::move(out), "scale", {x},
                                 [x, s](std::span<const T> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     gx[i] += static_cast<T>(static_cast<double>(g[i]) * s);
                                 });
}

// x[..., n] + b[n]
template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& b) {
  const std::size_t n = b.numel();
  expects(x.rank() >= 1 && x.dim(-1) == n, "add_bias: last dim must equal bias length");
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return TensorT<T>::make_result(x.shape(), std::move(out), "add_bias", {x, b},
                                 [x, b, n](std::span<const T> g) mutable {
                                   if (x.requires_grad()) detail::add_into<T>(x.grad_buffer(), g);
                                   if (b.requires_grad()) {
                                     std::vector<double> acc(n, 0.0);
                                     for (std::size_t i = 0; i < g.size(); ++i) acc[i % n] += g[i];
                                     auto gb = b.grad_buffer();
                                     for (std::size_t j = 0; j < n; ++j) gb[j] += static_cast<T>(acc[j]);
                                   }
                                 });
}

// x[B, ...] + p[...]: p is shared across the leading batch dimension.
template <typename T>
TensorT<T> add_broadcast(const TensorT<T>& x, const TensorT<T>& p) {
  const std::size_t n = p.numel();
  expects(n > 0 && x.numel() % n == 0 && x.numel() / n == x.dim(0),
          "add_broadcast: " + shape_str(p.shape()) + " does not tile " + shape_str(x.shape()));
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i % n];
  return TensorT<T>::make_result(x.shape(), std::move(out), "add_broadcast", {x, p},
                                 [x, p, n](std::span<const T> g) mutable {
                                   if (x.requires_grad()) detail::add_into<T>(x.grad_buffer(), g);
                                   if (p.requires_grad()) {
                                     std::vector<double> acc(n, 0.0);
                                     for (std::size_t i = 0; i < g.size(); ++i) acc[i % n] += g[i];
                                     auto gp = p.grad_buffer();
                                     for (std::size_t j = 0; j < n; ++j) gp[j] += static_cast<T>(acc[j]);
                                   }
                                 });
}

// a[M,K] @ b[K,N]
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  expects(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);
  return TensorT<T>::make_result(
      {m, n}, std::move(out), "matmul", {a, b}, [a, b, m, k, n](std::span<const T> g) mutable {
        std::vector<T> tmp;
        if (a.requires_grad()) {
          tmp.resize(m * k);
          kernels::matmul_nt(g.data(), b.data().data(), tmp.data(), m, n, k);
          detail::add_into<T>(a.grad_buffer(), tmp);
        }
        if (b.requires_grad()) {
          tmp.resize(k * n);
          kernels::matmul_tn(a.data().data(), g.data(), tmp.data(), m, k, n);
          detail::add_into<T>(b.grad_buffer(), tmp);
        }
      });
}

// x[..., in] @ w[in, out] (+ bias[out])
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias = {}) {
  expects(w.rank() == 2 && x.rank() >= 1 && x.dim(-1) == w.dim(0),
          "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const std::size_t in = w.dim(0), rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  auto y = matmul(reshape(x, {rows, in}), w);
  if (bias.defined()) y = add_bias(y, bias);
  return reshape(y, std::move(out_shape));
}

namespace detail {

template <typename T, typename F, typename DF>
TensorT<T> unary(const TensorT<T>& x, const char* name, F f, DF df) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(f(static_cast<double>(x[i])));
  return TensorT<T>::make_result(x.shape(), std::move(out), name, {x},
                                 [x, df](std::span<const T> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                     gx[i] += static_cast<T>(static_cast<double>(g[i]) * df(static_cast<double>(x[i])));
                                 });
}

}  // namespace detail

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  return detail::unary(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
                       [](double v) { return v > 0 ? 1.0 : 0.0; });
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
  return detail::unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

// tanh approximation
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); },
      [](double v) {
        const double u = c * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

// Normalizes over the last dimension; no affine parameters.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, double eps = 1e-6) {
  const std::size_t n = x.dim(-1), rows = x.numel() / n;
  std::vector<T> out(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<T>((xr[j] - mean) * inv_std[r]);
  }
  auto y = out;
  return TensorT<T>::make_result(
      x.shape(), std::move(out), "layer_norm", {x},
      [x, y = std::move(y), inv_std = std::move(inv_std), n, rows](std::span<const T> g) mutable {
        auto gx = x.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          double mg = 0.0, mgy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            mg += g[r * n + j];
            mgy += static_cast<double>(g[r * n + j]) * y[r * n + j];
          }
          mg /= static_cast<double>(n);
          mgy /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += static_cast<T>(inv_std[r] * (g[r * n + j] - mg - y[r * n + j] * mgy));
          }
        }
      });
}

// AdaLN modulation: x[B, T, n] * (1 + scale[B, n]) + shift[B, n]
template <typename T>
TensorT<T> modulate(const TensorT<T>& x, const TensorT<T>& scale_, const TensorT<T>& shift) {
  expects(x.rank() == 3, "modulate: x must be [B, T, n]");
  const std::size_t b = x.dim(0), t = x.dim(1), n = x.dim(2);
  const Shape cond{b, n};
  expects(scale_.shape() == cond && shift.shape() == cond, "modulate: conditioning must be [B, n]");
  std::vector<T> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = (bi * t + ti) * n + j;
        out[i] = x[i] * (T(1) + scale_[bi * n + j]) + shift[bi * n + j];
      }
  return TensorT<T>::make_result(
      x.shape(), std::move(out), "modulate", {x, scale_, shift},
      [x, scale_, shift, b, t, n](std::span<const T> g) mutable {
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t bi = i / (t * n), j = i % n;
            gx[i] += g[i] * (T(1) + scale_[bi * n + j]);
          }
        }
        std::vector<double> gs(b * n, 0.0), gh(b * n, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = (i / (t * n)) * n + i % n;
          gs[c] += static_cast<double>(g[i]) * x[i];
          gh[c] += g[i];
        }
        if (scale_.requires_grad()) {
          auto dst = scale_.grad_buffer();
          for (std::size_t c = 0; c < gs.size(); ++c) dst[c] += static_cast<T>(gs[c]);
        }
        if (shift.requires_grad()) {
          auto dst = shift.grad_buffer();
          for (std::size_t c = 0; c < gh.size(); ++c) dst[c] += static_cast<T>(gh[c]);
        }
      });
}

// x[B, T, n] + gate[B, n] * y[B, T, n]
template <typename T>
TensorT<T> gated_residual(const TensorT<T>& x, const TensorT<T>& gate, const TensorT<T>& y) {
  detail::same_shape(x.shape(), y.shape(), "gated_residual");
  expects(x.rank() == 3, "gated_residual: x must be [B, T, n]");
  const std::size_t b = x.dim(0), t = x.dim(1), n = x.dim(2);
  expects(gate.shape() == Shape{b, n}, "gated_residual: gate must be [B, n]");
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + gate[(i / (t * n)) * n + i % n] * y[i];
  return TensorT<T>::make_result(
      x.shape(), std::move(out), "gated_residual", {x, gate, y},
      [x, gate, y, b, t, n](std::span<const T> g) mutable {
        if (x.requires_grad()) detail::add_into<T>(x.grad_buffer(), g);
        if (y.requires_grad()) {
          auto gy = y.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * gate[(i / (t * n)) * n + i % n];
        }
        if (gate.requires_grad()) {
          std::vector<double> acc(b * n, 0.0);
          for (std::size_t i = 0; i < g.size(); ++i)
            acc[(i / (t * n)) * n + i % n] += static_cast<double>(g[i]) * y[i];
          auto gg = gate.grad_buffer();
          for (std::size_t c = 0; c < acc.size(); ++c) gg[c] += static_cast<T>(acc[c]);
        }
      });
}

// Columns [offset, offset+len) of the last dimension.
template <typename T>
TensorT<T> slice_last(const TensorT<T>& x, std::size_t offset, std::size_t len) {
  const std::size_t n = x.dim(-1);
  expects(offset + len <= n && len > 0, "slice_last: range out of bounds");
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = x[r * n + offset + j];
  Shape shape = x.shape();
  shape.back() = len;
  return TensorT<T>::make_result(std::move(shape), std::move(out), "slice_last", {x},
                                 [x, offset, len, n, rows](std::span<const T> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t j = 0; j < len; ++j) gx[r * n + offset + j] += g[r * len + j];
                                 });
}

// Concatenate [B, T_i, n] tensors along the sequence axis.
template <typename T>
TensorT<T> concat_seq(const std::vector<TensorT<T>>& parts) {
  expects(!parts.empty(), "concat_seq: nothing to concatenate");
  const std::size_t b = parts[0].dim(0), n = parts[0].dim(2);
  std::size_t total = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    expects(p.rank() == 3 && p.dim(0) == b && p.dim(2) == n, "concat_seq: inconsistent part shapes");
    lens.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<T> out(b * total * n);
  for (std::size_t bi = 0; bi < b; ++bi) {
    std::size_t t0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const T* src = parts[k].data().data() + bi * lens[k] * n;
      std::copy(src, src + lens[k] * n, out.begin() + static_cast<std::ptrdiff_t>((bi * total + t0) * n));
      t0 += lens[k];
    }
  }
  return TensorT<T>::make_result(
      {b, total, n}, std::move(out), "concat_seq", parts,
      [parts, lens, b, total, n](std::span<const T> g) mutable {
        for (std::size_t bi = 0; bi < b; ++bi) {
          std::size_t t0 = 0;
          for (std::size_t k = 0; k < parts.size(); ++k) {
            if (parts[k].requires_grad()) {
              auto gp = parts[k].grad_buffer();
              for (std::size_t i = 0; i < lens[k] * n; ++i) gp[bi * lens[k] * n + i] += g[(bi * total + t0) * n + i];
            }
            t0 += lens[k];
          }
        }
      });
}

// Row lookup table[V, C] at indices -> [N, C]
template <typename T>
TensorT<T> embedding(const TensorT<T>& table, std::span<const int> indices) {
  expects(table.rank() == 2, "embedding: table must be [V, C]");
  const std::size_t v = table.dim(0), c = table.dim(1);
  std::vector<T> out(indices.size() * c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    expects(indices[i] >= 0 && static_cast<std::size_t>(indices[i]) < v,
            "embedding: index " + std::to_string(indices[i]) + " outside [0, " + std::to_string(v) + ")");
    std::copy_n(table.data().data() + static_cast<std::size_t>(indices[i]) * c, c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return TensorT<T>::make_result({indices.size(), c}, std::move(out), "embedding", {table},
                                 [table, idx = std::move(idx), c](std::span<const T> g) mutable {
                                   auto gt = table.grad_buffer();
                                   for (std::size_t i = 0; i < idx.size(); ++i)
                                     for (std::size_t j = 0; j < c; ++j)
                                       gt[static_cast<std::size_t>(idx[i]) * c + j] += g[i * c + j];
                                 });
}

// ---------------------------------------------------------------------------
// Convolution on NHWC input with [kh, kw, Cin, Cout] weights, via im2col.

struct Conv2dGeometry {
  std::size_t batch, in_h, in_w, in_c, out_h, out_w, out_c, kernel, stride, pad;
  std::size_t patch() const { return kernel * kernel * in_c; }
  std::size_t rows() const { return batch * out_h * out_w; }
};

namespace detail {

template <typename T>
void im2col(const T* x, T* cols, const Conv2dGeometry& g) {
  const std::size_t patch = g.patch();
#pragma omp parallel for schedule(static) if (g.rows() * patch >= kernels::kParallelWork)
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t b = r / (g.out_h * g.out_w), oy = (r / g.out_w) % g.out_h, ox = r % g.out_w;
    T* dst = cols + r * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        T* cell = dst + (ky * g.kernel + kx) * g.in_c;
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) {
          std::fill_n(cell, g.in_c, T(0));
        } else {
          const T* src = x + ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
          std::copy_n(src, g.in_c, cell);
        }
      }
    }
  }
}

// Scatter-add of patch gradients back to the input; serial to keep the
// overlapping writes ordered.
template <typename T>
void col2im(const T* cols, T* gx, const Conv2dGeometry& g) {
  const std::size_t patch = g.patch();
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t b = r / (g.out_h * g.out_w), oy = (r / g.out_w) % g.out_h, ox = r % g.out_w;
    const T* src = cols + r * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
        if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
        T* dst = gx + ((b * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)) * g.in_c;
        const T* cell = src + (ky * g.kernel + kx) * g.in_c;
        for (std::size_t c = 0; c < g.in_c; ++c) dst[c] += cell[c];
      }
    }
  }
}

}  // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias, std::size_t stride,
                  std::size_t pad) {
  expects(x.rank() == 4 && w.rank() == 4, "conv2d: expects NHWC input and [k, k, Cin, Cout] weight");
  expects(w.dim(0) == w.dim(1), "conv2d: only square kernels");
  expects(w.dim(2) == x.dim(3), "conv2d: channel mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  expects(stride >= 1, "conv2d: stride must be positive");
  Conv2dGeometry geo{};
  geo.batch = x.dim(0);
  geo.in_h = x.dim(1);
  geo.in_w = x.dim(2);
  geo.in_c = x.dim(3);
  geo.kernel = w.dim(0);
  geo.out_c = w.dim(3);
  geo.stride = stride;
  geo.pad = pad;
  expects(geo.in_h + 2 * pad >= geo.kernel && geo.in_w + 2 * pad >= geo.kernel, "conv2d: kernel larger than padded input");
  geo.out_h = (geo.in_h + 2 * pad - geo.kernel) / stride + 1;
  geo.out_w = (geo.in_w + 2 * pad - geo.kernel) / stride + 1;
  std::vector<T> cols(geo.rows() * geo.patch());
  detail::im2col(x.data().data(), cols.data(), geo);
  std::vector<T> out(geo.rows() * geo.out_c);
  kernels::matmul(cols.data(), w.data().data(), out.data(), geo.rows(), geo.patch(), geo.out_c);
  if (bias.defined()) {
    expects(bias.numel() == geo.out_c, "conv2d: bias length must equal output channels");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % geo.out_c];
  }
  std::vector<TensorT<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return TensorT<T>::make_result(
      {geo.batch, geo.out_h, geo.out_w, geo.out_c}, std::move(out), "conv2d", std::move(inputs),
      [x, w, bias, geo, cols = std::move(cols)](std::span<const T> g) mutable {
        if (w.requires_grad()) {
          std::vector<T> gw(geo.patch() * geo.out_c);
          kernels::matmul_tn(cols.data(), g.data(), gw.data(), geo.rows(), geo.patch(), geo.out_c);
          detail::add_into<T>(w.grad_buffer(), gw);
        }
        if (bias.defined() && bias.requires_grad()) {
          std::vector<double> acc(geo.out_c, 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) acc[i % geo.out_c] += g[i];
          auto gb = bias.grad_buffer();
          for (std::size_t c = 0; c < geo.out_c; ++c) gb[c] += static_cast<T>(acc[c]);
        }
        if (x.requires_grad()) {
          std::vector<T> gcols(geo.rows() * geo.patch());
          kernels::matmul_nt(g.data(), w.data().data(), gcols.data(), geo.rows(), geo.out_c, geo.patch());
          detail::col2im(gcols.data(), x.grad_buffer().data(), geo);
        }
      });
}

// ---------------------------------------------------------------------------
// Bilinear resize with align-corners sampling. Shrinking an axis to length 1
// averages that axis; growing from length 1 replicates.

struct AxisTap {
  std::size_t src;
  double weight;
};

inline std::vector<std::vector<AxisTap>> resize_taps(std::size_t in, std::size_t out) {
  expects(in >= 1 && out >= 1, "resize: extents must be positive");
  std::vector<std::vector<AxisTap>> taps(out);
  if (out == 1 && in > 1) {
    for (std::size_t s = 0; s < in; ++s) taps[0].push_back({s, 1.0 / static_cast<double>(in)});
    return taps;
  }
  for (std::size_t o = 0; o < out; ++o) {
    if (in == 1) {
      taps[o].push_back({0, 1.0});
      continue;
    }
    const double pos = static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= in || frac == 0.0) {
      taps[o].push_back({std::min(lo, in - 1), 1.0});
    } else {
      taps[o].push_back({lo, 1.0 - frac});
      taps[o].push_back({lo + 1, frac});
    }
  }
  return taps;
}

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& x, std::size_t out_h, std::size_t out_w) {
  expects(x.rank() == 4, "resize_bilinear: expects NHWC input");
  const std::size_t b = x.dim(0), in_h = x.dim(1), in_w = x.dim(2), c = x.dim(3);
  if (in_h == out_h && in_w == out_w) return reshape(x, x.shape());
  auto th = resize_taps(in_h, out_h);
  auto tw = resize_taps(in_w, out_w);
  std::vector<T> out(b * out_h * out_w * c);
  std::vector<double> acc(c);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto& ty : th[oy])
          for (const auto& tx : tw[ox]) {
            const double wgt = ty.weight * tx.weight;
            const T* src = x.data().data() + ((bi * in_h + ty.src) * in_w + tx.src) * c;
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += wgt * src[ch];
          }
        T* dst = out.data() + ((bi * out_h + oy) * out_w + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = static_cast<T>(acc[ch]);
      }
  return TensorT<T>::make_result(
      {b, out_h, out_w, c}, std::move(out), "resize_bilinear", {x},
      [x, th, tw, b, in_h, in_w, out_h, out_w, c](std::span<const T> g) mutable {
        std::vector<double> gx(x.numel(), 0.0);
        for (std::size_t bi = 0; bi < b; ++bi)
          for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const T* src = g.data() + ((bi * out_h + oy) * out_w + ox) * c;
              for (const auto& ty : th[oy])
                for (const auto& tx : tw[ox]) {
                  const double wgt = ty.weight * tx.weight;
                  double* dst = gx.data() + ((bi * in_h + ty.src) * in_w + tx.src) * c;
                  for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wgt * src[ch];
                }
            }
        auto dst = x.grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) dst[i] += static_cast<T>(gx[i]);
      });
}

// ---------------------------------------------------------------------------
// Multi-head attention. q: [B, Tq, n], k and v: [B, Tk, n].

struct AttentionOptions {
  std::size_t heads = 1;
  bool qk_norm = false;
  // Logit multiplier; 0 selects 1/sqrt(head_dim).
  double scale = 0.0;
  // Block ids per query / key position; empty means no masking.
  std::vector<int> query_block;
  std::vector<int> key_block;
};

template <typename T>
TensorT<T> attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                     const AttentionOptions& opt, std::vector<T>* probs_out = nullptr) {
  expects(q.rank() == 3 && k.rank() == 3 && v.rank() == 3, "attention: expects [B, T, n] tensors");
  detail::same_shape(k.shape(), v.shape(), "attention(k, v)");
  const std::size_t b = q.dim(0), n = q.dim(2);
  expects(k.dim(0) == b && k.dim(2) == n, "attention: q/k batch or width mismatch");
  expects(opt.heads >= 1 && n % opt.heads == 0, "attention: width not divisible by head count");
  kernels::AttentionShape s{q.dim(1), k.dim(1), opt.heads, n / opt.heads};
  expects(opt.query_block.empty() ||
              (opt.query_block.size() == s.tq && opt.key_block.size() == s.tk),
          "attention: mask does not match sequence lengths");
  kernels::AttentionMaskView mask{};
  if (!opt.query_block.empty()) mask = {opt.query_block.data(), opt.key_block.data()};
  const double scale_ = opt.scale > 0 ? opt.scale : 1.0 / std::sqrt(static_cast<double>(s.head_dim));
  const std::size_t per_q = s.tq * n, per_k = s.tk * n, per_p = s.heads * s.tq * s.tk;
  std::vector<T> out(b * per_q);
  std::vector<T> probs(b * per_p);
  for (std::size_t bi = 0; bi < b; ++bi) {
    kernels::attention_forward(q.data().data() + bi * per_q, k.data().data() + bi * per_k,
                               v.data().data() + bi * per_k, out.data() + bi * per_q,
                               probs.data() + bi * per_p, s, mask, opt.qk_norm, scale_);
  }
  if (probs_out) *probs_out = probs;
  const bool qk_norm = opt.qk_norm;
  return TensorT<T>::make_result(
      q.shape(), std::move(out), "attention", {q, k, v},
      [q, k, v, probs = std::move(probs), s, qk_norm, scale_, b, per_q, per_k, per_p](std::span<const T> g) mutable {
        T* gq = q.requires_grad() ? q.grad_buffer().data() : nullptr;
        T* gk = k.requires_grad() ? k.grad_buffer().data() : nullptr;
        T* gv = v.requires_grad() ? v.grad_buffer().data() : nullptr;
        for (std::size_t bi = 0; bi < b; ++bi) {
          kernels::attention_backward(q.data().data() + bi * per_q, k.data().data() + bi * per_k,
                                      v.data().data() + bi * per_k, probs.data() + bi * per_p,
                                      g.data() + bi * per_q, gq ? gq + bi * per_q : nullptr,
                                      gk ? gk + bi * per_k : nullptr, gv ? gv + bi * per_k : nullptr, s,
                                      qk_norm, scale_);
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses.

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  return TensorT<T>::make_result({}, {static_cast<T>(acc)}, "sum", {x}, [x](std::span<const T> g) mutable {
    auto gx = x.grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Euclidean norm of each leading-dimension slice: x[B, ...] -> [B].
// The gradient at an exactly zero slice is taken as zero.
template <typename T>
TensorT<T> l2_norm_per_sample(const TensorT<T>& x) {
  const std::size_t b = x.dim(0), per = x.numel() / b;
  std::vector<T> out(b);
  std::vector<double> norms(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < per; ++j) s += static_cast<double>(x[i * per + j]) * x[i * per + j];
    norms[i] = std::sqrt(s);
    out[i] = static_cast<T>(norms[i]);
  }
  return TensorT<T>::make_result({b}, std::move(out), "l2_norm", {x},
                                 [x, norms = std::move(norms), b, per](std::span<const T> g) mutable {
                                   auto gx = x.grad_buffer();
                                   for (std::size_t i = 0; i < b; ++i) {
                                     if (norms[i] == 0.0) continue;
                                     for (std::size_t j = 0; j < per; ++j)
                                       gx[i * per + j] += static_cast<T>(g[i] * x[i * per + j] / norms[i]);
                                   }
                                 });
}

// Inverted dropout; identity when p == 0 or when recording is off.
template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double p, std::mt19937_64& rng) {
  expects(p >= 0.0 && p < 1.0, "dropout: rate must be in [0, 1)");
  if (p == 0.0 || !grad_enabled()) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<T> m(x.numel());
  for (auto& v : m) v = keep(rng) ? static_cast<T>(1.0 / (1.0 - p)) : T(0);
  return mul(x, TensorT<T>::from_data(x.shape(), std::move(m)));
}

struct CrossEntropyResult {
  std::vector<double> nll;      // per position
  std::vector<bool> correct;    // argmax == target, lowest index wins ties
};

// Per-position statistics without building a graph.
template <typename T>
CrossEntropyResult cross_entropy_stats(std::span<const T> logits, std::size_t vocab, std::span<const int> targets) {
  expects(vocab >= 1 && logits.size() == targets.size() * vocab, "cross_entropy: logits/targets size mismatch");
  CrossEntropyResult r;
  r.nll.resize(targets.size());
  r.correct.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    expects(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < vocab,
            "cross_entropy: target " + std::to_string(targets[i]) + " outside [0, " + std::to_string(vocab) + ")");
    const T* row = logits.data() + i * vocab;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < vocab; ++j)
      if (row[j] > row[arg]) arg = j;
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j]) - row[arg]);
    r.nll[i] = std::log(z) - (static_cast<double>(row[targets[i]]) - row[arg]);
    r.correct[i] = arg == static_cast<std::size_t>(targets[i]);
  }
  return r;
}

template <typename T>
struct CrossEntropy {
  TensorT<T> loss;  // mean over positions
  CrossEntropyResult stats;
};

// logits[..., V]; targets has one entry per row.
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const TensorT<T>& logits, std::span<const int> targets) {
  const std::size_t vocab = logits.dim(-1), rows = logits.numel() / vocab;
  expects(rows == targets.size(), "softmax_cross_entropy: expected " + std::to_string(rows) + " targets");
  auto stats = cross_entropy_stats<T>(logits.data(), vocab, targets);
  double total = 0.0;
  for (double v : stats.nll) total += v;
  std::vector<int> tgt(targets.begin(), targets.end());
  auto loss = TensorT<T>::make_result(
      {}, {static_cast<T>(total / static_cast<double>(rows))}, "softmax_cross_entropy", {logits},
      [logits, tgt = std::move(tgt), vocab, rows](std::span<const T> g) mutable {
        auto gl = logits.grad_buffer();
        const double coef = static_cast<double>(g[0]) / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
          const T* row = logits.data().data() + i * vocab;
          double mx = row[0];
          for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
          double z = 0.0;
          for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < vocab; ++j) {
            const double p = std::exp(row[j] - mx) / z;
            gl[i * vocab + j] += static_cast<T>(coef * (p - (static_cast<int>(j) == tgt[i] ? 1.0 : 0.0)));
          }
        }
      });
  return {loss, std::move(stats)};
}

// Row-wise softmax in double precision, no graph.
template <typename T>
std::vector<double> softmax(std::span<const T> logits) {
  std::vector<double> p(logits.size());
  if (p.empty()) return p;
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = std::exp(static_cast<double>(logits[j]) - mx);
    z += p[j];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace varlab::ops
