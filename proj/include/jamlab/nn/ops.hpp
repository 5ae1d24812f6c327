#pragma once

// Differentiable operations on a Tape.
//
// Layout conventions: dense features are [N, F]; 1-D feature maps are
// [N, C, L]; images are [N, C, H, W]. A complex 1-D map with C channels is a
// real [N, 2C, L] map whose first C channels hold the real parts and the last
// C the imaginary parts.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "jamlab/nn/tape.hpp"
#include "jamlab/rng.hpp"

namespace jamlab::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

inline void expect_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_string(s));
}

inline void expect_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k || stride == 0) throw ShapeError("convolution window larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

/// Positions per sample in the trailing (spatial) dims of a [N, C, ...] shape.
inline std::size_t spatial_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

template <typename T>
void im2col_1d(const T* x, std::size_t c, std::size_t l, std::size_t k, std::size_t stride, std::size_t pad,
               std::size_t l_out, T* col) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t kk = 0; kk < k; ++kk) {
      T* row = col + (ci * k + kk) * l_out;
      const T* xr = x + ci * l;
      for (std::size_t o = 0; o < l_out; ++o) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(o * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        row[o] = (p >= 0 && p < static_cast<std::ptrdiff_t>(l)) ? xr[p] : T{0};
      }
    }
}

template <typename T>
void col2im_1d(const T* col, std::size_t c, std::size_t l, std::size_t k, std::size_t stride, std::size_t pad,
               std::size_t l_out, T* dx) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* row = col + (ci * k + kk) * l_out;
      T* xr = dx + ci * l;
      for (std::size_t o = 0; o < l_out; ++o) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(o * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (p >= 0 && p < static_cast<std::ptrdiff_t>(l)) xr[p] += row[o];
      }
    }
}

template <typename T>
void im2col_2d(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
               std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* col) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        T* row = col + ((ci * kh + i) * kw + j) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(y * stride + i) - static_cast<std::ptrdiff_t>(pad);
          T* out = row + y * ow;
          if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* xr = x + (ci * h + static_cast<std::size_t>(py)) * w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(xo * stride + j) - static_cast<std::ptrdiff_t>(pad);
            out[xo] = (px >= 0 && px < static_cast<std::ptrdiff_t>(w)) ? xr[px] : T{0};
          }
        }
      }
}

template <typename T>
void col2im_2d(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
               std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, T* dx) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        const T* row = col + ((ci * kh + i) * kw + j) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(y * stride + i) - static_cast<std::ptrdiff_t>(pad);
          if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) continue;
          T* xr = dx + (ci * h + static_cast<std::size_t>(py)) * w;
          const T* in = row + y * ow;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(xo * stride + j) - static_cast<std::ptrdiff_t>(pad);
            if (px >= 0 && px < static_cast<std::ptrdiff_t>(w)) xr[px] += in[xo];
          }
        }
      }
}

/// Geometry shared by the 1-D and 2-D GEMM convolutions: per sample,
/// out[Cout, P] = W[Cout, R] * col[R, P] with R = Cin * prod(kernel).
struct ConvGeom {
  std::size_t n, c_in, c_out, rows, positions, in_per_sample;
  bool is_2d;
  std::size_t h, w, kh, kw, oh, ow;  // 2-D (1-D uses w, kw, ow)
  std::size_t stride, pad;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void make_col(const ConvGeom& g, const T* x, std::vector<T>& col) {
  col.resize(g.rows * g.positions);
  if (g.is_2d)
    im2col_2d(x, g.c_in, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.oh, g.ow, col.data());
  else
    im2col_1d(x, g.c_in, g.w, g.kw, g.stride, g.pad, g.ow, col.data());
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* wgt, T* y) {
  CMatMap<T> W(wgt, static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows));
  std::vector<T> col;
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x + n * g.in_per_sample;
    const T* src = xn;
    if (!g.pointwise()) {
      make_col(g, xn, col);
      src = col.data();
    }
    CMatMap<T> C(src, static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.positions));
    MatMap<T> Y(y + n * g.c_out * g.positions, static_cast<Eigen::Index>(g.c_out),
                static_cast<Eigen::Index>(g.positions));
    Y.noalias() = W * C;
  }
}

/// Accumulates dW (if non-null) and dx (if non-null) from dy.
template <typename T>
void conv_backward(const ConvGeom& g, const T* x, const T* wgt, const T* dy, T* dw, T* dx) {
  CMatMap<T> W(wgt, static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows));
  std::vector<T> col, dcol;
  for (std::size_t n = 0; n < g.n; ++n) {
    CMatMap<T> DY(dy + n * g.c_out * g.positions, static_cast<Eigen::Index>(g.c_out),
                  static_cast<Eigen::Index>(g.positions));
    const T* xn = x + n * g.in_per_sample;
    if (dw) {
      const T* src = xn;
      if (!g.pointwise()) {
        make_col(g, xn, col);
        src = col.data();
      }
      CMatMap<T> C(src, static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.positions));
      MatMap<T> DW(dw, static_cast<Eigen::Index>(g.c_out), static_cast<Eigen::Index>(g.rows));
      DW.noalias() += DY * C.transpose();
    }
    if (dx) {
      T* dxn = dx + n * g.in_per_sample;
      if (g.pointwise()) {
        MatMap<T> DX(dxn, static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.positions));
        DX.noalias() += W.transpose() * DY;
      } else {
        dcol.assign(g.rows * g.positions, T{0});
        MatMap<T> DC(dcol.data(), static_cast<Eigen::Index>(g.rows), static_cast<Eigen::Index>(g.positions));
        DC.noalias() = W.transpose() * DY;
        if (g.is_2d)
          col2im_2d(dcol.data(), g.c_in, g.h, g.w, g.kh, g.kw, g.stride, g.pad, g.oh, g.ow, dxn);
        else
          col2im_1d(dcol.data(), g.c_in, g.w, g.kw, g.stride, g.pad, g.ow, dxn);
      }
    }
  }
}

inline ConvGeom geom_1d(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad, const char* op) {
  expect_rank(x, 3, op);
  expect_rank(w, 3, op);
  if (w[1] != x[1])
    throw ShapeError(std::string(op) + ": kernel expects " + std::to_string(w[1]) + " input channels, got " +
                     std::to_string(x[1]));
  ConvGeom g{};
  g.is_2d = false;
  g.n = x[0];
  g.c_in = x[1];
  g.c_out = w[0];
  g.h = g.kh = g.oh = 1;
  g.w = x[2];
  g.kw = w[2];
  g.stride = stride;
  g.pad = pad;
  g.ow = conv_out(g.w, g.kw, stride, pad);
  g.rows = g.c_in * g.kw;
  g.positions = g.ow;
  g.in_per_sample = g.c_in * g.w;
  return g;
}

inline ConvGeom geom_2d(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad, const char* op) {
  expect_rank(x, 4, op);
  expect_rank(w, 4, op);
  if (w[1] != x[1])
    throw ShapeError(std::string(op) + ": kernel expects " + std::to_string(w[1]) + " input channels, got " +
                     std::to_string(x[1]));
  ConvGeom g{};
  g.is_2d = true;
  g.n = x[0];
  g.c_in = x[1];
  g.c_out = w[0];
  g.h = x[2];
  g.w = x[3];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = stride;
  g.pad = pad;
  g.oh = conv_out(g.h, g.kh, stride, pad);
  g.ow = conv_out(g.w, g.kw, stride, pad);
  g.rows = g.c_in * g.kh * g.kw;
  g.positions = g.oh * g.ow;
  g.in_per_sample = g.c_in * g.h * g.w;
  return g;
}

/// Adds a per-channel bias to y [N, C, P] and its gradient to db.
template <typename T>
void add_channel_bias(T* y, const T* b, std::size_t n, std::size_t c, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* row = y + (i * c + ch) * p;
      for (std::size_t k = 0; k < p; ++k) row[k] += b[ch];
    }
}

template <typename T>
void channel_bias_grad(const T* dy, T* db, std::size_t n, std::size_t c, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* row = dy + (i * c + ch) * p;
      T acc{0};
      for (std::size_t k = 0; k < p; ++k) acc += row[k];
      db[ch] += acc;
    }
}

template <typename T, typename F, typename G>
Var unary(Tape<T>& t, Var x, F f, G df) {
  const auto& xv = t.value(x);
  Tensor<T> y(xv.shape);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = f(xv.data[i]);
  const bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, out, df] {
      const auto& xv = t.value(x);
      const auto& yv = t.value(out);
      const auto& gy = t.grad(out);
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv.data[i], yv.data[i]);
    };
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  detail::expect_same(t.shape(a), t.shape(b), "add");
  Tensor<T> y = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, a, b, out] {
      const auto& g = t.grad(out);
      for (Var v : {a, b})
        if (t.requires_grad(v)) {
          auto& gv = t.grad(v);
          for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    };
  return out;
}

template <typename T>
Var sub(Tape<T>& t, Var a, Var b) {
  detail::expect_same(t.shape(a), t.shape(b), "sub");
  Tensor<T> y = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] -= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, a, b, out] {
      const auto& g = t.grad(out);
      if (t.requires_grad(a)) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.requires_grad(b)) {
        auto& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  return out;
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  detail::expect_same(t.shape(a), t.shape(b), "mul");
  Tensor<T> y = t.value(a);
  const auto& bv = t.value(b).data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= bv[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, a, b, out] {
      const auto& g = t.grad(out);
      const auto& av = t.value(a).data;
      const auto& bv = t.value(b).data;
      if (t.requires_grad(a)) {
        auto& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (t.requires_grad(b)) {
        auto& gb = t.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    };
  return out;
}

/// alpha * x + beta with constant scalars.
template <typename T>
Var affine(Tape<T>& t, Var x, T alpha, T beta) {
  return detail::unary(t, x, [alpha, beta](T v) { return alpha * v + beta; }, [alpha](T, T) { return alpha; });
}

/// y[n, ...] = s[n] * x[n, ...] for s of shape [N, 1].
template <typename T>
Var scale_rows(Tape<T>& t, Var x, Var s) {
  const auto& xs = t.shape(x);
  const auto& ss = t.shape(s);
  if (ss.size() != 2 || ss[1] != 1 || xs.empty() || ss[0] != xs[0])
    throw ShapeError("scale_rows: scale " + shape_string(ss) + " for input " + shape_string(xs));
  const std::size_t n = xs[0], per = t.value(x).size() / std::max<std::size_t>(n, 1);
  Tensor<T> y = t.value(x);
  const auto& sv = t.value(s).data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < per; ++k) y.data[i * per + k] *= sv[i];
  const bool rg = t.requires_grad(x) || t.requires_grad(s);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, s, out, n, per] {
      const auto& g = t.grad(out);
      const auto& xv = t.value(x).data;
      const auto& sv = t.value(s).data;
      if (t.requires_grad(x)) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < per; ++k) gx[i * per + k] += g[i * per + k] * sv[i];
      }
      if (t.requires_grad(s)) {
        auto& gs = t.grad(s);
        for (std::size_t i = 0; i < n; ++i) {
          T acc{0};
          for (std::size_t k = 0; k < per; ++k) acc += g[i * per + k] * xv[i * per + k];
          gs[i] += acc;
        }
      }
    };
  return out;
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  return detail::unary(t, x, [](T v) { return v > T{0} ? v : T{0}; },
                       [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

/// ReLU applied separately to real and imaginary parts of a complex map.
template <typename T>
Var crelu(Tape<T>& t, Var x) {
  return relu(t, x);
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <typename T>
Var sigmoid(Tape<T>& t, Var x) {
  return detail::unary(t, x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var silu(Tape<T>& t, Var x) {
  return detail::unary(t, x, [](T v) { return v * sigmoid_scalar(v); },
                       [](T v, T) {
                         const T s = sigmoid_scalar(v);
                         return s * (T{1} + v * (T{1} - s));
                       });
}

template <typename T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  if (shape_size(shape) != t.value(x).size())
    throw ShapeError("reshape: " + shape_string(t.shape(x)) + " to " + shape_string(shape));
  Tensor<T> y(std::move(shape), t.value(x).data);
  const bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, out] {
      const auto& g = t.grad(out);
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  return out;
}

/// Scalar sum(w * x) with a constant weight tensor; used to probe gradients.
template <typename T>
Var weighted_sum(Tape<T>& t, Var x, const Tensor<T>& w) {
  detail::expect_same(t.shape(x), w.shape, "weighted_sum");
  T acc{0};
  const auto& xv = t.value(x).data;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += w.data[i] * xv[i];
  const bool rg = t.requires_grad(x);
  Var out = t.push(Tensor<T>({1}, std::vector<T>{acc}), rg);
  if (rg)
    t.node(out).backward = [&t, x, out, w] {
      const T g = t.grad(out)[0];
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w.data[i];
    };
  return out;
}

// ---------------------------------------------------------------------------
// Dense

/// x [N, in], w [out, in], b [out] -> [N, out].
template <typename T>
Var linear(Tape<T>& t, Var x, Var w, std::optional<Var> b = std::nullopt) {
  const auto& xs = t.shape(x);
  const auto& ws = t.shape(w);
  detail::expect_rank(xs, 2, "linear");
  detail::expect_rank(ws, 2, "linear");
  if (ws[1] != xs[1]) throw ShapeError("linear: weight " + shape_string(ws) + " for input " + shape_string(xs));
  if (b && t.shape(*b) != Shape{ws[0]}) throw ShapeError("linear: bias shape " + shape_string(t.shape(*b)));
  const auto n = static_cast<Eigen::Index>(xs[0]), in = static_cast<Eigen::Index>(xs[1]),
             o = static_cast<Eigen::Index>(ws[0]);
  Tensor<T> y({xs[0], ws[0]});
  MatMap<T> Y(y.ptr(), n, o);
  Y.noalias() = CMatMap<T>(t.value(x).ptr(), n, in) * CMatMap<T>(t.value(w).ptr(), o, in).transpose();
  if (b) {
    const auto& bv = t.value(*b).data;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < o; ++j) Y(i, j) += bv[static_cast<std::size_t>(j)];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || (b && t.requires_grad(*b));
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, w, b, out, n, in, o] {
      CMatMap<T> G(t.grad(out).data(), n, o);
      if (t.requires_grad(x))
        MatMap<T>(t.grad(x).data(), n, in).noalias() += G * CMatMap<T>(t.value(w).ptr(), o, in);
      if (t.requires_grad(w))
        MatMap<T>(t.grad(w).data(), o, in).noalias() += G.transpose() * CMatMap<T>(t.value(x).ptr(), n, in);
      if (b && t.requires_grad(*b)) {
        auto& gb = t.grad(*b);
        for (Eigen::Index i = 0; i < n; ++i)
          for (Eigen::Index j = 0; j < o; ++j) gb[static_cast<std::size_t>(j)] += G(i, j);
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

/// x [N, Cin, L], w [Cout, Cin, K] -> [N, Cout, Lout].
template <typename T>
Var conv1d(Tape<T>& t, Var x, Var w, std::optional<Var> b, std::size_t stride, std::size_t pad) {
  const auto g = detail::geom_1d(t.shape(x), t.shape(w), stride, pad, "conv1d");
  Tensor<T> y({g.n, g.c_out, g.ow});
  detail::conv_forward(g, t.value(x).ptr(), t.value(w).ptr(), y.ptr());
  if (b) detail::add_channel_bias(y.ptr(), t.value(*b).ptr(), g.n, g.c_out, g.positions);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || (b && t.requires_grad(*b));
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, w, b, out, g] {
      const T* dy = t.grad(out).data();
      detail::conv_backward(g, t.value(x).ptr(), t.value(w).ptr(), dy,
                            t.requires_grad(w) ? t.grad(w).data() : nullptr,
                            t.requires_grad(x) ? t.grad(x).data() : nullptr);
      if (b && t.requires_grad(*b)) detail::channel_bias_grad(dy, t.grad(*b).data(), g.n, g.c_out, g.positions);
    };
  return out;
}

/// Complex convolution h * W with W = w_re + j w_im:
///   re = w_re * h_re - w_im * h_im,  im = w_re * h_im + w_im * h_re.
/// x is a complex map [N, 2Cin, L]; w_re, w_im are [Cout, Cin, K]; the
/// result is a complex map [N, 2Cout, Lout]. Evaluated as one real
/// convolution with the block kernel [[w_re, -w_im], [w_im, w_re]].
template <typename T>
Var complex_conv1d(Tape<T>& t, Var x, Var w_re, Var w_im, std::size_t stride, std::size_t pad) {
  const auto& ws = t.shape(w_re);
  detail::expect_same(ws, t.shape(w_im), "complex_conv1d");
  detail::expect_rank(ws, 3, "complex_conv1d");
  const std::size_t co = ws[0], ci = ws[1], k = ws[2];
  if (t.shape(x).size() != 3 || t.shape(x)[1] != 2 * ci)
    throw ShapeError("complex_conv1d: input " + shape_string(t.shape(x)) + " needs " + std::to_string(2 * ci) +
                     " channels (real and imaginary planes)");
  const std::size_t r = ci * k;  // row length of one real kernel block
  auto block = std::make_shared<std::vector<T>>(4 * co * r);
  const auto& wr = t.value(w_re).data;
  const auto& wi = t.value(w_im).data;
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t q = 0; q < r; ++q) {
      (*block)[o * 2 * r + q] = wr[o * r + q];
      (*block)[o * 2 * r + r + q] = -wi[o * r + q];
      (*block)[(co + o) * 2 * r + q] = wi[o * r + q];
      (*block)[(co + o) * 2 * r + r + q] = wr[o * r + q];
    }
  const auto g = detail::geom_1d(t.shape(x), Shape{2 * co, 2 * ci, k}, stride, pad, "complex_conv1d");
  Tensor<T> y({g.n, g.c_out, g.ow});
  detail::conv_forward(g, t.value(x).ptr(), block->data(), y.ptr());
  const bool rg = t.requires_grad(x) || t.requires_grad(w_re) || t.requires_grad(w_im);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, w_re, w_im, out, g, block, co, r] {
      const bool need_w = t.requires_grad(w_re) || t.requires_grad(w_im);
      std::vector<T> dblock(need_w ? block->size() : 0, T{0});
      detail::conv_backward(g, t.value(x).ptr(), block->data(), t.grad(out).data(),
                            need_w ? dblock.data() : nullptr, t.requires_grad(x) ? t.grad(x).data() : nullptr);
      if (!need_w) return;
      auto at = [&](std::size_t row, std::size_t col) { return dblock[row * 2 * r + col]; };
      if (t.requires_grad(w_re)) {
        auto& gr = t.grad(w_re);
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t q = 0; q < r; ++q) gr[o * r + q] += at(o, q) + at(co + o, r + q);
      }
      if (t.requires_grad(w_im)) {
        auto& gi = t.grad(w_im);
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t q = 0; q < r; ++q) gi[o * r + q] += at(co + o, q) - at(o, r + q);
      }
    };
  return out;
}

/// x [N, Cin, H, W], w [Cout, Cin, kh, kw] -> [N, Cout, OH, OW].
template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, std::optional<Var> b, std::size_t stride, std::size_t pad) {
  const auto g = detail::geom_2d(t.shape(x), t.shape(w), stride, pad, "conv2d");
  Tensor<T> y({g.n, g.c_out, g.oh, g.ow});
  detail::conv_forward(g, t.value(x).ptr(), t.value(w).ptr(), y.ptr());
  if (b) detail::add_channel_bias(y.ptr(), t.value(*b).ptr(), g.n, g.c_out, g.positions);
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || (b && t.requires_grad(*b));
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, w, b, out, g] {
      const T* dy = t.grad(out).data();
      detail::conv_backward(g, t.value(x).ptr(), t.value(w).ptr(), dy,
                            t.requires_grad(w) ? t.grad(w).data() : nullptr,
                            t.requires_grad(x) ? t.grad(x).data() : nullptr);
      if (b && t.requires_grad(*b)) detail::channel_bias_grad(dy, t.grad(*b).data(), g.n, g.c_out, g.positions);
    };
  return out;
}

/// Per-channel k x k convolution: x [N, C, H, W], w [C, 1, k, k].
template <typename T>
Var depthwise_conv2d(Tape<T>& t, Var x, Var w, std::size_t stride, std::size_t pad) {
  const auto& xs = t.shape(x);
  const auto& ws = t.shape(w);
  detail::expect_rank(xs, 4, "depthwise_conv2d");
  detail::expect_rank(ws, 4, "depthwise_conv2d");
  if (ws[0] != xs[1] || ws[1] != 1 || ws[2] != ws[3])
    throw ShapeError("depthwise_conv2d: kernel " + shape_string(ws) + " for input " + shape_string(xs));
  const std::size_t n = xs[0], c = xs[1], h = xs[2], wd = xs[3], k = ws[2];
  const std::size_t oh = detail::conv_out(h, k, stride, pad), ow = detail::conv_out(wd, k, stride, pad);
  Tensor<T> y({n, c, oh, ow});
  const T* xv = t.value(x).ptr();
  const T* wv = t.value(w).ptr();
  const auto sp = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* xi = xv + i * h * wd;
    const T* wk = wv + (i % c) * k * k;
    T* yi = y.ptr() + i * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T acc{0};
        for (std::size_t a = 0; a < k; ++a) {
          const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(oy * stride + a) - sp;
          if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t bb = 0; bb < k; ++bb) {
            const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(ox * stride + bb) - sp;
            if (px < 0 || px >= static_cast<std::ptrdiff_t>(wd)) continue;
            acc += wk[a * k + bb] * xi[static_cast<std::size_t>(py) * wd + static_cast<std::size_t>(px)];
          }
        }
        yi[oy * ow + ox] = acc;
      }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, w, out, n, c, h, wd, k, oh, ow, stride, sp] {
      const T* xv = t.value(x).ptr();
      const T* wv = t.value(w).ptr();
      const T* gy = t.grad(out).data();
      T* gx = t.requires_grad(x) ? t.grad(x).data() : nullptr;
      T* gw = t.requires_grad(w) ? t.grad(w).data() : nullptr;
      for (std::size_t i = 0; i < n * c; ++i) {
        const T* xi = xv + i * h * wd;
        const T* wk = wv + (i % c) * k * k;
        const T* gi = gy + i * oh * ow;
        T* gxi = gx ? gx + i * h * wd : nullptr;
        T* gwk = gw ? gw + (i % c) * k * k : nullptr;
        for (std::size_t oy = 0; oy < oh; ++oy)
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const T go = gi[oy * ow + ox];
            if (go == T{0}) continue;
            for (std::size_t a = 0; a < k; ++a) {
              const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(oy * stride + a) - sp;
              if (py < 0 || py >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t bb = 0; bb < k; ++bb) {
                const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(ox * stride + bb) - sp;
                if (px < 0 || px >= static_cast<std::ptrdiff_t>(wd)) continue;
                const std::size_t xi_idx = static_cast<std::size_t>(py) * wd + static_cast<std::size_t>(px);
                if (gxi) gxi[xi_idx] += go * wk[a * k + bb];
                if (gwk) gwk[a * k + bb] += go * xi[xi_idx];
              }
            }
          }
      }
    };
  return out;
}

// ---------------------------------------------------------------------------
// Normalization, pooling, gating

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t c = 0) : running_mean(c, T{0}), running_var(c, T{1}) {}
};

/// Per-channel batch normalization of [N, C, ...]. In training mode the batch
/// statistics are used and the running estimates updated (unbiased variance);
/// otherwise the running estimates are used.
template <typename T>
Var batchnorm(Tape<T>& t, Var x, Var gamma, Var beta, BatchNormState<T>& st, bool training) {
  const auto& xs = t.shape(x);
  if (xs.size() < 2) throw ShapeError("batchnorm: input needs a channel dimension");
  const std::size_t n = xs[0], c = xs[1], p = detail::spatial_size(xs);
  if (t.shape(gamma) != Shape{c} || t.shape(beta) != Shape{c} || st.running_mean.size() != c)
    throw ShapeError("batchnorm: parameters do not match " + std::to_string(c) + " channels");
  const std::size_t m = n * p;
  if (training && m < 2) throw ShapeError("batchnorm: training needs more than one value per channel");
  const auto& xv = t.value(x).data;
  const auto& gv = t.value(gamma).data;
  const auto& bv = t.value(beta).data;
  std::vector<T> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k) s += xv[(i * c + ch) * p + k];
      const double mu = s / static_cast<double>(m);
      double v = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p; ++k) {
          const double d = xv[(i * c + ch) * p + k] - mu;
          v += d * d;
        }
      const double var = v / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(st.eps)));
      st.running_mean[ch] = (T{1} - st.momentum) * st.running_mean[ch] + st.momentum * static_cast<T>(mu);
      st.running_var[ch] = (T{1} - st.momentum) * st.running_var[ch] +
                           st.momentum * static_cast<T>(v / static_cast<double>(m - 1));
    } else {
      mean[ch] = st.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(st.running_var[ch] + st.eps);
    }
  }
  Tensor<T> xhat(xs), y(xs);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < p; ++k) {
        const std::size_t idx = (i * c + ch) * p + k;
        xhat.data[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
        y.data[idx] = gv[ch] * xhat.data[idx] + bv[ch];
      }
  const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, gamma, beta, out, n, c, p, m, training, inv_std = std::move(inv_std),
                            xhat = std::move(xhat)] {
      const auto& gy = t.grad(out);
      const auto& gv = t.value(gamma).data;
      std::vector<T> sum_g(c, T{0}), sum_gx(c, T{0});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t k = 0; k < p; ++k) {
            const std::size_t idx = (i * c + ch) * p + k;
            sum_g[ch] += gy[idx];
            sum_gx[ch] += gy[idx] * xhat.data[idx];
          }
      if (t.requires_grad(gamma)) {
        auto& gg = t.grad(gamma);
        for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gx[ch];
      }
      if (t.requires_grad(beta)) {
        auto& gb = t.grad(beta);
        for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
      }
      if (t.requires_grad(x)) {
        auto& gx = t.grad(x);
        const T inv_m = T{1} / static_cast<T>(m);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t k = 0; k < p; ++k) {
              const std::size_t idx = (i * c + ch) * p + k;
              if (training)
                gx[idx] += gv[ch] * inv_std[ch] * (gy[idx] - inv_m * sum_g[ch] - xhat.data[idx] * inv_m * sum_gx[ch]);
              else
                gx[idx] += gv[ch] * inv_std[ch] * gy[idx];
            }
      }
    };
  return out;
}

/// Mean over all trailing dims: [N, C, ...] -> [N, C].
template <typename T>
Var global_avg_pool(Tape<T>& t, Var x) {
  const auto& xs = t.shape(x);
  if (xs.size() < 3) throw ShapeError("global_avg_pool: expected [N, C, ...], got " + shape_string(xs));
  const std::size_t n = xs[0], c = xs[1], p = detail::spatial_size(xs);
  Tensor<T> y({n, c});
  const auto& xv = t.value(x).data;
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc{0};
    for (std::size_t k = 0; k < p; ++k) acc += xv[i * p + k];
    y.data[i] = acc / static_cast<T>(p);
  }
  const bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, out, n, c, p] {
      const auto& g = t.grad(out);
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < n * c; ++i) {
        const T v = g[i] / static_cast<T>(p);
        for (std::size_t k = 0; k < p; ++k) gx[i * p + k] += v;
      }
    };
  return out;
}

/// y[n, c, ...] = x[n, c, ...] * s[n, c].
template <typename T>
Var channel_scale(Tape<T>& t, Var x, Var s) {
  const auto& xs = t.shape(x);
  if (xs.size() < 3 || t.shape(s) != Shape{xs[0], xs[1]})
    throw ShapeError("channel_scale: scale " + shape_string(t.shape(s)) + " for input " + shape_string(xs));
  const std::size_t nc = xs[0] * xs[1], p = detail::spatial_size(xs);
  Tensor<T> y = t.value(x);
  const auto& sv = t.value(s).data;
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t k = 0; k < p; ++k) y.data[i * p + k] *= sv[i];
  const bool rg = t.requires_grad(x) || t.requires_grad(s);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, s, out, nc, p] {
      const auto& g = t.grad(out);
      const auto& xv = t.value(x).data;
      const auto& sv = t.value(s).data;
      if (t.requires_grad(x)) {
        auto& gx = t.grad(x);
        for (std::size_t i = 0; i < nc; ++i)
          for (std::size_t k = 0; k < p; ++k) gx[i * p + k] += g[i * p + k] * sv[i];
      }
      if (t.requires_grad(s)) {
        auto& gs = t.grad(s);
        for (std::size_t i = 0; i < nc; ++i) {
          T acc{0};
          for (std::size_t k = 0; k < p; ++k) acc += g[i * p + k] * xv[i * p + k];
          gs[i] += acc;
        }
      }
    };
  return out;
}

/// |z| = sqrt(re^2 + im^2 + eps) of a complex map [N, 2C, ...] -> [N, C, ...].
template <typename T>
Var modulus(Tape<T>& t, Var x, T eps = T(1e-8)) {
  const auto& xs = t.shape(x);
  if (xs.size() < 2 || xs[1] % 2 != 0) throw ShapeError("modulus: expected a complex map, got " + shape_string(xs));
  Shape ys = xs;
  ys[1] /= 2;
  const std::size_t n = xs[0], c = ys[1], p = detail::spatial_size(xs);
  Tensor<T> y(ys);
  const auto& xv = t.value(x).data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t k = 0; k < p; ++k) {
        const T re = xv[(i * 2 * c + ch) * p + k], im = xv[(i * 2 * c + c + ch) * p + k];
        y.data[(i * c + ch) * p + k] = std::sqrt(re * re + im * im + eps);
      }
  const bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, out, n, c, p] {
      const auto& g = t.grad(out);
      const auto& yv = t.value(out).data;
      const auto& xv = t.value(x).data;
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t k = 0; k < p; ++k) {
            const std::size_t o = (i * c + ch) * p + k;
            const std::size_t r = (i * 2 * c + ch) * p + k, m = (i * 2 * c + c + ch) * p + k;
            gx[r] += g[o] * xv[r] / yv[o];
            gx[m] += g[o] * xv[m] / yv[o];
          }
    };
  return out;
}

/// Inverted dropout with a counter-based mask: element i of the tensor is
/// kept iff uniform(key, i) >= p. Identity outside training.
template <typename T>
Var dropout(Tape<T>& t, Var x, double p, std::uint64_t key, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  CounterRng rng(key);
  const auto& xv = t.value(x);
  auto mask = std::make_shared<std::vector<T>>(xv.size());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : *mask) m = rng.uniform() >= p ? keep : T{0};
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= (*mask)[i];
  const bool rg = t.requires_grad(x);
  Var out = t.push(std::move(y), rg);
  if (rg)
    t.node(out).backward = [&t, x, out, mask] {
      const auto& g = t.grad(out);
      auto& gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    };
  return out;
}

// ---------------------------------------------------------------------------
// Loss

/// Row-wise softmax of [N, C] logits (max-shifted).
template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<T> p(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * c;
    const T mx = *std::max_element(z, z + c);
    T s{0};
    for (std::size_t k = 0; k < c; ++k) s += (p[i * c + k] = std::exp(z[k] - mx));
    for (std::size_t k = 0; k < c; ++k) p[i * c + k] /= s;
  }
  return p;
}

/// Mean categorical cross-entropy of [N, C] logits against integer labels.
template <typename T>
Var softmax_xent(Tape<T>& t, Var logits, const std::vector<int>& labels) {
  const auto& ls = t.shape(logits);
  detail::expect_rank(ls, 2, "softmax_xent");
  const std::size_t n = ls[0], c = ls[1];
  if (labels.size() != n) throw ShapeError("softmax_xent: label count differs from batch size");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c) throw ShapeError("softmax_xent: label out of range");
  auto probs = std::make_shared<std::vector<T>>(softmax_rows(t.value(logits)));
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = t.value(logits).ptr() + i * c;
    const T mx = *std::max_element(z, z + c);
    T s{0};
    for (std::size_t k = 0; k < c; ++k) s += std::exp(z[k] - mx);
    loss += -(z[static_cast<std::size_t>(labels[i])] - mx - std::log(s));
  }
  loss /= static_cast<T>(n);
  const bool rg = t.requires_grad(logits);
  Var out = t.push(Tensor<T>({1}, std::vector<T>{loss}), rg);
  if (rg)
    t.node(out).backward = [&t, logits, out, probs, labels, n, c] {
      const T g = t.grad(out)[0] / static_cast<T>(n);
      auto& gl = t.grad(logits);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k)
          gl[i * c + k] += g * ((*probs)[i * c + k] - (static_cast<int>(k) == labels[i] ? T{1} : T{0}));
    };
  return out;
}

/// Throws NumericError naming `layer` if v holds a NaN or infinity.
template <typename T>
void check_finite(const Tape<T>& t, Var v, const std::string& layer) {
  for (T e : t.value(v).data)
    if (!std::isfinite(e)) throw NumericError("non-finite activation in layer '" + layer + "'");
}

}  // namespace jamlab::nn
