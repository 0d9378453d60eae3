#pragma once

// Forward and adjoint kernels on plain tensors. The autograd layer in
// ops.hpp wraps these; nothing here records a graph.
//
// Summation order per output element is fixed (input channel, then kernel
// taps in row-major order), so results do not depend on scheduling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "polypdam/error.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam::kernels {

namespace detail {

inline void expect_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " + to_string(s));
  }
}

/// Output positions o in [lo, hi) whose input index o + tap - pad is valid.
struct TapRange {
  std::size_t lo, hi;
};

inline TapRange tap_range(std::size_t out_len, std::size_t in_len, std::size_t tap, std::size_t pad) {
  // i = o + tap - pad must satisfy 0 <= i < in_len.
  const long long shift = static_cast<long long>(tap) - static_cast<long long>(pad);
  long long lo = std::max<long long>(0, -shift);
  long long hi = std::min<long long>(static_cast<long long>(out_len), static_cast<long long>(in_len) - shift);
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

struct ConvGeometry {
  std::size_t cin, cout, k, pad;
  std::vector<std::size_t> in_extent;   // spatial extents of the input
  std::vector<std::size_t> out_extent;  // spatial extents of the output
};

/// Validates a convolution over `spatial` axes: x is (Cin, *spatial),
/// w is (Cout, Cin, k, ..., k), b is (Cout).
template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad,
                           std::size_t spatial, const char* op) {
  const std::string name(op);
  detail::expect_rank(x.shape(), spatial + 1, (name + " input").c_str());
  detail::expect_rank(w.shape(), spatial + 2, (name + " weight").c_str());
  detail::expect_rank(b.shape(), 1, (name + " bias").c_str());
  ConvGeometry g{x.dim(0), w.dim(0), w.dim(2), pad, {}, {}};
  if (w.dim(1) != g.cin) {
    throw ShapeError(name + ": input has " + std::to_string(g.cin) + " channels but weight " +
                     to_string(w.shape()) + " expects " + std::to_string(w.dim(1)));
  }
  for (std::size_t a = 2; a < w.rank(); ++a) {
    if (w.dim(a) != g.k) throw ShapeError(name + ": kernel must be cubic/square, got " + to_string(w.shape()));
  }
  if (g.k % 2 == 0) throw ShapeError(name + ": kernel size must be odd, got " + std::to_string(g.k));
  if (b.dim(0) != g.cout) {
    throw ShapeError(name + ": bias " + to_string(b.shape()) + " does not match " + std::to_string(g.cout) +
                     " output channels");
  }
  for (std::size_t a = 0; a < spatial; ++a) {
    const std::size_t n = x.dim(a + 1);
    if (n + 2 * pad < g.k) {
      throw ShapeError(name + ": spatial extent " + std::to_string(n) + " too small for kernel " +
                       std::to_string(g.k) + " with padding " + std::to_string(pad));
    }
    g.in_extent.push_back(n);
    g.out_extent.push_back(n + 2 * pad - g.k + 1);
  }
  return g;
}

// ---------------------------------------------------------------------------
// conv2d

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad) {
  const auto g = conv_geometry(x, w, b, pad, 2, "conv2d");
  const std::size_t H = g.in_extent[0], W = g.in_extent[1];
  const std::size_t Ho = g.out_extent[0], Wo = g.out_extent[1];
  const std::size_t k = g.k;
  Tensor<T> out({g.cout, Ho, Wo});
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* o = out.data() + co * Ho * Wo;
    std::fill(o, o + Ho * Wo, b[co]);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* in = x.data() + ci * H * W;
      const T* wk = w.data() + (co * g.cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto ry = detail::tap_range(Ho, H, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto rx = detail::tap_range(Wo, W, kx, pad);
          const T wv = wk[ky * k + kx];
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            T* orow = o + oy * Wo + rx.lo;
            const T* irow = in + (oy + ky - pad) * W + (rx.lo + kx - pad);
            for (std::size_t j = 0; j < rx.hi - rx.lo; ++j) orow[j] += wv * irow[j];
          }
        }
      }
    }
  }
  return out;
}

/// Accumulates input, weight and bias gradients (any pointer may be null).
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const auto g = conv_geometry(x, w, b, pad, 2, "conv2d");
  const std::size_t H = g.in_extent[0], W = g.in_extent[1];
  const std::size_t Ho = g.out_extent[0], Wo = g.out_extent[1];
  const std::size_t k = g.k;
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* go = gout.data() + co * Ho * Wo;
    if (gb) {
      double s = 0;
      for (std::size_t i = 0; i < Ho * Wo; ++i) s += go[i];
      (*gb)[co] += static_cast<T>(s);
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* in = x.data() + ci * H * W;
      T* gin = gx ? gx->data() + ci * H * W : nullptr;
      const std::size_t wbase = (co * g.cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto ry = detail::tap_range(Ho, H, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto rx = detail::tap_range(Wo, W, kx, pad);
          const T wv = w[wbase + ky * k + kx];
          T acc{};
          for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
            const T* grow = go + oy * Wo + rx.lo;
            const std::size_t ioff = (oy + ky - pad) * W + (rx.lo + kx - pad);
            const T* irow = in + ioff;
            const std::size_t n = rx.hi - rx.lo;
            if (gw) {
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * irow[j];
            }
            if (gin) {
              T* girow = gin + ioff;
              for (std::size_t j = 0; j < n; ++j) girow[j] += wv * grow[j];
            }
          }
          if (gw) (*gw)[wbase + ky * k + kx] += acc;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// conv3d

template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad) {
  const auto g = conv_geometry(x, w, b, pad, 3, "conv3d");
  const std::size_t D = g.in_extent[0], H = g.in_extent[1], W = g.in_extent[2];
  const std::size_t Do = g.out_extent[0], Ho = g.out_extent[1], Wo = g.out_extent[2];
  const std::size_t k = g.k;
  Tensor<T> out({g.cout, Do, Ho, Wo});
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* o = out.data() + co * Do * Ho * Wo;
    std::fill(o, o + Do * Ho * Wo, b[co]);
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* in = x.data() + ci * D * H * W;
      const T* wk = w.data() + (co * g.cin + ci) * k * k * k;
      for (std::size_t kz = 0; kz < k; ++kz) {
        const auto rz = detail::tap_range(Do, D, kz, pad);
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto ry = detail::tap_range(Ho, H, ky, pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto rx = detail::tap_range(Wo, W, kx, pad);
            const T wv = wk[(kz * k + ky) * k + kx];
            for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
              for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                T* orow = o + (oz * Ho + oy) * Wo + rx.lo;
                const T* irow = in + ((oz + kz - pad) * H + (oy + ky - pad)) * W + (rx.lo + kx - pad);
                for (std::size_t j = 0; j < rx.hi - rx.lo; ++j) orow[j] += wv * irow[j];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <class T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad,
                     const Tensor<T>& gout, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const auto g = conv_geometry(x, w, b, pad, 3, "conv3d");
  const std::size_t D = g.in_extent[0], H = g.in_extent[1], W = g.in_extent[2];
  const std::size_t Do = g.out_extent[0], Ho = g.out_extent[1], Wo = g.out_extent[2];
  const std::size_t k = g.k;
  const std::size_t out_plane = Do * Ho * Wo;
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* go = gout.data() + co * out_plane;
    if (gb) {
      double s = 0;
      for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
      (*gb)[co] += static_cast<T>(s);
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const T* in = x.data() + ci * D * H * W;
      T* gin = gx ? gx->data() + ci * D * H * W : nullptr;
      const std::size_t wbase = (co * g.cin + ci) * k * k * k;
      for (std::size_t kz = 0; kz < k; ++kz) {
        const auto rz = detail::tap_range(Do, D, kz, pad);
        for (std::size_t ky = 0; ky < k; ++ky) {
          const auto ry = detail::tap_range(Ho, H, ky, pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto rx = detail::tap_range(Wo, W, kx, pad);
            const std::size_t widx = wbase + (kz * k + ky) * k + kx;
            const T wv = w[widx];
            T acc{};
            for (std::size_t oz = rz.lo; oz < rz.hi; ++oz) {
              for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                const T* grow = go + (oz * Ho + oy) * Wo + rx.lo;
                const std::size_t ioff = ((oz + kz - pad) * H + (oy + ky - pad)) * W + (rx.lo + kx - pad);
                const T* irow = in + ioff;
                const std::size_t n = rx.hi - rx.lo;
                if (gw) {
                  for (std::size_t j = 0; j < n; ++j) acc += grow[j] * irow[j];
                }
                if (gin) {
                  T* girow = gin + ioff;
                  for (std::size_t j = 0; j < n; ++j) girow[j] += wv * grow[j];
                }
              }
            }
            if (gw) (*gw)[widx] += acc;
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// bilinear resize, half-pixel centers

/// Source taps along one axis: out[i] = (1 - frac[i]) * in[lo[i]] + frac[i] * in[hi[i]].
struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

inline AxisTaps axis_taps(std::size_t in_len, std::size_t out_len) {
  AxisTaps t;
  t.lo.resize(out_len);
  t.hi.resize(out_len);
  t.frac.resize(out_len);
  const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
  const double max_src = static_cast<double>(in_len - 1);
  for (std::size_t i = 0; i < out_len; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, max_src);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in_len - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

template <class T>
Tensor<T> bilinear_forward(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::expect_rank(x.shape(), 3, "bilinear_resize input");
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output size must be positive");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const AxisTaps ty = axis_taps(H, out_h), tx = axis_taps(W, out_w);
  Tensor<T> out({C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    const T* in = x.data() + c * H * W;
    T* o = out.data() + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = in + ty.lo[y] * W;
      const T* r1 = in + ty.hi[y] * W;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const T fx = static_cast<T>(tx.frac[xo]);
        const T top = (T{1} - fx) * r0[tx.lo[xo]] + fx * r0[tx.hi[xo]];
        const T bot = (T{1} - fx) * r1[tx.lo[xo]] + fx * r1[tx.hi[xo]];
        o[y * out_w + xo] = (T{1} - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

template <class T>
void bilinear_backward(const Tensor<T>& gout, Tensor<T>& gx) {
  const std::size_t C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
  const std::size_t out_h = gout.dim(1), out_w = gout.dim(2);
  const AxisTaps ty = axis_taps(H, out_h), tx = axis_taps(W, out_w);
  for (std::size_t c = 0; c < C; ++c) {
    T* gi = gx.data() + c * H * W;
    const T* go = gout.data() + c * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      T* r0 = gi + ty.lo[y] * W;
      T* r1 = gi + ty.hi[y] * W;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const T fx = static_cast<T>(tx.frac[xo]);
        const T g = go[y * out_w + xo];
        const T gt = (T{1} - fy) * g, gb = fy * g;
        r0[tx.lo[xo]] += (T{1} - fx) * gt;
        r0[tx.hi[xo]] += fx * gt;
        r1[tx.lo[xo]] += (T{1} - fx) * gb;
        r1[tx.hi[xo]] += fx * gb;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// average pooling, stride 1, count-include-pad

/// Box mean with zero padding; the divisor is always k*k. The operator is
/// self-adjoint, so the same routine computes its gradient.
template <class T>
Tensor<T> box_mean(const Tensor<T>& x, std::size_t k) {
  detail::expect_rank(x.shape(), 3, "avg_pool2d input");
  if (k % 2 == 0) throw ShapeError("avg_pool2d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const long long r = static_cast<long long>(k / 2);
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor<T> out(x.shape());
  std::vector<double> rows(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    const T* in = x.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (long long xo = 0; xo < static_cast<long long>(W); ++xo) {
        double s = 0;
        const long long lo = std::max(0LL, xo - r), hi = std::min<long long>(W - 1, xo + r);
        for (long long i = lo; i <= hi; ++i) s += in[y * W + i];
        rows[y * W + xo] = s;
      }
    }
    T* o = out.data() + c * H * W;
    for (long long y = 0; y < static_cast<long long>(H); ++y) {
      const long long lo = std::max(0LL, y - r), hi = std::min<long long>(H - 1, y + r);
      for (std::size_t xo = 0; xo < W; ++xo) {
        double s = 0;
        for (long long i = lo; i <= hi; ++i) s += rows[i * W + xo];
        o[y * W + xo] = static_cast<T>(s * inv);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// permute

inline void validate_permutation(const std::vector<std::size_t>& order, std::size_t rank) {
  if (order.size() != rank) {
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for rank " +
                     std::to_string(rank));
  }
  std::vector<bool> used(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || used[a]) throw ShapeError("permute: order is not a permutation of 0..rank-1");
    used[a] = true;
  }
}

/// Calls f(out_index, in_index) for every element of the permuted tensor.
template <class F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& order, F&& f) {
  const std::size_t rank = in_shape.size();
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(rank);
  std::vector<std::size_t> step(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[order[i]];
    step[i] = in_strides[order[i]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t dst = 0; dst < n; ++dst) {
    f(dst, src);
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < out_shape[a]) {
        src += step[a];
        break;
      }
      src -= step[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
}

template <class T>
Tensor<T> permute_forward(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  validate_permutation(order, x.rank());
  Shape out_shape(x.rank());
  for (std::size_t i = 0; i < x.rank(); ++i) out_shape[i] = x.dim(order[i]);
  Tensor<T> out(out_shape);
  const T* in = x.data();
  T* o = out.data();
  for_each_permuted(x.shape(), order, [&](std::size_t dst, std::size_t src) { o[dst] = in[src]; });
  return out;
}

}  // namespace polypdam::kernels
