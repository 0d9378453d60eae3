#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "polypdam/autograd.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

namespace detail {

template <class T>
void expect_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <class T>
T stable_sigmoid(T v) {
  if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

}  // namespace detail

/// 2D cross-correlation with zero padding. x (Cin,H,W), w (Cout,Cin,k,k), b (Cout).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t padding) {
  Tensor<T> out = kernels::conv2d_forward(x.value(), w.value(), b.value(), padding);
  return record(std::move(out), "conv2d", {x, w, b}, [padding](Node<T>& n) {
    kernels::conv2d_backward(n.parent_value(0), n.parent_value(1), n.parent_value(2), padding, n.grad,
                             n.parent_grad(0), n.parent_grad(1), n.parent_grad(2));
  });
}

/// 3D cross-correlation with zero padding. x (Cin,D,H,W), w (Cout,Cin,k,k,k), b (Cout).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t padding) {
  Tensor<T> out = kernels::conv3d_forward(x.value(), w.value(), b.value(), padding);
  return record(std::move(out), "conv3d", {x, w, b}, [padding](Node<T>& n) {
    kernels::conv3d_backward(n.parent_value(0), n.parent_value(1), n.parent_value(2), padding, n.grad,
                             n.parent_grad(0), n.parent_grad(1), n.parent_grad(2));
  });
}

/// Bilinear resize of (C,H,W) with half-pixel centers.
template <class T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t out_h, std::size_t out_w) {
  Tensor<T> out = kernels::bilinear_forward(x.value(), out_h, out_w);
  return record(std::move(out), "bilinear_resize", {x}, [](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) kernels::bilinear_backward(n.grad, *gx);
  });
}

template <class T>
Var<T> permute(const Var<T>& x, std::vector<std::size_t> order) {
  Tensor<T> out = kernels::permute_forward(x.value(), order);
  return record(std::move(out), "permute", {x}, [order = std::move(order)](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      T* g = gx->data();
      const T* go = n.grad.data();
      kernels::for_each_permuted(n.parent_value(0).shape(), order,
                                 [&](std::size_t dst, std::size_t src) { g[src] += go[dst]; });
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  return record(std::move(out), "relu", {x}, [](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      const auto& in = n.parent_value(0);
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] > T{0}) (*gx)[i] += n.grad[i];
      }
    }
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = detail::stable_sigmoid(v);
  return record(std::move(out), "sigmoid", {x}, [](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.value.size(); ++i) {
        const T s = n.value[i];
        (*gx)[i] += n.grad[i] * s * (T{1} - s);
      }
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::expect_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return record(std::move(out), "add", {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = n.parent_grad(p)) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::expect_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return record(std::move(out), "mul", {a, b}, [](Node<T>& n) {
    const auto& av = n.parent_value(0);
    const auto& bv = n.parent_value(1);
    if (auto* ga = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += n.grad[i] * bv[i];
    }
    if (auto* gb = n.parent_grad(1)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i] += n.grad[i] * av[i];
    }
  });
}

/// Multiplication by a constant.
template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v *= factor;
  return record(std::move(out), "scale", {x}, [factor](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += factor * n.grad[i];
    }
  });
}

/// Stride-1 average pooling with zero padding counted in the divisor.
/// Only shape-preserving padding, (k-1)/2, is supported.
template <class T>
Var<T> avg_pool2d(const Var<T>& x, std::size_t k, std::size_t padding) {
  if (k % 2 == 0) throw ShapeError("avg_pool2d: kernel size must be odd, got " + std::to_string(k));
  if (padding != (k - 1) / 2) {
    throw ShapeError("avg_pool2d: padding must be (k-1)/2 = " + std::to_string((k - 1) / 2));
  }
  Tensor<T> out = kernels::box_mean(x.value(), k);
  return record(std::move(out), "avg_pool2d", {x}, [k](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      const Tensor<T> g = kernels::box_mean(n.grad, k);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
  });
}

/// Sum of all elements (float64 accumulation) as a rank-0 tensor.
template <class T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (T v : x.value().values()) s += v;
  return record(Tensor<T>::scalar(static_cast<T>(s)), "sum", {x}, [](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      const T g = n.grad[0];
      for (T& v : gx->values()) v += g;
    }
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  double s = 0;
  for (T v : x.value().values()) s += v;
  const std::size_t count = x.value().size();
  return record(Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(count))), "mean", {x},
                [count](Node<T>& n) {
                  if (auto* gx = n.parent_grad(0)) {
                    const T g = n.grad[0] / static_cast<T>(count);
                    for (T& v : gx->values()) v += g;
                  }
                });
}

/// Same elements under a new shape.
template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return record(std::move(out), "reshape", {x}, [](Node<T>& n) {
    if (auto* gx = n.parent_grad(0)) {
      for (std::size_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> unsqueeze(const Var<T>& x, std::size_t axis) {
  Shape s = x.shape();
  if (axis > s.size()) {
    throw ShapeError("unsqueeze: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  return reshape(x, std::move(s));
}

template <class T>
Var<T> squeeze(const Var<T>& x, std::size_t axis) {
  Shape s = x.shape();
  if (axis >= s.size() || s[axis] != 1) {
    throw ShapeError("squeeze: axis " + std::to_string(axis) + " is not a unit axis of " + to_string(s));
  }
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(x, std::move(s));
}

/// Concatenation along `axis`; all other extents must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == first.size();
    for (std::size_t a = 0; ok && a < s.size(); ++a) ok = a == axis || s[a] == first[a];
    if (!ok) throw ShapeError("concat: " + to_string(s) + " does not conform to " + to_string(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= first[a];
  for (std::size_t a = axis + 1; a < first.size(); ++a) inner *= first[a];
  const std::size_t out_block = out_shape[axis] * inner;

  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const std::size_t block = x.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.value().data() + o * block, block, out.data() + o * out_block + offset);
    }
    offset += block;
  }
  return record(std::move(out), "concat", xs, [outer, inner, out_block, axis](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      const std::size_t block = n.parent_value(p).shape()[axis] * inner;
      if (auto* g = n.parent_grad(p)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = n.grad.data() + o * out_block + off;
          T* dst = g->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      off += block;
    }
  });
}

/// Per-channel standardization of (C, ...): subtract the channel mean and
/// divide by (population std + eps). A constant channel maps to zeros.
template <class T>
Var<T> channel_standardize(const Var<T>& x, double eps = 1e-5) {
  const Tensor<T>& in = x.value();
  if (in.rank() < 2) throw ShapeError("channel_standardize needs rank >= 2, got " + to_string(in.shape()));
  const std::size_t C = in.dim(0);
  const std::size_t n = in.size() / C;
  std::vector<double> mu(C), sd(C);
  Tensor<T> out(in.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = in.data() + c * n;
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    mu[c] = s / static_cast<double>(n);
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) v += (p[i] - mu[c]) * (p[i] - mu[c]);
    sd[c] = std::sqrt(v / static_cast<double>(n));
    const double denom = sd[c] + eps;
    T* o = out.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) o[i] = static_cast<T>((p[i] - mu[c]) / denom);
  }
  return record(std::move(out), "channel_standardize", {x}, [C, n, mu, sd, eps](Node<T>& node) {
    auto* gx = node.parent_grad(0);
    if (!gx) return;
    const auto& xin = node.parent_value(0);
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = xin.data() + c * n;
      const T* g = node.grad.data() + c * n;
      T* gi = gx->data() + c * n;
      const double s = sd[c] + eps;
      double gsum = 0, gd = 0;
      for (std::size_t i = 0; i < n; ++i) {
        gsum += g[i];
        gd += g[i] * (p[i] - mu[c]);
      }
      const double gmean = gsum / static_cast<double>(n);
      // d(sd)/dx_i = (x_i - mu) / (n * sd); undefined at sd = 0, taken as 0.
      const double k = sd[c] > 0 ? gd / (static_cast<double>(n) * sd[c] * s * s) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gi[i] += static_cast<T>((g[i] - gmean) / s - k * (p[i] - mu[c]));
      }
    }
  });
}

/// Thresholds to {0,1} (value >= threshold -> 1). Not differentiable; a
/// differentiated input is rejected.
template <class T>
Var<T> binarize(const Var<T>& x, T threshold) {
  require_no_grad(x, "binarize");
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = v >= threshold ? T{1} : T{0};
  return Var<T>::constant(std::move(out));
}

}  // namespace polypdam
