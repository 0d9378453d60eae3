#pragma once

// Boundary-weighted BCE + IoU with four-scale deep supervision.
//
// Pixel weights emphasize boundaries: w = 1 + 5 |avgpool31(g) - g|.
// Targets for the downsampled masks are the ground truth bilinearly resized
// to each mask's resolution and re-binarized at 0.5.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "polypdam/autograd.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/model.hpp"
#include "polypdam/ops.hpp"

namespace polypdam {

inline constexpr std::size_t kWeightPool = 31;
inline constexpr double kWeightGain = 5.0;
inline constexpr double kProbEps = 1e-7;
inline constexpr double kTargetThreshold = 0.5;

namespace detail {

template <class T>
void expect_binary(const Tensor<T>& g, const char* what) {
  for (T v : g.values()) {
    if (v != T{0} && v != T{1}) throw std::invalid_argument(std::string(what) + " must be binary (0 or 1)");
  }
}

template <class T>
void expect_loss_shapes(const Var<T>& p, const Tensor<T>& g, const Tensor<T>& w, const char* op) {
  if (p.shape() != g.shape() || p.shape() != w.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + to_string(p.shape()) + ", target " + to_string(g.shape()) +
                     " and weights " + to_string(w.shape()) + " must match");
  }
}

}  // namespace detail

/// Per-pixel boundary weights in [1, 6] for a binary (1,H,W) mask.
template <class T>
Tensor<T> weight_map(const Tensor<T>& g) {
  detail::expect_binary(g, "weight_map input");
  Tensor<T> pooled = kernels::box_mean(g, kWeightPool);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    pooled[i] = static_cast<T>(1.0 + kWeightGain * std::abs(static_cast<double>(pooled[i]) - g[i]));
  }
  return pooled;
}

/// sum w * bce(clamp(p), g) / sum w.
template <class T>
Var<T> wbce(const Var<T>& p, const Tensor<T>& g, const Tensor<T>& w) {
  detail::expect_loss_shapes(p, g, w, "wbce");
  const auto& pv = p.value();
  double num = 0, wsum = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pv[i]), kProbEps, 1.0 - kProbEps);
    num += w[i] * (g[i] > T{0} ? -std::log(q) : -std::log(1.0 - q));
    wsum += w[i];
  }
  return record(Tensor<T>::scalar(static_cast<T>(num / wsum)), "wbce", {p}, [g, w, wsum](Node<T>& n) {
    auto* gp = n.parent_grad(0);
    if (!gp) return;
    const auto& pv = n.parent_value(0);
    const double up = n.grad[0];
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double raw = pv[i];
      if (raw < kProbEps || raw > 1.0 - kProbEps) continue;  // clamped: flat
      const double d = g[i] > T{0} ? -1.0 / raw : 1.0 / (1.0 - raw);
      (*gp)[i] += static_cast<T>(up * w[i] * d / wsum);
    }
  });
}

/// 1 - sum(w p g) / sum(w (p + g - p g)); defined as 0 when the union is
/// empty (p = g = 0 everywhere).
template <class T>
Var<T> wiou(const Var<T>& p, const Tensor<T>& g, const Tensor<T>& w) {
  detail::expect_loss_shapes(p, g, w, "wiou");
  const auto& pv = p.value();
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    inter += w[i] * pv[i] * g[i];
    uni += w[i] * (pv[i] + g[i] - pv[i] * g[i]);
  }
  const bool empty = uni == 0.0;
  const double value = empty ? 0.0 : 1.0 - inter / uni;
  return record(Tensor<T>::scalar(static_cast<T>(value)), "wiou", {p}, [g, w, inter, uni, empty](Node<T>& n) {
    auto* gp = n.parent_grad(0);
    if (!gp || empty) return;
    const double up = n.grad[0];
    for (std::size_t i = 0; i < gp->size(); ++i) {
      // d/dp of -I/U = -(w g U - I w (1 - g)) / U^2
      const double d = -(w[i] * g[i] * uni - inter * w[i] * (1.0 - g[i])) / (uni * uni);
      (*gp)[i] += static_cast<T>(up * d);
    }
  });
}

/// Target for a mask of size (h, w): the ground truth itself at its own
/// size, otherwise resized and re-binarized.
template <class T>
Tensor<T> resized_target(const Tensor<T>& gt, std::size_t h, std::size_t w) {
  if (gt.dim(1) == h && gt.dim(2) == w) return gt;
  Tensor<T> out = kernels::bilinear_forward(gt, h, w);
  for (T& v : out.values()) v = v >= static_cast<T>(kTargetThreshold) ? T{1} : T{0};
  return out;
}

/// wiou + wbce for each of the four masks, in mask order.
template <class T>
std::array<Var<T>, 4> scale_losses(const Masks<T>& masks, const Tensor<T>& gt) {
  if (gt.rank() != 3 || gt.dim(0) != 1) throw ShapeError("ground truth must be (1,H,W), got " + to_string(gt.shape()));
  if (masks[0].shape() != gt.shape()) {
    throw ShapeError("full-resolution mask " + to_string(masks[0].shape()) + " does not match ground truth " +
                     to_string(gt.shape()));
  }
  detail::expect_binary(gt, "ground truth");
  std::array<Var<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Shape& s = masks[i].shape();
    if (s.size() != 3 || s[0] != 1) throw ShapeError("mask must be (1,h,w), got " + to_string(s));
    const Tensor<T> target = resized_target(gt, s[1], s[2]);
    const Tensor<T> weights = weight_map(target);
    out[i] = add(wiou(masks[i], target, weights), wbce(masks[i], target, weights));
  }
  return out;
}

/// Deep-supervision total over the four masks (M_o, M_256, M_128, M_64).
template <class T>
Var<T> total_loss(const Masks<T>& masks, const Tensor<T>& gt) {
  const auto parts = scale_losses(masks, gt);
  return add(add(parts[0], parts[1]), add(parts[2], parts[3]));
}

}  // namespace polypdam
