#pragma once

// AdamW with decoupled weight decay:
//   m <- b1 m + (1 - b1) g
//   v <- b2 v + (1 - b2) g^2
//   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "polypdam/autograd.hpp"
#include "polypdam/error.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// One AdamW update of a single tensor. `step` is 1-based.
template <class T>
void adamw_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, const AdamWOptions& o,
                std::uint64_t step, bool decay = true) {
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
    throw ShapeError("adamw_step: parameter " + to_string(param.shape()) + ", gradient " + to_string(grad.shape()) +
                     " and moments must share one shape");
  }
  if (step < 1) throw std::invalid_argument("adamw_step: step counter starts at 1");
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  const double wd = decay ? o.weight_decay : 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double p = param[i];
    param[i] = static_cast<T>(p - o.lr * ((mi / bc1) / (std::sqrt(vi / bc2) + o.eps) + wd * p));
  }
}

/// Moments and step counter for a fixed list of parameters.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<Var<T>> params, AdamWOptions options, std::vector<bool> decay = {})
      : params_(std::move(params)), options_(options), decay_(std::move(decay)) {
    if (decay_.empty()) decay_.assign(params_.size(), true);
    if (decay_.size() != params_.size()) throw std::invalid_argument("AdamW: decay mask size mismatch");
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  /// Applies accumulated gradients; parameters without a gradient get a
  /// zero gradient (decay still applies).
  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T>& p = params_[i];
      const Tensor<T>& g = p.grad();
      adamw_step(p.mutable_value(), g, m_[i], v_[i], options_, step_, decay_[i]);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t steps() const { return step_; }
  void set_steps(std::uint64_t s) { step_ = s; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  std::vector<Var<T>> params_;
  AdamWOptions options_;
  std::vector<bool> decay_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace polypdam
