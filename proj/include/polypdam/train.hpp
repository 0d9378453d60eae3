#pragma once

// Training loop: seeded per-epoch shuffle, per-step random rescale, batch
// gradients accumulated sample by sample, AdamW update.
//
// All randomness after initialization (shuffles, scale draws) comes from one
// generator seeded with TrainConfig::seed, and its state is checkpointed, so
// a resumed run continues bit for bit.

#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "polypdam/autograd.hpp"
#include "polypdam/checkpoint.hpp"
#include "polypdam/config.hpp"
#include "polypdam/dataset.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/loss.hpp"
#include "polypdam/model.hpp"
#include "polypdam/optim.hpp"
#include "polypdam/random.hpp"

namespace polypdam {

/// A sample as fed to the network: image and 3-channel depth (3,h,w),
/// binary mask (1,h,w).
struct NetworkInput {
  std::string id;
  Tensor<float> image;
  Tensor<float> depth;
  Tensor<float> mask;
};

/// Depth input for the network; all zeros when the depth prior is ablated.
inline Tensor<float> depth_input(const Sample& s, bool no_dam) {
  if (no_dam) return Tensor<float>({3, s.image.dim(1), s.image.dim(2)});
  return replicate3(s.depth);
}

inline Tensor<float> binarized(Tensor<float> t) {
  for (float& v : t.values()) v = v >= static_cast<float>(kTargetThreshold) ? 1.0f : 0.0f;
  return t;
}

/// Resamples an input to side x side (masks re-binarized).
inline NetworkInput resized(const NetworkInput& in, std::size_t side) {
  if (in.image.dim(1) == side && in.image.dim(2) == side) return in;
  return {in.id, kernels::bilinear_forward(in.image, side, side), kernels::bilinear_forward(in.depth, side, side),
          binarized(kernels::bilinear_forward(in.mask, side, side))};
}

/// Side for a multi-scale factor: nearest multiple of 32, at least the
/// minimum input side.
inline std::size_t scaled_side(std::size_t base, double factor) {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(base) * factor / 32.0));
  return std::max<std::size_t>(kMinInputSide, 32 * k);
}

class Trainer {
 public:
  using CheckpointHook = std::function<void(const Checkpoint&)>;

  Trainer(const std::vector<Sample>& samples, PipelineConfig config, std::ostream* log = &std::cerr)
      : config_(std::move(config)), log_(log), model_(prepare(samples)), optimizer_(make_optimizer()) {
    rng_ = Rng(config_.train.seed);
  }

  /// Continues the run stored in `ck`.
  Trainer(const std::vector<Sample>& samples, const Checkpoint& ck, std::ostream* log = &std::cerr)
      : config_(ck.config), log_(log), model_(prepare(samples, &ck)), optimizer_(make_optimizer()) {
    if (ck.moment1.size() != ck.params.size() || ck.moment2.size() != ck.params.size()) {
      throw CheckpointError("checkpoint optimizer state does not match its parameters");
    }
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      if (ck.moment1[i].value.shape() != ck.params[i].value.shape() ||
          ck.moment2[i].value.shape() != ck.params[i].value.shape()) {
        throw CheckpointError("checkpoint moment shape mismatch at '" + ck.params[i].name + "'");
      }
      optimizer_.first_moments()[i] = ck.moment1[i].value;
      optimizer_.second_moments()[i] = ck.moment2[i].value;
    }
    optimizer_.set_steps(ck.state.step);
    state_ = ck.state;
    if (!state_.order.empty() && state_.order.size() != inputs_.size()) {
      throw CheckpointError("checkpoint was written for " + std::to_string(state_.order.size()) +
                            " samples, got " + std::to_string(inputs_.size()));
    }
    rng_.set_state(state_.rng);
  }

  std::size_t batch_size() const { return batch_; }
  std::uint64_t steps_per_epoch() const { return (inputs_.size() + batch_ - 1) / batch_; }
  std::uint64_t total_steps() const { return config_.train.epochs * steps_per_epoch(); }
  bool finished() const { return state_.step >= total_steps(); }

  const Model<float>& model() const { return model_; }
  const TrainState& state() const { return state_; }
  const PipelineConfig& config() const { return config_; }

  /// One optimization step; returns the batch's mean loss.
  double step() {
    const std::size_t n = inputs_.size();
    if (state_.cursor == 0) {
      state_.order.resize(n);
      std::iota(state_.order.begin(), state_.order.end(), std::size_t{0});
      rng_.shuffle(state_.order);
    }
    std::size_t side = config_.train.train_size;
    if (!config_.train.no_multiscale) {
      const auto& f = config_.train.multiscale_factors;
      side = scaled_side(side, f[rng_.index(f.size())]);
      ++state_.scale_draws;
    }
    const std::size_t begin = state_.cursor, end = std::min<std::size_t>(n, begin + batch_);
    const float inv = 1.0f / static_cast<float>(end - begin);

    optimizer_.zero_grad();
    double batch_loss = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const NetworkInput in = resized(inputs_[state_.order[i]], side);
      const auto masks = forward(model_, Var<float>::constant(in.image), Var<float>::constant(in.depth));
      const Var<float> loss = total_loss(masks, in.mask);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        std::string ids;
        for (std::size_t j = begin; j < end; ++j) ids += (j > begin ? ", " : "") + inputs_[state_.order[j]].id;
        throw TrainingError("non-finite loss at step " + std::to_string(state_.step + 1) + " (sample '" + in.id +
                            "'); batch ids: " + ids);
      }
      batch_loss += value;
      backward(scale(loss, inv));
    }
    optimizer_.step();
    optimizer_.zero_grad();
    batch_loss /= static_cast<double>(end - begin);

    ++state_.step;
    state_.cursor = end;
    state_.running_loss += batch_loss;
    ++state_.running_batches;
    if (state_.cursor >= n) {
      state_.epoch_losses.push_back(state_.running_loss / static_cast<double>(state_.running_batches));
      state_.running_loss = 0;
      state_.running_batches = 0;
      state_.cursor = 0;
      ++state_.epoch;
      if (log_) *log_ << "epoch " << state_.epoch << " loss " << state_.epoch_losses.back() << '\n';
    }
    return batch_loss;
  }

  /// Runs until `until_step` (default: the configured number of epochs),
  /// calling `hook` every checkpoint_every steps.
  void run(std::uint64_t until_step = 0, const CheckpointHook& hook = {}) {
    const std::uint64_t target = until_step ? std::min(until_step, total_steps()) : total_steps();
    const std::size_t every = config_.train.checkpoint_every;
    while (state_.step < target) {
      step();
      if (hook && every && state_.step % every == 0) hook(checkpoint());
    }
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config = config_;
    ck.state = state_;
    ck.state.rng = rng_.state();
    ck.params = export_parameters(model_);
    const auto params = model_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.moment1.push_back({params[i].name, optimizer_.first_moments()[i]});
      ck.moment2.push_back({params[i].name, optimizer_.second_moments()[i]});
    }
    return ck;
  }

 private:
  Model<float> prepare(const std::vector<Sample>& samples, const Checkpoint* ck = nullptr) {
    if (samples.empty()) throw std::invalid_argument("training needs at least one sample");
    config_.train.validate();
    config_.model.multiscale_input = !config_.train.no_multiscale;
    config_.model.validate();
    batch_ = config_.train.batch_size;
    if (batch_ > samples.size()) {
      if (log_) {
        *log_ << "warning: batch_size " << batch_ << " exceeds dataset size " << samples.size() << ", using "
              << samples.size() << '\n';
      }
      batch_ = samples.size();
    }
    const std::size_t side = config_.train.train_size;
    for (const auto& s : samples) {
      NetworkInput in{s.id, s.image, depth_input(s, config_.train.no_dam), s.mask};
      inputs_.push_back(resized(in, side));
    }
    return ck ? model_from<float>(config_.model, ck->params) : build<float>(config_.model);
  }

  AdamW<float> make_optimizer() {
    std::vector<Var<float>> vars;
    std::vector<bool> decay;
    for (const auto& p : model_.parameters()) {
      vars.push_back(p.var);
      const bool is_bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
      decay.push_back(config_.train.decay_biases || !is_bias);
    }
    const auto& t = config_.train;
    return AdamW<float>(std::move(vars), {t.lr, t.beta1, t.beta2, t.eps, t.weight_decay}, std::move(decay));
  }

  PipelineConfig config_;
  std::ostream* log_;
  std::size_t batch_ = 1;
  std::vector<NetworkInput> inputs_;
  Model<float> model_;
  AdamW<float> optimizer_;
  Rng rng_;
  TrainState state_;
};

}  // namespace polypdam
