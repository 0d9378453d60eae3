#pragma once

// Segmentation network: multi-scale image+depth input heads, a trunk of
// global/local module pairs, and four mask heads tapped at increasing trunk
// depths.
//
// Layout is channel-first throughout. Inside the global module the three
// mixing blocks act on whichever axis currently leads:
//
//   (C,S,S) --conv C->C, relu--> permute(2,1,0) -> (W,H,C)
//           --conv S->S, relu--> permute(1,0,2) -> (H,W,C)
//           --conv S->S, sigm--> permute(2,0,1) -> (C,H,W)

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "polypdam/autograd.hpp"
#include "polypdam/error.hpp"
#include "polypdam/ops.hpp"
#include "polypdam/random.hpp"

namespace polypdam {

/// Side lengths of the three downsampled input scales.
inline constexpr std::array<std::size_t, 3> kPyramidSides{256, 128, 64};
/// Smallest accepted input side.
inline constexpr std::size_t kMinInputSide = 64;
inline constexpr std::size_t kBlockKernel = 3;
inline constexpr double kNormEps = 1e-5;

struct ModelConfig {
  std::size_t trunk_width = 12;  // C
  std::size_t num_pairs = 32;    // N
  std::size_t mix_size = 64;     // S
  std::size_t input_kernel = 3;
  std::size_t conv3d_kernel = 3;
  /// Trunk depths (pairs completed) feeding the four heads; empty means
  /// {N/4, N/2, 3N/4, N}. Depth 0 taps F0 itself.
  std::vector<std::size_t> head_taps;
  /// When false every input branch sees the full-resolution pair (the
  /// single-scale ablation); parameter count is unchanged.
  bool multiscale_input = true;
  std::uint64_t seed = 0;

  std::array<std::size_t, 4> taps() const {
    if (head_taps.empty()) {
      const std::size_t n = num_pairs;
      return {n / 4, n / 2, 3 * n / 4, n};
    }
    if (head_taps.size() != 4) throw ConfigError("head_taps", "exactly four depths are required");
    return {head_taps[0], head_taps[1], head_taps[2], head_taps[3]};
  }

  void validate() const {
    if (trunk_width < 1) throw ConfigError("trunk_width", "must be >= 1");
    if (num_pairs < 1) throw ConfigError("num_pairs", "must be >= 1");
    if (mix_size < 2) throw ConfigError("mix_size", "must be >= 2");
    if (input_kernel < 1 || input_kernel % 2 == 0) throw ConfigError("input_kernel", "must be odd");
    if (conv3d_kernel < 1 || conv3d_kernel % 2 == 0) throw ConfigError("conv3d_kernel", "must be odd");
    const auto t = taps();
    for (std::size_t i = 1; i < 4; ++i) {
      if (t[i] <= t[i - 1]) {
        throw ConfigError("head_taps", "must be strictly increasing (num_pairs " + std::to_string(num_pairs) +
                                           " gives " + std::to_string(t[0]) + "," + std::to_string(t[1]) + "," +
                                           std::to_string(t[2]) + "," + std::to_string(t[3]) + ")");
      }
    }
    if (t[3] != num_pairs) throw ConfigError("head_taps", "last tap must equal num_pairs");
  }
};

/// Closed-form parameter count.
inline std::size_t param_count(const ModelConfig& c) {
  const std::size_t C = c.trunk_width, S = c.mix_size, N = c.num_pairs;
  const std::size_t ki = c.input_kernel, k3 = c.conv3d_kernel, kb = kBlockKernel;
  const std::size_t inputs = 4 * (6 * C * ki * ki + C);
  const std::size_t fusion = 4 * C * C + C;
  const std::size_t global = (C * C + C) + 2 * (S * S + S);
  const std::size_t local = (2 * k3 * k3 * k3 + 1) + 2 * (C * C * kb * kb + C);
  const std::size_t heads = 4 * (C + 1);
  return inputs + fusion + N * (global + local) + heads;
}

template <class T>
struct ConvParams {
  Var<T> weight;
  Var<T> bias;
};

template <class T>
struct GlobalModule {
  ConvParams<T> channel_mix;  // C -> C over the channel axis
  ConvParams<T> width_mix;    // S -> S over the width axis
  ConvParams<T> height_mix;   // S -> S over the height axis
};

template <class T>
struct LocalModule {
  ConvParams<T> grid_conv;  // conv3d 2 -> 1 over the (C,H,W) grid
  ConvParams<T> block1;     // 3x3 C -> C
  ConvParams<T> block2;     // 3x3 C -> C
};

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Masks ordered (M_o, M_256, M_128, M_64).
template <class T>
using Masks = std::array<Var<T>, 4>;

template <class T>
class Model {
 public:
  ModelConfig config;
  std::array<ConvParams<T>, 4> input_convs;
  ConvParams<T> fusion;
  std::vector<GlobalModule<T>> globals;
  std::vector<LocalModule<T>> locals;
  std::array<ConvParams<T>, 4> heads;

  /// Every parameter in a fixed order with a stable name.
  std::vector<NamedParam<T>> parameters() const {
    std::vector<NamedParam<T>> out;
    auto push = [&](const std::string& name, const ConvParams<T>& p) {
      out.push_back({name + ".weight", p.weight});
      out.push_back({name + ".bias", p.bias});
    };
    for (std::size_t i = 0; i < 4; ++i) push("input." + std::to_string(i), input_convs[i]);
    push("fusion", fusion);
    for (std::size_t i = 0; i < globals.size(); ++i) {
      const std::string g = "pair." + std::to_string(i) + ".global.";
      push(g + "channel_mix", globals[i].channel_mix);
      push(g + "width_mix", globals[i].width_mix);
      push(g + "height_mix", globals[i].height_mix);
      const std::string l = "pair." + std::to_string(i) + ".local.";
      push(l + "grid_conv", locals[i].grid_conv);
      push(l + "block1", locals[i].block1);
      push(l + "block2", locals[i].block2);
    }
    for (std::size_t i = 0; i < 4; ++i) push("head." + std::to_string(i), heads[i]);
    return out;
  }

  /// Number of scalars held by the built parameter tensors.
  std::size_t enumerate_parameters() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var.zero_grad();
  }
};

namespace detail {

template <class T>
ConvParams<T> make_conv(Rng& rng, Shape weight_shape) {
  std::size_t fan_in = 1;
  for (std::size_t a = 1; a < weight_shape.size(); ++a) fan_in *= weight_shape[a];
  // Kaiming-uniform, ReLU gain sqrt(2): bound = sqrt(6 / fan_in).
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> w(weight_shape);
  for (T& v : w.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  Tensor<T> b(Shape{weight_shape[0]});
  return {Var<T>::parameter(std::move(w)), Var<T>::parameter(std::move(b))};
}

template <class T>
void expect_shape(const Var<T>& v, const Shape& s, const char* where) {
  if (v.shape() != s) {
    throw ShapeError(std::string(where) + ": expected " + to_string(s) + ", got " + to_string(v.shape()));
  }
}

}  // namespace detail

/// Deterministic initialization from config.seed.
template <class T>
Model<T> build(const ModelConfig& config) {
  config.validate();
  const std::size_t C = config.trunk_width, S = config.mix_size;
  const std::size_t ki = config.input_kernel, k3 = config.conv3d_kernel, kb = kBlockKernel;
  Rng rng(config.seed);
  Model<T> m;
  m.config = config;
  for (auto& conv : m.input_convs) conv = detail::make_conv<T>(rng, {C, 6, ki, ki});
  m.fusion = detail::make_conv<T>(rng, {C, 4 * C, 1, 1});
  for (std::size_t i = 0; i < config.num_pairs; ++i) {
    GlobalModule<T> g;
    g.channel_mix = detail::make_conv<T>(rng, {C, C, 1, 1});
    g.width_mix = detail::make_conv<T>(rng, {S, S, 1, 1});
    g.height_mix = detail::make_conv<T>(rng, {S, S, 1, 1});
    m.globals.push_back(std::move(g));
    LocalModule<T> l;
    l.grid_conv = detail::make_conv<T>(rng, {1, 2, k3, k3, k3});
    l.block1 = detail::make_conv<T>(rng, {C, C, kb, kb});
    l.block2 = detail::make_conv<T>(rng, {C, C, kb, kb});
    m.locals.push_back(std::move(l));
  }
  for (auto& head : m.heads) head = detail::make_conv<T>(rng, {1, C, 1, 1});
  return m;
}

/// The input at full resolution followed by its 256, 128 and 64 pixel
/// bilinear downsamples. With `multiscale` false all four entries are the
/// input itself.
template <class T>
std::array<Var<T>, 4> make_multiscale(const Var<T>& x, bool multiscale = true) {
  if (x.value().rank() != 3) throw ShapeError("make_multiscale expects (C,H,W), got " + to_string(x.shape()));
  if (x.shape()[1] < kMinInputSide || x.shape()[2] < kMinInputSide) {
    throw ShapeError("input " + to_string(x.shape()) + " is smaller than " + std::to_string(kMinInputSide) +
                     " pixels on a side");
  }
  if (!multiscale) return {x, x, x, x};
  return {x, bilinear_resize(x, kPyramidSides[0], kPyramidSides[0]),
          bilinear_resize(x, kPyramidSides[1], kPyramidSides[1]),
          bilinear_resize(x, kPyramidSides[2], kPyramidSides[2])};
}

/// Global module: attention map from axis-wise 1x1 mixing at S x S,
/// resized back and multiplied onto f0.
template <class T>
Var<T> global_forward(const GlobalModule<T>& g, const Var<T>& f0) {
  const std::size_t C = g.channel_mix.weight.shape()[0];
  const std::size_t S = g.width_mix.weight.shape()[0];
  if (f0.value().rank() != 3 || f0.shape()[0] != C) {
    throw ShapeError("global module expects (" + std::to_string(C) + ",H,W), got " + to_string(f0.shape()));
  }
  const std::size_t H = f0.shape()[1], W = f0.shape()[2];

  Var<T> t = bilinear_resize(channel_standardize(f0, kNormEps), S, S);
  t = relu(conv2d(t, g.channel_mix.weight, g.channel_mix.bias, 0));
  t = permute(t, {2, 1, 0});
  detail::expect_shape(t, {S, S, C}, "global block 1");
  t = relu(conv2d(t, g.width_mix.weight, g.width_mix.bias, 0));
  t = permute(t, {1, 0, 2});
  detail::expect_shape(t, {S, S, C}, "global block 2");
  t = sigmoid(conv2d(t, g.height_mix.weight, g.height_mix.bias, 0));
  t = permute(t, {2, 0, 1});
  detail::expect_shape(t, {C, S, S}, "global block 3");
  return mul(bilinear_resize(t, H, W), f0);
}

/// Local module: conv3d over the stacked (f0, fg) grid, conv block, + f0.
template <class T>
Var<T> local_forward(const LocalModule<T>& l, const Var<T>& f0, const Var<T>& fg) {
  if (f0.shape() != fg.shape()) {
    throw ShapeError("local module inputs differ: " + to_string(f0.shape()) + " vs " + to_string(fg.shape()));
  }
  const std::size_t C = l.block1.weight.shape()[0];
  if (f0.value().rank() != 3 || f0.shape()[0] != C) {
    throw ShapeError("local module expects (" + std::to_string(C) + ",H,W), got " + to_string(f0.shape()));
  }
  const std::size_t k3 = l.grid_conv.weight.shape()[2];
  const std::size_t kb = l.block1.weight.shape()[2];
  Var<T> stacked = concat<T>({unsqueeze(f0, 0), unsqueeze(fg, 0)}, 0);
  Var<T> f2 = squeeze(conv3d(stacked, l.grid_conv.weight, l.grid_conv.bias, (k3 - 1) / 2), 0);
  Var<T> y = relu(conv2d(f2, l.block1.weight, l.block1.bias, (kb - 1) / 2));
  y = conv2d(y, l.block2.weight, l.block2.bias, (kb - 1) / 2);
  return add(y, f0);
}

/// One trunk pair: local(f, global(f)) averaged with the pair input.
/// With zero module weights this is the identity.
template <class T>
Var<T> pair_forward(const GlobalModule<T>& g, const LocalModule<T>& l, const Var<T>& f) {
  return scale(add(local_forward(l, f, global_forward(g, f)), f), T{0.5});
}

/// Full forward pass for one image/depth pair, both (3,H,W).
template <class T>
Masks<T> forward(const Model<T>& m, const Var<T>& image, const Var<T>& depth) {
  if (image.shape() != depth.shape()) {
    throw ShapeError("image " + to_string(image.shape()) + " and depth " + to_string(depth.shape()) + " differ");
  }
  if (image.value().rank() != 3 || image.shape()[0] != 3) {
    throw ShapeError("image must be (3,H,W), got " + to_string(image.shape()));
  }
  const std::size_t H = image.shape()[1], W = image.shape()[2];
  const bool ms = m.config.multiscale_input;
  const auto xs = make_multiscale(image, ms);
  const auto ds = make_multiscale(depth, ms);
  const std::size_t pad = (m.config.input_kernel - 1) / 2;

  std::vector<Var<T>> branches;
  for (std::size_t s = 0; s < 4; ++s) {
    Var<T> in = concat<T>({xs[s], ds[s]}, 0);
    Var<T> feat = conv2d(in, m.input_convs[s].weight, m.input_convs[s].bias, pad);
    if (feat.shape()[1] != H || feat.shape()[2] != W) feat = bilinear_resize(feat, H, W);
    branches.push_back(feat);
  }
  Var<T> f = conv2d(concat(branches, 0), m.fusion.weight, m.fusion.bias, 0);

  const auto taps = m.config.taps();
  std::array<Var<T>, 4> tapped;
  std::size_t next = 0;
  for (std::size_t depth_done = 0;; ++depth_done) {
    while (next < 4 && taps[next] == depth_done) tapped[next++] = f;
    if (depth_done == m.config.num_pairs) break;
    f = pair_forward(m.globals[depth_done], m.locals[depth_done], f);
  }

  Masks<T> masks;
  for (std::size_t h = 0; h < 4; ++h) {
    Var<T> out = sigmoid(conv2d(tapped[h], m.heads[h].weight, m.heads[h].bias, 0));
    if (h < 3) {
      const std::size_t side = kPyramidSides[h];
      masks[h + 1] = bilinear_resize(out, side, side);
    } else {
      masks[0] = out;
    }
  }
  return masks;
}

}  // namespace polypdam
