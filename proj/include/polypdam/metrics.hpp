#pragma once

// Segmentation / saliency evaluation measures.
//
// All functions take a soft prediction p in [0,1] and a binary ground truth
// g of the same shape; the last two axes are (H, W) and any leading axes
// must be 1. Everything accumulates in double.

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "polypdam/error.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam::metrics {

inline constexpr double kBinarizeThreshold = 0.5;
inline constexpr double kEps = DBL_EPSILON;  // matches MATLAB eps

/// A (H, W) plane of doubles.
struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  double operator()(std::size_t r, std::size_t c) const { return v[r * w + c]; }
};

template <class T>
Plane plane_of(const Tensor<T>& t) {
  if (t.rank() < 2) throw ShapeError("metric input needs rank >= 2, got " + to_string(t.shape()));
  Plane p{t.dim(t.rank() - 2), t.dim(t.rank() - 1), {}};
  if (p.h * p.w != t.size()) throw ShapeError("metric input " + to_string(t.shape()) + " is not a single plane");
  p.v.assign(t.values().begin(), t.values().end());
  return p;
}

namespace detail {

template <class T>
void expect_pair(const Tensor<T>& p, const Tensor<T>& g) {
  if (p.size() != g.size() || p.dim(p.rank() - 1) != g.dim(g.rank() - 1)) {
    throw ShapeError("prediction " + to_string(p.shape()) + " and ground truth " + to_string(g.shape()) + " differ");
  }
}

struct Overlap {
  double inter = 0, pred = 0, truth = 0;
};

template <class T>
Overlap overlap(const Tensor<T>& p, const Tensor<T>& g, double threshold) {
  expect_pair(p, g);
  Overlap o;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] >= threshold;
    const bool b = g[i] > T{0.5};
    o.pred += a;
    o.truth += b;
    o.inter += a && b;
  }
  return o;
}

}  // namespace detail

/// Dice of the prediction binarized at `threshold`; 1 when both are empty.
template <class T>
double mdice(const Tensor<T>& p, const Tensor<T>& g, double threshold = kBinarizeThreshold) {
  const auto o = detail::overlap(p, g, threshold);
  if (o.pred + o.truth == 0) return 1.0;
  return 2.0 * o.inter / (o.pred + o.truth);
}

/// IoU of the prediction binarized at `threshold`; 1 when both are empty.
template <class T>
double miou(const Tensor<T>& p, const Tensor<T>& g, double threshold = kBinarizeThreshold) {
  const auto o = detail::overlap(p, g, threshold);
  const double uni = o.pred + o.truth - o.inter;
  if (uni == 0) return 1.0;
  return o.inter / uni;
}

template <class T>
double mae(const Tensor<T>& p, const Tensor<T>& g) {
  detail::expect_pair(p, g);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(static_cast<double>(p[i]) - static_cast<double>(g[i]));
  return s / static_cast<double>(p.size());
}

// ---------------------------------------------------------------------------
// Weighted F-measure

namespace detail {

/// For every pixel: squared distance to the nearest foreground pixel and
/// the smallest `err` among all foreground pixels at that distance.
struct NearestForeground {
  std::vector<double> dist2;
  std::vector<double> err;
};

inline NearestForeground nearest_foreground(const Plane& g, const std::vector<double>& err) {
  const std::size_t H = g.h, W = g.w;
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Column pass: per pixel, the nearest foreground row(s) in each column.
  // Equidistant rows above and below are both kept.
  std::vector<double> col_d2(H * W, inf);
  std::vector<double> col_err(H * W, inf);
  std::vector<long long> above(H), below(H);
  for (std::size_t c = 0; c < W; ++c) {
    long long last = -1;
    for (std::size_t r = 0; r < H; ++r) {
      if (g(r, c) > 0.5) last = static_cast<long long>(r);
      above[r] = last;
    }
    last = -1;
    for (std::size_t r = H; r-- > 0;) {
      if (g(r, c) > 0.5) last = static_cast<long long>(r);
      below[r] = last;
    }
    for (std::size_t r = 0; r < H; ++r) {
      const long long rr = static_cast<long long>(r);
      const double du = above[r] >= 0 ? static_cast<double>(rr - above[r]) : inf;
      const double dd = below[r] >= 0 ? static_cast<double>(below[r] - rr) : inf;
      const double d = std::min(du, dd);
      if (d == inf) continue;
      double e = inf;
      if (du == d) e = std::min(e, err[static_cast<std::size_t>(above[r]) * W + c]);
      if (dd == d) e = std::min(e, err[static_cast<std::size_t>(below[r]) * W + c]);
      col_d2[r * W + c] = d * d;
      col_err[r * W + c] = e;
    }
  }
  // Row pass: scan columns outward until the horizontal offset alone
  // exceeds the best distance.
  NearestForeground out{std::vector<double>(H * W, inf), std::vector<double>(H * W, inf)};
  for (std::size_t r = 0; r < H; ++r) {
    const double* d2 = col_d2.data() + r * W;
    const double* e2 = col_err.data() + r * W;
    for (std::size_t c = 0; c < W; ++c) {
      double best = inf, best_err = inf;
      for (std::size_t delta = 0; delta < W; ++delta) {
        const double dx2 = static_cast<double>(delta) * static_cast<double>(delta);
        if (dx2 > best) break;
        auto visit = [&](std::size_t cc) {
          const double cand = dx2 + d2[cc];
          if (cand < best) {
            best = cand;
            best_err = e2[cc];
          } else if (cand == best) {
            best_err = std::min(best_err, e2[cc]);
          }
        };
        if (c >= delta) visit(c - delta);
        if (delta > 0 && c + delta < W) visit(c + delta);
      }
      out.dist2[r * W + c] = best;
      out.err[r * W + c] = best_err;
    }
  }
  return out;
}

/// 'same'-size correlation with a normalized 7x7 Gaussian (sigma 5), zero
/// padding. Separable form of MATLAB fspecial('gaussian', 7, 5).
inline std::vector<double> gaussian_filter(const std::vector<double>& src, std::size_t H, std::size_t W) {
  constexpr int r = 3;
  constexpr double sigma = 5.0;
  std::array<double, 2 * r + 1> k{};
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
  for (double& v : k) v /= ks;
  std::vector<double> tmp(H * W, 0.0), out(H * W, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) {
        const long long xx = static_cast<long long>(x) + i;
        if (xx >= 0 && xx < static_cast<long long>(W)) s += k[i + r] * src[y * W + xx];
      }
      tmp[y * W + x] = s;
    }
  }
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) {
        const long long yy = static_cast<long long>(y) + i;
        if (yy >= 0 && yy < static_cast<long long>(H)) s += k[i + r] * tmp[yy * W + x];
      }
      out[y * W + x] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Weighted F-measure, beta^2 = 1.
///
/// Background errors are replaced by the error at the nearest foreground
/// pixel (smallest error when several are equidistant). Throws
/// UndefinedMetric when g has no foreground.
template <class T>
double wfm(const Tensor<T>& p, const Tensor<T>& g) {
  detail::expect_pair(p, g);
  const Plane P = plane_of(p), G = plane_of(g);
  const std::size_t H = G.h, W = G.w, n = H * W;
  std::vector<double> E(n);
  double fg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    E[i] = std::abs(P.v[i] - G.v[i]);
    fg += G.v[i] > 0.5;
  }
  if (fg == 0) throw UndefinedMetric("weighted F-measure is undefined for an empty ground truth");

  const auto nearest = detail::nearest_foreground(G, E);
  std::vector<double> Et = E;
  for (std::size_t i = 0; i < n; ++i) {
    if (G.v[i] <= 0.5) Et[i] = nearest.err[i];
  }
  const auto EA = detail::gaussian_filter(Et, H, W);
  const double decay = std::log(0.5) / 5.0;
  double fg_err = 0, bg_err = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (G.v[i] > 0.5) {
      fg_err += std::min(E[i], EA[i]);
    } else {
      const double B = 2.0 - std::exp(decay * std::sqrt(nearest.dist2[i]));
      bg_err += E[i] * B;
    }
  }
  const double tp = fg - fg_err;
  const double recall = 1.0 - fg_err / fg;
  const double precision = tp / (kEps + tp + bg_err);
  return 2.0 * recall * precision / (kEps + recall + precision);
}

// ---------------------------------------------------------------------------
// S-measure

namespace detail {

/// Object-aware similarity of values drawn from one region.
inline double object_score(const std::vector<double>& vals) {
  if (vals.empty()) return 0.0;
  const double n = static_cast<double>(vals.size());
  double s = 0;
  for (double v : vals) s += v;
  const double mu = s / n;
  double sd = 0;
  if (vals.size() > 1) {
    double q = 0;
    for (double v : vals) q += (v - mu) * (v - mu);
    sd = std::sqrt(q / (n - 1));
  }
  return 2.0 * mu / (mu * mu + 1.0 + sd + kEps);
}

/// SSIM-style similarity of a rectangular block [r0,r1) x [c0,c1).
inline double block_ssim(const Plane& p, const Plane& g, std::size_t r0, std::size_t r1, std::size_t c0,
                         std::size_t c1) {
  const double N = static_cast<double>((r1 - r0) * (c1 - c0));
  double sx = 0, sy = 0;
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = c0; c < c1; ++c) {
      sx += p(r, c);
      sy += g(r, c);
    }
  }
  const double x = sx / N, y = sy / N;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t r = r0; r < r1; ++r) {
    for (std::size_t c = c0; c < c1; ++c) {
      const double dx = p(r, c) - x, dy = g(r, c) - y;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  vx /= (N - 1 + kEps);
  vy /= (N - 1 + kEps);
  cxy /= (N - 1 + kEps);
  const double alpha = 4 * x * y * cxy;
  const double beta = (x * x + y * y) * (vx + vy);
  if (alpha != 0) return alpha / (beta + kEps);
  if (beta == 0) return 1.0;
  return 0.0;
}

}  // namespace detail

/// Structure measure, alpha = 0.5. An all-background truth
/// scores 1 - mean(p); an all-foreground truth scores mean(p).
template <class T>
double smeasure(const Tensor<T>& p, const Tensor<T>& g) {
  detail::expect_pair(p, g);
  const Plane P = plane_of(p), G = plane_of(g);
  const std::size_t H = G.h, W = G.w, n = H * W;
  double gsum = 0, psum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    gsum += G.v[i] > 0.5;
    psum += P.v[i];
  }
  const double u = gsum / static_cast<double>(n);
  if (gsum == 0) return 1.0 - psum / static_cast<double>(n);
  if (gsum == static_cast<double>(n)) return psum / static_cast<double>(n);

  // Object term.
  std::vector<double> fg_vals, bg_vals;
  for (std::size_t i = 0; i < n; ++i) {
    if (G.v[i] > 0.5) {
      fg_vals.push_back(P.v[i]);
    } else {
      bg_vals.push_back(1.0 - P.v[i]);
    }
  }
  const double s_object = u * detail::object_score(fg_vals) + (1 - u) * detail::object_score(bg_vals);

  // Region term: split at the rounded (1-based) centroid of the truth.
  double row_acc = 0, col_acc = 0;
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < W; ++c) {
      if (G(r, c) > 0.5) {
        row_acc += static_cast<double>(r + 1);
        col_acc += static_cast<double>(c + 1);
      }
    }
  }
  const auto X = static_cast<std::size_t>(std::round(col_acc / gsum));
  const auto Y = static_cast<std::size_t>(std::round(row_acc / gsum));
  const double area = static_cast<double>(n);
  const double w1 = static_cast<double>(X * Y) / area;
  const double w2 = static_cast<double>((W - X) * Y) / area;
  const double w3 = static_cast<double>(X * (H - Y)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  // Empty quadrants carry zero weight and contribute nothing.
  auto quad = [&](double weight, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    if (r1 <= r0 || c1 <= c0) return 0.0;
    return weight * detail::block_ssim(P, G, r0, r1, c0, c1);
  };
  const double s_region = quad(w1, 0, Y, 0, X) + quad(w2, 0, Y, X, W) + quad(w3, Y, H, 0, X) + quad(w4, Y, H, X, W);

  const double q = 0.5 * s_object + 0.5 * s_region;
  return q < 0 ? 0.0 : q;
}

// ---------------------------------------------------------------------------
// E-measure

inline constexpr std::size_t kEmeasureLevels = 256;

/// Threshold t_k = k / 255 for k in [0, 255].
inline double emeasure_threshold(std::size_t k) { return static_cast<double>(k) / 255.0; }

/// Maximum enhanced-alignment measure over 256 thresholds (p >= t).
///
/// Binarized maps only take four (prediction, truth) combinations, so each
/// threshold is scored from counts.
template <class T>
double emeasure_max(const Tensor<T>& p, const Tensor<T>& g) {
  detail::expect_pair(p, g);
  const std::size_t n = p.size();
  // hist[k]: pixels whose highest passed threshold is k (-1 -> none, slot 0).
  std::array<double, kEmeasureLevels + 1> fg_hist{}, bg_hist{};
  double gfg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = p[i];
    long long k = static_cast<long long>(std::floor(v * 255.0));
    k = std::clamp<long long>(k, -1, 255);
    while (k < 255 && emeasure_threshold(static_cast<std::size_t>(k + 1)) <= v) ++k;
    while (k >= 0 && emeasure_threshold(static_cast<std::size_t>(k)) > v) --k;
    const bool fg = g[i] > T{0.5};
    gfg += fg;
    (fg ? fg_hist : bg_hist)[static_cast<std::size_t>(k + 1)] += 1;
  }
  const double N = static_cast<double>(n);
  const double gbg = N - gfg;
  // Pixels passing threshold k = those with slot >= k + 1.
  double tp = 0, fp = 0;
  std::array<double, kEmeasureLevels> tp_at{}, fp_at{};
  for (std::size_t k = kEmeasureLevels; k-- > 0;) {
    tp += fg_hist[k + 1];
    fp += bg_hist[k + 1];
    tp_at[k] = tp;
    fp_at[k] = fp;
  }
  double best = -1;
  for (std::size_t k = 0; k < kEmeasureLevels; ++k) {
    const double TP = tp_at[k], FP = fp_at[k];
    const double FN = gfg - TP, TN = gbg - FP;
    double score;
    if (gfg == 0) {
      score = (N - (TP + FP)) / N;  // mean of 1 - P
    } else if (gbg == 0) {
      score = (TP + FP) / N;  // mean of P
    } else {
      const double mp = (TP + FP) / N, mg = gfg / N;
      auto enhanced = [&](double bp, double bg) {
        const double ap = bp - mp, ag = bg - mg;
        const double xi = 2.0 * ap * ag / (ap * ap + ag * ag + kEps);
        return (xi + 1.0) * (xi + 1.0) / 4.0;
      };
      score = (TP * enhanced(1, 1) + FP * enhanced(1, 0) + FN * enhanced(0, 1) + TN * enhanced(0, 0)) / N;
    }
    best = std::max(best, score);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Aggregation

struct ImageScores {
  double mdice = 0, miou = 0, wfm = 0, smeasure = 0, emeasure_max = 0, mae = 0;
  bool wfm_defined = true;
};

struct MetricReport {
  double mdice = 0, miou = 0, wfm = 0, smeasure = 0, emeasure_max = 0, mae = 0;
  std::size_t n_samples = 0;
  /// Samples left out of the wfm mean because it is undefined for them.
  std::size_t wfm_excluded = 0;
};

template <class T>
ImageScores score_image(const Tensor<T>& p, const Tensor<T>& g, double threshold = kBinarizeThreshold) {
  ImageScores s;
  s.mdice = mdice(p, g, threshold);
  s.miou = miou(p, g, threshold);
  try {
    s.wfm = wfm(p, g);
  } catch (const UndefinedMetric&) {
    s.wfm_defined = false;
    s.wfm = std::numeric_limits<double>::quiet_NaN();
  }
  s.smeasure = smeasure(p, g);
  s.emeasure_max = emeasure_max(p, g);
  s.mae = mae(p, g);
  return s;
}

/// Unweighted mean of per-image scores, in the given order.
inline MetricReport aggregate(std::span<const ImageScores> scores) {
  if (scores.empty()) throw std::invalid_argument("cannot aggregate an empty set of scores");
  MetricReport r;
  r.n_samples = scores.size();
  std::size_t wfm_count = 0;
  for (const auto& s : scores) {
    r.mdice += s.mdice;
    r.miou += s.miou;
    r.smeasure += s.smeasure;
    r.emeasure_max += s.emeasure_max;
    r.mae += s.mae;
    if (s.wfm_defined) {
      r.wfm += s.wfm;
      ++wfm_count;
    } else {
      ++r.wfm_excluded;
    }
  }
  const double n = static_cast<double>(scores.size());
  r.mdice /= n;
  r.miou /= n;
  r.smeasure /= n;
  r.emeasure_max /= n;
  r.mae /= n;
  r.wfm = wfm_count ? r.wfm / static_cast<double>(wfm_count) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

template <class T>
struct MaskPair {
  Tensor<T> prediction;
  Tensor<T> truth;
};

template <class T>
MetricReport evaluate_dataset(std::span<const MaskPair<T>> pairs, double threshold = kBinarizeThreshold) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_dataset needs at least one pair");
  std::vector<ImageScores> scores;
  scores.reserve(pairs.size());
  for (const auto& pr : pairs) scores.push_back(score_image(pr.prediction, pr.truth, threshold));
  return aggregate(scores);
}

}  // namespace polypdam::metrics
