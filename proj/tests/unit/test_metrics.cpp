#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "../support/oracles.hpp"
#include "polypdam/metrics.hpp"

using namespace polypdam;
using namespace polypdam::metrics;
using oracle::D;

namespace {

D binary(Rng& rng, std::size_t h, std::size_t w, double rate = 0.4) {
  D g({1, h, w});
  for (double& v : g.values()) v = rng.uniform() < rate ? 1 : 0;
  return g;
}

D blob(Rng& rng, std::size_t h, std::size_t w) {
  D g({1, h, w});
  const double cy = rng.uniform(0.2, 0.8) * h, cx = rng.uniform(0.2, 0.8) * w;
  const double ry = rng.uniform(0.15, 0.4) * h, rx = rng.uniform(0.15, 0.4) * w;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      g.at({0, r, c}) = std::pow((r - cy) / ry, 2) + std::pow((c - cx) / rx, 2) <= 1 ? 1 : 0;
  g.at({0, std::size_t(cy), std::size_t(cx)}) = 1;
  return g;
}

D complement(D t) {
  for (double& v : t.values()) v = 1 - v;
  return t;
}

D transpose(const D& t) {
  const std::size_t H = t.dim(1), W = t.dim(2);
  D o({1, W, H});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) o.at({0, c, r}) = t.at({0, r, c});
  return o;
}

D square(std::size_t n, std::size_t r0, std::size_t side) {
  D g({1, n, n});
  for (std::size_t r = r0; r < r0 + side; ++r)
    for (std::size_t c = r0; c < r0 + side; ++c) g.at({0, r, c}) = 1;
  return g;
}

}  // namespace

// --- mdice / miou / mae ----------------------------------------------------

TEST(Overlap, IdentityDisjointAndPartial) {
  const D g = square(6, 1, 3);
  EXPECT_EQ(mdice(g, g), 1.0);
  EXPECT_EQ(miou(g, g), 1.0);
  D other({1, 6, 6});
  other.at({0, 5, 5}) = 1;
  EXPECT_EQ(mdice(other, g), 0.0);
  EXPECT_EQ(miou(other, g), 0.0);
  D g2({1, 4, 4}), p({1, 4, 4});
  g2.at({0, 0, 0}) = g2.at({0, 0, 1}) = 1;
  p.at({0, 0, 0}) = 0.7;
  EXPECT_DOUBLE_EQ(mdice(p, g2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(miou(p, g2), 0.5);
}

TEST(Overlap, BothEmptyIsOne) {
  const D z({1, 3, 3});
  EXPECT_EQ(mdice(z, z), 1.0);
  EXPECT_EQ(miou(z, z), 1.0);
}

TEST(Overlap, ThresholdIsInclusive) {
  D g({1, 1, 2}, 1.0), p({1, 1, 2}, 0.5);
  EXPECT_EQ(mdice(p, g), 1.0);
  EXPECT_EQ(mdice(p, g, 0.6), 0.0);
}

TEST(Overlap, DiceIouIdentity) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const D g = binary(rng, 8, 9), p = oracle::random_tensor(rng, {1, 8, 9}, 0, 1);
    const double d = mdice(p, g), i = miou(p, g);
    EXPECT_NEAR(d - 2 * i / (1 + i), 0.0, 1e-12);
    EXPECT_GE(d, i);
  }
}

TEST(Mae, ExamplesAndOracle) {
  Rng rng(2);
  const D g = binary(rng, 5, 5);
  EXPECT_EQ(mae(g, g), 0.0);
  EXPECT_EQ(mae(complement(g), g), 1.0);
  const D p = oracle::random_tensor(rng, {1, 3, 3}, 0, 1), g3 = binary(rng, 3, 3);
  EXPECT_NEAR(mae(p, g3), oracle::mae(oracle::img_of(p), oracle::img_of(g3)), 1e-15);
  EXPECT_NEAR(mae(p, g3), mae(complement(p), complement(g3)), 1e-12);
}

TEST(Metrics, ShapeMismatch) {
  const D a({1, 4, 4}), b({1, 4, 5});
  EXPECT_THROW(mdice(a, b), ShapeError);
  EXPECT_THROW(miou(a, b), ShapeError);
  EXPECT_THROW(mae(a, b), ShapeError);
  EXPECT_THROW(smeasure(a, b), ShapeError);
  EXPECT_THROW(emeasure_max(a, b), ShapeError);
}

// --- wfm -------------------------------------------------------------------

TEST(Wfm, PerfectAndInverse) {
  Rng rng(3);
  for (int t = 0; t < 10; ++t) {
    const D g = blob(rng, 12, 10);
    EXPECT_NEAR(wfm(g, g), 1.0, 1e-12);
  }
  // Foreground at least 3 px from the border: the zero-padded smoothing
  // never lowers the error below 1, so the inverse scores 0.
  for (std::size_t side = 1; side <= 4; ++side) {
    const D g = square(10, 3, side);
    EXPECT_NEAR(wfm(complement(g), g), 0.0, 1e-12);
  }
}

TEST(Wfm, InverseNearBorderIsSmallButPositive) {
  const D g = square(8, 0, 3);
  const double v = wfm(complement(g), g);
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 0.2);
  EXPECT_NEAR(v, oracle::wfm(oracle::img_of(complement(g)), oracle::img_of(g)), 1e-9);
}

TEST(Wfm, EmptyTruthIsUndefined) {
  EXPECT_THROW(wfm(D({1, 4, 4}, 0.2), D({1, 4, 4})), UndefinedMetric);
}

TEST(Wfm, SoftSquareMatchesReference) {
  Rng rng(4);
  const D g = square(8, 2, 4), p = oracle::random_tensor(rng, {1, 8, 8}, 0, 1);
  EXPECT_NEAR(wfm(p, g), oracle::wfm(oracle::img_of(p), oracle::img_of(g)), 1e-6);
}

TEST(Wfm, RandomCasesMatchReference) {
  Rng rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 8 + rng.index(9), w = 8 + rng.index(9);
    const D g = t % 2 ? blob(rng, h, w) : binary(rng, h, w, 0.3);
    const D p = oracle::random_tensor(rng, {1, h, w}, 0, 1);
    if (std::accumulate(g.values().begin(), g.values().end(), 0.0) == 0) continue;
    EXPECT_NEAR(wfm(p, g), oracle::wfm(oracle::img_of(p), oracle::img_of(g)), 1e-6) << "case " << t;
  }
}

// --- S-measure -------------------------------------------------------------

TEST(SMeasure, DegenerateConventions) {
  const D z({1, 6, 6}), o({1, 6, 6}, 1.0);
  EXPECT_EQ(smeasure(z, z), 1.0);
  EXPECT_EQ(smeasure(o, o), 1.0);
  EXPECT_NEAR(smeasure(D({1, 6, 6}, 0.25), z), 0.75, 1e-15);
  EXPECT_NEAR(smeasure(D({1, 6, 6}, 0.25), o), 0.25, 1e-15);
}

TEST(SMeasure, PerfectIsOne) {
  Rng rng(6);
  const D g = blob(rng, 16, 16);
  EXPECT_NEAR(smeasure(g, g), 1.0, 1e-9);
}

TEST(SMeasure, FixedCaseMatchesReference) {
  Rng rng(7);
  const D g = square(16, 4, 7), p = oracle::random_tensor(rng, {1, 16, 16}, 0, 1);
  EXPECT_NEAR(smeasure(p, g), oracle::smeasure(oracle::img_of(p), oracle::img_of(g)), 1e-6);
}

TEST(SMeasure, RandomCasesMatchReference) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 8 + rng.index(9), w = 8 + rng.index(9);
    const D g = t % 2 ? blob(rng, h, w) : binary(rng, h, w, 0.3);
    const D p = oracle::random_tensor(rng, {1, h, w}, 0, 1);
    const double s = smeasure(p, g);
    EXPECT_NEAR(s, oracle::smeasure(oracle::img_of(p), oracle::img_of(g)), 1e-6) << "case " << t;
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

// --- E-measure -------------------------------------------------------------

TEST(EMeasure, PerfectAndInverse) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const D g = blob(rng, 9, 11);
    EXPECT_NEAR(emeasure_max(g, g), 1.0, 1e-12);
    EXPECT_LT(emeasure_max(complement(g), g), 0.5);
  }
}

TEST(EMeasure, FixedCaseMatchesReference) {
  Rng rng(10);
  const D g = square(8, 3, 3), p = oracle::random_tensor(rng, {1, 8, 8}, 0, 1);
  EXPECT_NEAR(emeasure_max(p, g), oracle::emeasure_max(oracle::img_of(p), oracle::img_of(g)), 1e-6);
}

TEST(EMeasure, RandomCasesMatchReferenceAndAreBoundedByPerfect) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 8 + rng.index(9), w = 8 + rng.index(9);
    const D g = t % 3 == 0 ? D({1, h, w}, double(t % 2)) : blob(rng, h, w);
    const D p = oracle::random_tensor(rng, {1, h, w}, 0, 1);
    const double e = emeasure_max(p, g);
    EXPECT_NEAR(e, oracle::emeasure_max(oracle::img_of(p), oracle::img_of(g)), 1e-6) << "case " << t;
    EXPECT_LE(e, emeasure_max(g, g) + 1e-12);
  }
}

// --- invariances -----------------------------------------------------------

TEST(Metrics, TransposeInvariance) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 8 + rng.index(9), w = 8 + rng.index(9);
    const D g = blob(rng, h, w), p = oracle::random_tensor(rng, {1, h, w}, 0, 1);
    const D gt = transpose(g), pt = transpose(p);
    EXPECT_NEAR(mdice(p, g), mdice(pt, gt), 1e-12);
    EXPECT_NEAR(miou(p, g), miou(pt, gt), 1e-12);
    EXPECT_NEAR(mae(p, g), mae(pt, gt), 1e-12);
    EXPECT_NEAR(wfm(p, g), wfm(pt, gt), 1e-12);
    EXPECT_NEAR(smeasure(p, g), smeasure(pt, gt), 1e-12);
    EXPECT_NEAR(emeasure_max(p, g), emeasure_max(pt, gt), 1e-12);
  }
}

// --- dataset evaluation ----------------------------------------------------

TEST(EvaluateDataset, SinglePerfectPair) {
  Rng rng(13);
  const D g = blob(rng, 10, 10);
  const std::vector<MaskPair<double>> pairs{{g, g}};
  const auto r = evaluate_dataset<double>(pairs);
  EXPECT_EQ(r.n_samples, 1u);
  EXPECT_NEAR(r.mdice, 1, 1e-12);
  EXPECT_NEAR(r.miou, 1, 1e-12);
  EXPECT_NEAR(r.wfm, 1, 1e-12);
  EXPECT_NEAR(r.smeasure, 1, 1e-9);
  EXPECT_NEAR(r.emeasure_max, 1, 1e-12);
  EXPECT_EQ(r.mae, 0.0);
}

TEST(EvaluateDataset, TwoPairsAverage) {
  Rng rng(14);
  const std::vector<MaskPair<double>> a{{oracle::random_tensor(rng, {1, 8, 8}, 0, 1), blob(rng, 8, 8)}};
  const std::vector<MaskPair<double>> b{{oracle::random_tensor(rng, {1, 8, 8}, 0, 1), blob(rng, 8, 8)}};
  const std::vector<MaskPair<double>> ab{a[0], b[0]};
  const auto ra = evaluate_dataset<double>(a), rb = evaluate_dataset<double>(b), r = evaluate_dataset<double>(ab);
  EXPECT_NEAR(r.mdice, (ra.mdice + rb.mdice) / 2, 1e-15);
  EXPECT_NEAR(r.miou, (ra.miou + rb.miou) / 2, 1e-15);
  EXPECT_NEAR(r.wfm, (ra.wfm + rb.wfm) / 2, 1e-15);
  EXPECT_NEAR(r.smeasure, (ra.smeasure + rb.smeasure) / 2, 1e-15);
  EXPECT_NEAR(r.emeasure_max, (ra.emeasure_max + rb.emeasure_max) / 2, 1e-15);
  EXPECT_NEAR(r.mae, (ra.mae + rb.mae) / 2, 1e-15);
}

TEST(EvaluateDataset, MatchesOracleComposition) {
  Rng rng(15);
  std::vector<MaskPair<double>> pairs;
  double dice = 0, iou = 0, wfm_ = 0, s = 0, e = 0, m = 0;
  for (int i = 0; i < 10; ++i) {
    const D g = blob(rng, 8, 8), p = oracle::random_tensor(rng, {1, 8, 8}, 0, 1);
    pairs.push_back({p, g});
    const auto pi = oracle::img_of(p), gi = oracle::img_of(g);
    dice += oracle::dice(pi, gi);
    iou += oracle::iou(pi, gi);
    wfm_ += oracle::wfm(pi, gi);
    s += oracle::smeasure(pi, gi);
    e += oracle::emeasure_max(pi, gi);
    m += oracle::mae(pi, gi);
  }
  const auto r = evaluate_dataset<double>(pairs);
  EXPECT_NEAR(r.mdice, dice / 10, 1e-12);
  EXPECT_NEAR(r.miou, iou / 10, 1e-12);
  EXPECT_NEAR(r.wfm, wfm_ / 10, 1e-6);
  EXPECT_NEAR(r.smeasure, s / 10, 1e-6);
  EXPECT_NEAR(r.emeasure_max, e / 10, 1e-6);
  EXPECT_NEAR(r.mae, m / 10, 1e-12);
}

TEST(EvaluateDataset, EmptyTruthExcludedFromWfmOnly) {
  Rng rng(16);
  const D g = blob(rng, 8, 8), p = oracle::random_tensor(rng, {1, 8, 8}, 0, 1);
  const std::vector<MaskPair<double>> pairs{{p, g}, {D({1, 8, 8}), D({1, 8, 8})}};
  const auto r = evaluate_dataset<double>(pairs);
  EXPECT_EQ(r.n_samples, 2u);
  EXPECT_EQ(r.wfm_excluded, 1u);
  EXPECT_NEAR(r.wfm, wfm(p, g), 1e-15);
  EXPECT_NEAR(r.mdice, (mdice(p, g) + 1) / 2, 1e-15);
}

TEST(EvaluateDataset, EmptyListRejected) {
  EXPECT_THROW(evaluate_dataset<double>(std::vector<MaskPair<double>>{}), std::invalid_argument);
}

TEST(EvaluateDataset, RangesHold) {
  Rng rng(17);
  std::vector<MaskPair<double>> pairs;
  for (int i = 0; i < 20; ++i) pairs.push_back({oracle::random_tensor(rng, {1, 12, 12}, 0, 1), blob(rng, 12, 12)});
  const auto r = evaluate_dataset<double>(pairs);
  for (double v : {r.mdice, r.miou, r.wfm, r.smeasure, r.emeasure_max, r.mae}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}
