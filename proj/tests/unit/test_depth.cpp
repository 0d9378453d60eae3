#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "polypdam/depth.hpp"
#include "polypdam/model.hpp"

using namespace polypdam;
using fixture::TempDir;
namespace fs = std::filesystem;

namespace {

void expect_normalized(const DepthMap& d, bool full_range) {
  float lo = 1, hi = 0;
  for (float v : d.values.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.0f);
  EXPECT_LE(hi, 1.0f);
  if (full_range) {
    EXPECT_EQ(lo, 0.0f);
    EXPECT_EQ(hi, 1.0f);
  }
}

fs::path write_png16(const fs::path& p, const cv::Mat& m) {
  cv::imwrite(p.string(), m);
  return p;
}

}  // namespace

// --- load_depth ------------------------------------------------------------

TEST(LoadDepth, SixteenBitEndpoints) {
  TempDir dir;
  cv::Mat m(2, 3, CV_16UC1, cv::Scalar(0));
  m.at<std::uint16_t>(0, 1) = 65535;
  m.at<std::uint16_t>(1, 2) = 65535;
  const DepthMap d = load_depth(write_png16(dir / "d.png", m));
  EXPECT_EQ(d.source, DepthSource::File);
  ASSERT_EQ(d.values.shape(), (Shape{1, 2, 3}));
  const std::vector<float> want{0, 1, 0, 0, 0, 1};
  EXPECT_EQ(d.values.vector(), want);
}

TEST(LoadDepth, ConstantFileIsZeros) {
  TempDir dir;
  const DepthMap d = load_depth(write_png16(dir / "c.png", cv::Mat(4, 5, CV_8UC1, cv::Scalar(77))));
  for (float v : d.values.values()) EXPECT_EQ(v, 0.0f);
  expect_normalized(d, false);
}

TEST(LoadDepth, EightBitRampIsLinear) {
  TempDir dir;
  cv::Mat m(1, 256, CV_8UC1);
  for (int i = 0; i < 256; ++i) m.at<std::uint8_t>(0, i) = static_cast<std::uint8_t>(i);
  const DepthMap d = load_depth(write_png16(dir / "r.png", m));
  for (int i = 0; i < 256; ++i) EXPECT_NEAR(d.values[i], i / 255.0, 1e-6) << i;
  expect_normalized(d, true);
}

TEST(LoadDepth, Dpt1RoundTripNormalizes) {
  TempDir dir;
  Rng rng(1);
  std::vector<float> raw(6 * 7);
  for (float& v : raw) v = static_cast<float>(rng.uniform(-3, 40));
  write_dpt1(dir / "x.dpt", 6, 7, raw);
  const DepthMap d = load_depth(dir / "x.dpt");
  ASSERT_EQ(d.values.shape(), (Shape{1, 6, 7}));
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(d.values[i], (raw[i] - *lo) / (*hi - *lo), 1e-6);
  expect_normalized(d, true);
  EXPECT_EQ(fs::file_size(dir / "x.dpt"), 12 + 4 * raw.size());
}

TEST(LoadDepth, Errors) {
  TempDir dir;
  EXPECT_THROW(load_depth(dir / "missing.png"), IoError);
  cv::imwrite((dir / "rgb.png").string(), cv::Mat(3, 3, CV_8UC3, cv::Scalar(1, 2, 3)));
  EXPECT_THROW(load_depth(dir / "rgb.png"), IoError);
  std::ofstream(dir / "junk.dpt") << "not a depth file";
  EXPECT_THROW(load_depth(dir / "junk.dpt"), IoError);
  // Truncated DPT1 payload.
  write_dpt1(dir / "t.dpt", 4, 4, std::vector<float>(16, 1.0f));
  fs::resize_file(dir / "t.dpt", 12 + 4 * 10);
  EXPECT_THROW(load_depth(dir / "t.dpt"), IoError);
}

// --- stub / zero / replicate ----------------------------------------------

TEST(StubDepth, GrayImageIsNormalizedChannel) {
  Rng rng(2);
  Tensor<float> img({3, 5, 6});
  std::vector<double> gray(30);
  for (std::size_t i = 0; i < 30; ++i) {
    gray[i] = rng.uniform(0.2, 0.7);
    for (std::size_t c = 0; c < 3; ++c) img[c * 30 + i] = static_cast<float>(gray[i]);
  }
  const DepthMap d = stub_depth(img);
  EXPECT_EQ(d.source, DepthSource::Stub);
  const auto [lo, hi] = std::minmax_element(gray.begin(), gray.end());
  for (std::size_t i = 0; i < 30; ++i) EXPECT_NEAR(d.values[i], (gray[i] - *lo) / (*hi - *lo), 1e-5);
  expect_normalized(d, true);
}

TEST(StubDepth, ConstantImageIsZeros) {
  const DepthMap d = stub_depth(Tensor<float>({3, 4, 4}, 0.3f));
  for (float v : d.values.values()) EXPECT_EQ(v, 0.0f);
}

TEST(StubDepth, RandomImageMatchesLoopOracle) {
  Rng rng(3);
  Tensor<float> img({3, 7, 5});
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  std::vector<double> lum(35);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      lum[r * 5 + c] = 0.299 * img.at({0, r, c}) + 0.587 * img.at({1, r, c}) + 0.114 * img.at({2, r, c});
  const auto [lo, hi] = std::minmax_element(lum.begin(), lum.end());
  const DepthMap d = stub_depth(img);
  for (std::size_t i = 0; i < 35; ++i) EXPECT_NEAR(d.values[i], (lum[i] - *lo) / (*hi - *lo), 1e-6);
}

TEST(ZeroDepth, AllZerosAndReplicated) {
  const DepthMap z = zero_depth(4, 4);
  EXPECT_EQ(z.source, DepthSource::Zero);
  EXPECT_EQ(z.values.size(), 16u);
  for (float v : z.values.values()) EXPECT_EQ(v, 0.0f);
  Rng rng(4);
  std::vector<double> raw(12);
  for (double& v : raw) v = rng.uniform();
  const DepthMap d = normalize_depth(raw, 3, 4, DepthSource::File);
  const Tensor<float> r = replicate3(d);
  ASSERT_EQ(r.shape(), (Shape{3, 3, 4}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(r[c * 12 + i], d.values[i]);
}

TEST(ZeroDepth, ForwardDiffersFromStubDepth) {
  ModelConfig cfg;
  cfg.trunk_width = 3;
  cfg.num_pairs = 4;
  cfg.mix_size = 4;
  cfg.seed = 5;
  const auto m = build<float>(cfg);
  Rng rng(5);
  Tensor<float> img({3, 64, 64});
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  NoGradGuard guard;
  const auto x = Var<float>::constant(img);
  const Tensor<float> a = forward(m, x, Var<float>::constant(replicate3(zero_depth(64, 64))))[0].value();
  const Tensor<float> b = forward(m, x, Var<float>::constant(replicate3(stub_depth(img))))[0].value();
  EXPECT_TRUE(a.all_finite());
  EXPECT_NE(a, b);
}

TEST(ResizeDepth, KeepsNormalization) {
  Rng rng(6);
  std::vector<double> raw(20);
  for (double& v : raw) v = rng.uniform();
  const DepthMap d = resize_depth(normalize_depth(raw, 4, 5, DepthSource::File), 9, 3);
  EXPECT_EQ(d.values.shape(), (Shape{1, 9, 3}));
  EXPECT_EQ(d.source, DepthSource::File);
  expect_normalized(d, true);
}

// --- external command ------------------------------------------------------

class ExternalDepth : public ::testing::Test {
 protected:
  void SetUp() override {
    cv::Mat m(6, 8, CV_16UC1);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < 8; ++c) m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(1000 * r + 37 * c);
    input = dir / "in put's.png";  // exercises shell quoting
    cv::imwrite(input.string(), m);
  }
  TempDir dir;
  fs::path input;
};

TEST_F(ExternalDepth, IdentityCommandMatchesLoadDepth) {
  ExternalDepthRunner run("cp {in} {out}", dir / "cache");
  const DepthMap d = run(input);
  EXPECT_EQ(d.source, DepthSource::External);
  EXPECT_EQ(d.values, load_depth(input).values);
  EXPECT_EQ(run.launches(), 1u);
}

TEST_F(ExternalDepth, SecondCallIsCached) {
  ExternalDepthRunner run("cp {in} {out}", dir / "cache");
  const DepthMap a = run(input);
  const DepthMap b = run(input);
  EXPECT_EQ(run.launches(), 1u);
  EXPECT_EQ(a.values, b.values);
  // A fresh runner on the same cache directory also reuses the result.
  ExternalDepthRunner again("cp {in} {out}", dir / "cache");
  again(input);
  EXPECT_EQ(again.launches(), 0u);
  // A different command is a different cache key.
  ExternalDepthRunner other("cat {in} > {out}", dir / "cache");
  other(input);
  EXPECT_EQ(other.launches(), 1u);
}

TEST_F(ExternalDepth, FailingCommandCarriesDiagnostics) {
  ExternalDepthRunner run("echo estimator exploded >&2; exit 3; cp {in} {out}", dir / "cache");
  try {
    run(input);
    FAIL() << "expected ExternalToolError";
  } catch (const ExternalToolError& e) {
    EXPECT_NE(e.diagnostics().find("estimator exploded"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("status 3"), std::string::npos);
  }
}

TEST_F(ExternalDepth, MissingOutputIsAnError) {
  ExternalDepthRunner run("true {in} {out}", dir / "cache");
  EXPECT_THROW(run(input), ExternalToolError);
}

TEST_F(ExternalDepth, TimeoutKillsTheCommand) {
  ExternalDepthRunner run("sleep 30; cp {in} {out}", dir / "cache", std::chrono::milliseconds(200));
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(run(input), ExternalToolError);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(5));
}

TEST_F(ExternalDepth, TemplateNeedsBothPlaceholders) {
  try {
    ExternalDepthRunner run("cp {in} somewhere", dir / "cache");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "command_template");
  }
}

TEST_F(ExternalDepth, ConcurrentCallsShareOneLaunch) {
  ExternalDepthRunner run("sleep 0.2; cp {in} {out}", dir / "cache");
  cv::Mat m2(6, 8, CV_8UC1, cv::Scalar(0));
  m2.at<std::uint8_t>(2, 2) = 200;
  const fs::path second = dir / "second.png";
  cv::imwrite(second.string(), m2);
  DepthMap a, b, c;
  std::thread t1([&] { a = run(input); }), t2([&] { b = run(input); }), t3([&] { c = run(second); });
  t1.join();
  t2.join();
  t3.join();
  EXPECT_EQ(run.launches(), 2u);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(c.values, load_depth(second).values);
}
