#pragma once

// Synthetic datasets: elliptical "lesions" on textured backgrounds, either
// visible in the image or encoded only in the depth map.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "polypdam/dataset.hpp"
#include "polypdam/depth.hpp"
#include "polypdam/image_io.hpp"
#include "polypdam/random.hpp"

namespace fixture {

namespace fs = std::filesystem;
using polypdam::Rng;
using polypdam::Sample;
using polypdam::Tensor;

/// Directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("polypdam_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

enum class Cue {
  Image,  // the lesion differs in colour; depth is the luminance stand-in
  Depth,  // the image is pure noise; only the depth map shows the lesion
};

inline Sample make_sample(Rng& rng, std::size_t side, const std::string& id, Cue cue) {
  Sample s;
  s.id = id;
  s.image = Tensor<float>({3, side, side});
  s.mask = Tensor<float>({1, side, side});
  const double n = static_cast<double>(side);
  const double cy = rng.uniform(0.25, 0.75) * n, cx = rng.uniform(0.25, 0.75) * n;
  const double ry = rng.uniform(0.1, 0.22) * n, rx = rng.uniform(0.1, 0.22) * n;
  std::vector<double> depth(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double q = std::pow((y - cy) / ry, 2) + std::pow((x - cx) / rx, 2);
      const bool fg = q <= 1.0;
      s.mask[y * side + x] = fg ? 1.0f : 0.0f;
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (cue == Cue::Depth) {
          v = rng.uniform();
        } else {
          const double base = fg ? (c == 0 ? 0.8 : 0.35) : (c == 0 ? 0.55 : 0.45);
          v = base + 0.1 * rng.uniform(-1, 1);
        }
        s.image[(c * side + y) * side + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      depth[y * side + x] = (fg ? 1.0 : 0.0) + 0.2 * rng.uniform();
    }
  }
  s.depth = cue == Cue::Depth ? polypdam::normalize_depth(depth, side, side, polypdam::DepthSource::File)
                              : polypdam::stub_depth(s.image);
  return s;
}

inline std::vector<Sample> make_samples(std::size_t count, std::size_t side, Cue cue, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case%03zu", i);
    out.push_back(make_sample(rng, side, id, cue));
  }
  return out;
}

/// Writes images/ and masks/ as 8-bit PNGs, depths/ as 16-bit PNGs for
/// samples whose index is in `with_depth`, and a split file. Returns the
/// split path.
inline fs::path write_dataset(const fs::path& root, const std::vector<Sample>& samples,
                              const std::vector<std::size_t>& with_depth = {}) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream split(root / "split.txt");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    polypdam::io::write_image(root / "images" / (s.id + ".png"), s.image);
    polypdam::io::write_image(root / "masks" / (s.id + ".png"), s.mask);
    if (std::find(with_depth.begin(), with_depth.end(), i) != with_depth.end()) {
      fs::create_directories(root / "depths");
      polypdam::io::write_image(root / "depths" / (s.id + ".png"), s.depth.values, true);
    }
    split << s.id << '\n';
  }
  return root / "split.txt";
}

}  // namespace fixture
