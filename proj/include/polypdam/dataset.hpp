#pragma once

// Dataset layout:
//   root/images/<id>.<ext>   RGB image
//   root/masks/<id>.<ext>    8-bit mask, > 127 is foreground
//   root/depths/<id>.<ext>   optional depth (PNG or .dpt DPT1)
// A split file lists ids one per line; blank lines and '#' comments are
// skipped.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "polypdam/depth.hpp"
#include "polypdam/error.hpp"
#include "polypdam/image_io.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

struct Sample {
  std::string id;
  Tensor<float> image;  // (3,H,W) in [0,1]
  Tensor<float> mask;   // (1,H,W) in {0,1}
  DepthMap depth;       // (1,H,W)
};

struct DatasetOptions {
  /// Used for ids without a depth file; stub depth otherwise.
  ExternalDepthRunner* external = nullptr;
  /// Resample depth maps whose size differs from their image instead of
  /// rejecting them.
  bool resize_depth = false;
};

inline std::vector<std::string> read_split(const fs::path& split_file) {
  std::ifstream is(split_file);
  if (!is) throw IoError("cannot read split file: " + split_file.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.push_back(line.substr(b, e - b + 1));
  }
  return ids;
}

inline const std::vector<std::string>& depth_extensions() {
  static const std::vector<std::string> exts = [] {
    std::vector<std::string> e{".dpt", ".DPT"};
    for (const auto& x : io::image_extensions()) e.push_back(x);
    return e;
  }();
  return exts;
}

/// Depth for one id by precedence: depths/ file, external command, stub.
inline DepthMap resolve_depth(const fs::path& root, const std::string& id, const fs::path& image_path,
                              const Tensor<float>& image, const DatasetOptions& options) {
  if (auto p = io::find_by_stem(root / "depths", id, depth_extensions())) return load_depth(*p);
  if (options.external) return (*options.external)(image_path);
  return stub_depth(image);
}

inline std::vector<Sample> load_dataset(const fs::path& root, const fs::path& split_file,
                                        const DatasetOptions& options = {}) {
  const auto ids = read_split(split_file);
  std::vector<std::string> missing;
  std::vector<std::pair<fs::path, fs::path>> paths;
  for (const auto& id : ids) {
    auto img = io::find_by_stem(root / "images", id, io::image_extensions());
    auto msk = io::find_by_stem(root / "masks", id, io::image_extensions());
    if (!img || !msk) {
      missing.push_back(id + (img ? "" : " (image)") + (msk ? "" : " (mask)"));
      continue;
    }
    paths.emplace_back(*img, *msk);
  }
  if (!missing.empty()) {
    std::string msg = "split references " + std::to_string(missing.size()) + " id(s) with missing files:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Sample s;
    s.id = ids[i];
    s.image = io::read_rgb(paths[i].first);
    s.mask = io::read_mask(paths[i].second);
    const std::size_t H = s.image.dim(1), W = s.image.dim(2);
    if (s.mask.dim(1) != H || s.mask.dim(2) != W) {
      throw ShapeError("sample '" + s.id + "': image " + to_string(s.image.shape()) + " and mask " +
                       to_string(s.mask.shape()) + " differ in size");
    }
    s.depth = resolve_depth(root, s.id, paths[i].first, s.image, options);
    if (s.depth.height() != H || s.depth.width() != W) {
      if (!options.resize_depth) {
        throw ShapeError("sample '" + s.id + "': depth " + to_string(s.depth.values.shape()) +
                         " does not match image size " + std::to_string(H) + "x" + std::to_string(W));
      }
      s.depth = resize_depth(s.depth, H, W);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace polypdam
