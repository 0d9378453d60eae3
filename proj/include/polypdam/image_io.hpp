#pragma once

// Raster I/O through OpenCV's codecs. Tensors are channel-first floats.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "polypdam/error.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam::io {

namespace fs = std::filesystem;

inline cv::Mat read_raw(const fs::path& path, int flags) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw IoError("cannot decode image: " + path.string());
  return m;
}

/// 8-bit sRGB image as (3,H,W) in [0,1], RGB order.
inline Tensor<float> read_rgb(const fs::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_COLOR);
  const std::size_t H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  Tensor<float> out({3, H, W});
  for (std::size_t r = 0; r < H; ++r) {
    const auto* row = m.ptr<cv::Vec3b>(static_cast<int>(r));
    for (std::size_t c = 0; c < W; ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out[(ch * H + r) * W + c] = static_cast<float>(row[c][2 - ch]) / 255.0f;  // BGR -> RGB
      }
    }
  }
  return out;
}

/// Binary mask (1,H,W): 8-bit gray value > 127 is foreground.
inline Tensor<float> read_mask(const fs::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_GRAYSCALE);
  const std::size_t H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  Tensor<float> out({1, H, W});
  for (std::size_t r = 0; r < H; ++r) {
    const auto* row = m.ptr<unsigned char>(static_cast<int>(r));
    for (std::size_t c = 0; c < W; ++c) out[r * W + c] = row[c] > 127 ? 1.0f : 0.0f;
  }
  return out;
}

/// Writes a (C,H,W) tensor in [0,1] as 8-bit (C = 1 or 3) or 16-bit (C = 1).
inline void write_image(const fs::path& path, const Tensor<float>& t, bool sixteen_bit = false) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3) || (sixteen_bit && t.dim(0) != 1)) {
    throw ShapeError("cannot write tensor of shape " + to_string(t.shape()) + " as an image");
  }
  const int H = static_cast<int>(t.dim(1)), W = static_cast<int>(t.dim(2));
  const double full = sixteen_bit ? 65535.0 : 255.0;
  auto q = [full](float v) { return std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * full); };
  cv::Mat m;
  if (t.dim(0) == 1) {
    m = cv::Mat(H, W, sixteen_bit ? CV_16UC1 : CV_8UC1);
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const long v = q(t[static_cast<std::size_t>(r) * W + c]);
        if (sixteen_bit) {
          m.at<unsigned short>(r, c) = static_cast<unsigned short>(v);
        } else {
          m.at<unsigned char>(r, c) = static_cast<unsigned char>(v);
        }
      }
    }
  } else {
    m = cv::Mat(H, W, CV_8UC3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * W + c;
        m.at<cv::Vec3b>(r, c) = cv::Vec3b(static_cast<unsigned char>(q(t[2 * plane + i])),
                                          static_cast<unsigned char>(q(t[plane + i])),
                                          static_cast<unsigned char>(q(t[i])));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

/// Image file stem lookup: first existing `dir/stem.ext` over `exts`.
inline std::optional<fs::path> find_by_stem(const fs::path& dir, const std::string& stem,
                                            const std::vector<std::string>& exts) {
  for (const auto& ext : exts) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

inline const std::vector<std::string>& image_extensions() {
  static const std::vector<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff",
                                             ".PNG", ".JPG", ".JPEG", ".BMP", ".TIF", ".TIFF"};
  return exts;
}

}  // namespace polypdam::io
