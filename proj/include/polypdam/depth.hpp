#pragma once

// Depth priors. The depth model itself is external: maps arrive as files,
// from a user-supplied command, or from cheap stand-ins.
//
// Every DepthMap is (1,H,W) min-max normalized to [0,1]; a constant source
// maps to all zeros.
//
// DPT1 files: "DPT1", u32 LE height, u32 LE width, then height*width
// float32 LE values in row-major order.

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "polypdam/error.hpp"
#include "polypdam/image_io.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

namespace fs = std::filesystem;

enum class DepthSource { File, External, Stub, Zero };

inline const char* to_string(DepthSource s) {
  switch (s) {
    case DepthSource::File: return "file";
    case DepthSource::External: return "external";
    case DepthSource::Stub: return "stub";
    case DepthSource::Zero: return "zero";
  }
  return "?";
}

struct DepthMap {
  Tensor<float> values;  // (1,H,W)
  DepthSource source = DepthSource::Zero;

  std::size_t height() const { return values.dim(1); }
  std::size_t width() const { return values.dim(2); }
};

/// Min-max normalization of raw depth samples.
inline DepthMap normalize_depth(const std::vector<double>& raw, std::size_t h, std::size_t w, DepthSource source) {
  if (raw.size() != h * w) throw ShapeError("depth sample count does not match its size");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double range = *hi - *lo;
  Tensor<float> t({1, h, w});
  if (range > 0) {
    for (std::size_t i = 0; i < raw.size(); ++i) t[i] = static_cast<float>((raw[i] - *lo) / range);
  }
  return {std::move(t), source};
}

inline void write_dpt1(const fs::path& path, std::size_t h, std::size_t w, const std::vector<float>& values) {
  static_assert(std::endian::native == std::endian::little, "DPT1 I/O assumes a little-endian host");
  if (values.size() != h * w) throw ShapeError("DPT1 payload size does not match its dimensions");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const auto H = static_cast<std::uint32_t>(h), W = static_cast<std::uint32_t>(w);
  os.write("DPT1", 4);
  os.write(reinterpret_cast<const char*>(&H), 4);
  os.write(reinterpret_cast<const char*>(&W), 4);
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
}

namespace detail {

inline DepthMap read_dpt1(const fs::path& path, DepthSource source) {
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  std::uint32_t H = 0, W = 0;
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(&H), 4);
  is.read(reinterpret_cast<char*>(&W), 4);
  if (!is || std::memcmp(magic, "DPT1", 4) != 0) throw IoError("bad DPT1 header: " + path.string());
  if (H == 0 || W == 0) throw IoError("DPT1 with zero dimension: " + path.string());
  std::vector<float> vals(static_cast<std::size_t>(H) * W);
  is.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * 4));
  if (!is) throw IoError("truncated DPT1 payload: " + path.string());
  std::vector<double> raw(vals.begin(), vals.end());
  for (double v : raw) {
    if (!std::isfinite(v)) throw IoError("non-finite value in DPT1 file: " + path.string());
  }
  return normalize_depth(raw, H, W, source);
}

inline DepthMap read_depth_png(const fs::path& path, DepthSource source) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode depth image: " + path.string());
  if (m.channels() != 1) {
    throw IoError("depth PNG must be single-channel, got " + std::to_string(m.channels()) + " channels: " +
                  path.string());
  }
  if (m.depth() != CV_8U && m.depth() != CV_16U) {
    throw IoError("unsupported depth PNG bit depth (8 or 16 expected): " + path.string());
  }
  const std::size_t H = static_cast<std::size_t>(m.rows), W = static_cast<std::size_t>(m.cols);
  std::vector<double> raw(H * W);
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      raw[static_cast<std::size_t>(r) * W + c] =
          m.depth() == CV_8U ? m.at<unsigned char>(r, c) : m.at<unsigned short>(r, c);
    }
  }
  return normalize_depth(raw, H, W, source);
}

inline DepthMap load_depth_as(const fs::path& path, DepthSource source) {
  if (!fs::exists(path)) throw IoError("depth file not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  std::array<unsigned char, 8> head{};
  is.read(reinterpret_cast<char*>(head.data()), head.size());
  static constexpr std::array<unsigned char, 8> png_sig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (is.gcount() >= 4 && std::memcmp(head.data(), "DPT1", 4) == 0) return read_dpt1(path, source);
  if (is.gcount() == 8 && head == png_sig) return read_depth_png(path, source);
  throw IoError("unsupported depth file format (PNG or DPT1 expected): " + path.string());
}

}  // namespace detail

/// Single-channel 8/16-bit PNG or DPT1 file, chosen by content.
inline DepthMap load_depth(const fs::path& path) { return detail::load_depth_as(path, DepthSource::File); }

/// Luminance (0.299 R + 0.587 G + 0.114 B) stand-in for a (3,H,W) image.
inline DepthMap stub_depth(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("stub_depth expects (3,H,W), got " + to_string(image.shape()));
  const std::size_t plane = image.dim(1) * image.dim(2);
  std::vector<double> lum(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    lum[i] = 0.299 * image[i] + 0.587 * image[plane + i] + 0.114 * image[2 * plane + i];
  }
  return normalize_depth(lum, image.dim(1), image.dim(2), DepthSource::Stub);
}

inline DepthMap zero_depth(std::size_t h, std::size_t w) { return {Tensor<float>({1, h, w}), DepthSource::Zero}; }

/// (1,H,W) depth stacked into three identical channels.
inline Tensor<float> replicate3(const DepthMap& d) {
  const std::size_t plane = d.values.size();
  Tensor<float> out({3, d.height(), d.width()});
  for (std::size_t c = 0; c < 3; ++c) std::copy_n(d.values.data(), plane, out.data() + c * plane);
  return out;
}

/// Bilinear resize followed by renormalization.
inline DepthMap resize_depth(const DepthMap& d, std::size_t h, std::size_t w) {
  if (d.height() == h && d.width() == w) return d;
  const Tensor<float> r = kernels::bilinear_forward(d.values, h, w);
  std::vector<double> raw(r.values().begin(), r.values().end());
  return normalize_depth(raw, h, w, d.source);
}

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// Runs an external depth estimator through `/bin/sh -c`.
///
/// The template's `{in}` and `{out}` placeholders are replaced by the
/// shell-quoted image path and an output path inside the cache directory.
/// Results are cached by SHA-256 of (template, image bytes), so a repeated
/// request does not launch the command again.
class ExternalDepthRunner {
 public:
  ExternalDepthRunner(std::string command_template, fs::path cache_dir,
                      std::chrono::milliseconds timeout = std::chrono::seconds(120))
      : template_(std::move(command_template)), cache_dir_(std::move(cache_dir)), timeout_(timeout) {
    if (template_.find("{in}") == std::string::npos || template_.find("{out}") == std::string::npos) {
      throw ConfigError("command_template", "must contain both {in} and {out} placeholders");
    }
    fs::create_directories(cache_dir_);
  }

  DepthMap operator()(const fs::path& image_path) {
    const std::string key = sha256_hex(template_ + '\0' + read_file(image_path));
    const fs::path out = cache_dir_ / (key + ".depth");
    std::lock_guard<std::mutex> lock(path_mutex(out));
    if (!fs::exists(out)) run(image_path, out);
    return detail::load_depth_as(out, DepthSource::External);
  }

  /// Number of processes launched so far.
  std::size_t launches() const { return launches_; }

  const fs::path& cache_dir() const { return cache_dir_; }

 private:
  static std::mutex& path_mutex(const fs::path& p) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::mutex> mutexes;
    std::lock_guard<std::mutex> lock(registry_mutex);
    return mutexes[p.string()];
  }

  static std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
      if (c == '\'') {
        q += "'\\''";
      } else {
        q += c;
      }
    }
    return q + "'";
  }

  static void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  }

  void run(const fs::path& image_path, const fs::path& out) {
    const fs::path partial = out.string() + ".partial";
    const fs::path log = out.string() + ".log";
    std::string cmd = template_;
    replace_all(cmd, "{in}", shell_quote(fs::absolute(image_path).string()));
    replace_all(cmd, "{out}", shell_quote(fs::absolute(partial).string()));
    fs::remove(partial);

    ++launches_;
    const pid_t pid = fork();
    if (pid < 0) throw ExternalToolError("fork failed for external depth command", "");
    if (pid == 0) {
      setpgid(0, 0);
      FILE* f = std::fopen(log.c_str(), "w");
      if (f) {
        dup2(fileno(f), STDOUT_FILENO);
        dup2(fileno(f), STDERR_FILENO);
      }
      execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }

    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    int status = 0;
    for (;;) {
      const pid_t r = waitpid(pid, &status, WNOHANG);
      if (r == pid) break;
      if (r < 0) throw ExternalToolError("waitpid failed for external depth command", "");
      if (std::chrono::steady_clock::now() >= deadline) {
        kill(-pid, SIGKILL);
        kill(pid, SIGKILL);
        waitpid(pid, &status, 0);
        throw ExternalToolError("external depth command timed out after " +
                                    std::to_string(timeout_.count()) + " ms: " + cmd,
                                diagnostics(log));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      throw ExternalToolError("external depth command failed with status " + std::to_string(code) + ": " + cmd,
                              diagnostics(log));
    }
    if (!fs::exists(partial)) {
      throw ExternalToolError("external depth command produced no output file: " + cmd, diagnostics(log));
    }
    fs::rename(partial, out);
  }

  static std::string diagnostics(const fs::path& log) {
    std::error_code ec;
    if (!fs::exists(log, ec)) return {};
    return read_file(log);
  }

  std::string template_;
  fs::path cache_dir_;
  std::chrono::milliseconds timeout_;
  std::atomic<std::size_t> launches_{0};
};

}  // namespace polypdam
