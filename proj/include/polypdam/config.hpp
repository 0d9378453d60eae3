#pragma once

// Training configuration and the flat `key=value` config file shared by the
// CLI and checkpoints. Keys are the field names of ModelConfig and
// TrainConfig; `seed` sets both the initialization and the training seed.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "polypdam/error.hpp"
#include "polypdam/model.hpp"

namespace polypdam {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t train_size = 352;
  std::vector<double> multiscale_factors{0.75, 1.0, 1.25};
  std::uint64_t seed = 0;
  bool no_dam = false;
  bool no_multiscale = false;
  /// Apply weight decay to bias vectors as well.
  bool decay_biases = true;
  /// Steps between periodic checkpoints; 0 disables them.
  std::size_t checkpoint_every = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr", "must be positive");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay", "must be non-negative");
    if (!(beta1 > 0 && beta1 < 1)) throw ConfigError("beta1", "must lie in (0,1)");
    if (!(beta2 > 0 && beta2 < 1)) throw ConfigError("beta2", "must lie in (0,1)");
    if (!(eps > 0)) throw ConfigError("eps", "must be positive");
    if (train_size < kMinInputSide) throw ConfigError("train_size", "must be >= " + std::to_string(kMinInputSide));
    if (multiscale_factors.empty()) throw ConfigError("multiscale_factors", "must not be empty");
    for (std::size_t i = 0; i < multiscale_factors.size(); ++i) {
      if (!(multiscale_factors[i] > 0)) throw ConfigError("multiscale_factors", "must be positive");
      if (i > 0 && multiscale_factors[i] < multiscale_factors[i - 1]) {
        throw ConfigError("multiscale_factors", "must be sorted ascending");
      }
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  errno = 0;
  const auto r = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw ConfigError(key, "integer out of range: " + v);
  return r;
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double r = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return r;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

/// Round-trippable decimal rendering of a double.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct PipelineConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Applies one key to the matching field. Unknown keys are rejected.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  auto& m = c.model;
  auto& t = c.train;
  if (key == "trunk_width") m.trunk_width = parse_uint(key, value);
  else if (key == "num_pairs") m.num_pairs = parse_uint(key, value);
  else if (key == "mix_size") m.mix_size = parse_uint(key, value);
  else if (key == "input_kernel") m.input_kernel = parse_uint(key, value);
  else if (key == "conv3d_kernel") m.conv3d_kernel = parse_uint(key, value);
  else if (key == "head_taps") {
    m.head_taps.clear();
    for (const auto& s : split_list(value)) m.head_taps.push_back(parse_uint(key, s));
  } else if (key == "seed") m.seed = t.seed = parse_uint(key, value);
  else if (key == "epochs") t.epochs = parse_uint(key, value);
  else if (key == "batch_size") t.batch_size = parse_uint(key, value);
  else if (key == "lr") t.lr = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "beta1") t.beta1 = parse_double(key, value);
  else if (key == "beta2") t.beta2 = parse_double(key, value);
  else if (key == "eps") t.eps = parse_double(key, value);
  else if (key == "train_size") t.train_size = parse_uint(key, value);
  else if (key == "multiscale_factors") {
    t.multiscale_factors.clear();
    for (const auto& s : split_list(value)) t.multiscale_factors.push_back(parse_double(key, s));
  } else if (key == "no_dam") t.no_dam = parse_bool(key, value);
  else if (key == "no_multiscale") t.no_multiscale = parse_bool(key, value);
  else if (key == "decay_biases") t.decay_biases = parse_bool(key, value);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_uint(key, value);
  else throw ConfigError(key, "unknown configuration key");
}

/// Parses `key=value` lines ('#' starts a comment) over the defaults.
inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key=value, got '" + line + "'");
    }
    apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  base.model.multiscale_input = !base.train.no_multiscale;
  return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file: " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config(os.str());
}

/// Inverse of parse_config. Only the training seed is written under `seed`;
/// callers that need a distinct model seed must store it themselves.
inline std::string to_text(const PipelineConfig& c) {
  using detail::format_double;
  const auto& m = c.model;
  const auto& t = c.train;
  auto list = [](const auto& xs, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
    return s;
  };
  auto uint_str = [](std::size_t v) { return std::to_string(v); };
  std::ostringstream os;
  os << "trunk_width=" << m.trunk_width << '\n'
     << "num_pairs=" << m.num_pairs << '\n'
     << "mix_size=" << m.mix_size << '\n'
     << "input_kernel=" << m.input_kernel << '\n'
     << "conv3d_kernel=" << m.conv3d_kernel << '\n';
  if (!m.head_taps.empty()) os << "head_taps=" << list(m.head_taps, uint_str) << '\n';
  os << "seed=" << t.seed << '\n'
     << "epochs=" << t.epochs << '\n'
     << "batch_size=" << t.batch_size << '\n'
     << "lr=" << format_double(t.lr) << '\n'
     << "weight_decay=" << format_double(t.weight_decay) << '\n'
     << "beta1=" << format_double(t.beta1) << '\n'
     << "beta2=" << format_double(t.beta2) << '\n'
     << "eps=" << format_double(t.eps) << '\n'
     << "train_size=" << t.train_size << '\n'
     << "multiscale_factors=" << list(t.multiscale_factors, format_double) << '\n'
     << "no_dam=" << (t.no_dam ? "true" : "false") << '\n'
     << "no_multiscale=" << (t.no_multiscale ? "true" : "false") << '\n'
     << "decay_biases=" << (t.decay_biases ? "true" : "false") << '\n'
     << "checkpoint_every=" << t.checkpoint_every << '\n';
  return os.str();
}

}  // namespace polypdam
