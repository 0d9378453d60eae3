#pragma once

// Checkpoint file:
//   "M2XC"  u32 LE version  u64 LE header length  header text  payload
//
// The header is UTF-8 `key=value` lines: the pipeline config, the model
// seed, trainer state, then one `tensor=<group> <name> <d0,d1,...>` line per
// stored tensor. The payload is every tensor's float32 LE values in header
// order. Loss values are stored as hex floats so they round-trip exactly.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polypdam/config.hpp"
#include "polypdam/error.hpp"
#include "polypdam/model.hpp"
#include "polypdam/tensor.hpp"

namespace polypdam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// Trainer position, enough to continue a run exactly.
struct TrainState {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  /// Position inside `order` for the current epoch.
  std::uint64_t cursor = 0;
  std::vector<std::size_t> order;
  std::string rng;
  std::vector<double> epoch_losses;
  double running_loss = 0;
  std::uint64_t running_batches = 0;
  std::uint64_t scale_draws = 0;
};

struct Checkpoint {
  PipelineConfig config;
  TrainState state;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> moment1;
  std::vector<NamedTensor> moment2;
};

namespace detail {

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::string shape_text(const Shape& s) {
  if (s.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out;
}

template <class U>
void write_le(std::ostream& os, U v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U read_le(std::istream& is, const char* what) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  using namespace detail;
  std::ostringstream h;
  h << to_text(ck.config);
  h << "model_seed=" << ck.config.model.seed << '\n';
  h << "state.step=" << ck.state.step << '\n'
    << "state.epoch=" << ck.state.epoch << '\n'
    << "state.cursor=" << ck.state.cursor << '\n'
    << "state.order=";
  for (std::size_t i = 0; i < ck.state.order.size(); ++i) h << (i ? "," : "") << ck.state.order[i];
  h << '\n' << "state.rng=" << ck.state.rng << '\n' << "state.epoch_losses=";
  for (std::size_t i = 0; i < ck.state.epoch_losses.size(); ++i) h << (i ? "," : "") << hex_double(ck.state.epoch_losses[i]);
  h << '\n'
    << "state.running_loss=" << hex_double(ck.state.running_loss) << '\n'
    << "state.running_batches=" << ck.state.running_batches << '\n'
    << "state.scale_draws=" << ck.state.scale_draws << '\n';
  auto dir = [&](const char* group, const std::vector<NamedTensor>& ts) {
    for (const auto& t : ts) h << "tensor=" << group << ' ' << t.name << ' ' << shape_text(t.value.shape()) << '\n';
  };
  dir("param", ck.params);
  dir("m", ck.moment1);
  dir("v", ck.moment2);
  const std::string header = h.str();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path.string());
    os.write("M2XC", 4);
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto* group : {&ck.params, &ck.moment1, &ck.moment2}) {
      for (const auto& t : *group) {
        os.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * 4));
      }
    }
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "M2XC", 4) != 0) throw CheckpointError("not a checkpoint (bad magic): " + path.string());
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = read_le<std::uint64_t>(is, "header length");
  if (header_len > (1ull << 30)) throw CheckpointError("implausible checkpoint header length");
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw CheckpointError("checkpoint truncated inside its header");

  Checkpoint ck;
  std::string config_text;
  struct Entry {
    std::string group, name;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::uint64_t model_seed = 0;
  bool have_model_seed = false;
  std::istringstream hs(header);
  std::string line;
  try {
    while (std::getline(hs, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw CheckpointError("malformed checkpoint header line: " + line);
      const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      auto& s = ck.state;
      if (key == "tensor") {
        std::istringstream es(val);
        Entry e;
        std::string dims;
        es >> e.group >> e.name >> dims;
        if (dims != "-") {
          for (const auto& d : split_list(dims)) e.shape.push_back(parse_uint("tensor", d));
        }
        entries.push_back(std::move(e));
      } else if (key == "model_seed") {
        model_seed = parse_uint(key, val);
        have_model_seed = true;
      } else if (key == "state.step") s.step = parse_uint(key, val);
      else if (key == "state.epoch") s.epoch = parse_uint(key, val);
      else if (key == "state.cursor") s.cursor = parse_uint(key, val);
      else if (key == "state.order") {
        for (const auto& x : split_list(val)) s.order.push_back(parse_uint(key, x));
      } else if (key == "state.rng") s.rng = val;
      else if (key == "state.epoch_losses") {
        for (const auto& x : split_list(val)) s.epoch_losses.push_back(parse_double(key, x));
      } else if (key == "state.running_loss") s.running_loss = parse_double(key, val);
      else if (key == "state.running_batches") s.running_batches = parse_uint(key, val);
      else if (key == "state.scale_draws") s.scale_draws = parse_uint(key, val);
      else config_text += line + '\n';
    }
    ck.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  if (have_model_seed) ck.config.model.seed = model_seed;

  for (const auto& e : entries) {
    Tensor<float> t(e.shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 4));
    if (!is) throw CheckpointError("checkpoint payload truncated at tensor '" + e.name + "'");
    NamedTensor nt{e.name, std::move(t)};
    if (e.group == "param") ck.params.push_back(std::move(nt));
    else if (e.group == "m") ck.moment1.push_back(std::move(nt));
    else if (e.group == "v") ck.moment2.push_back(std::move(nt));
    else throw CheckpointError("unknown tensor group '" + e.group + "' in checkpoint");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

/// Snapshot of a model's parameters, in parameters() order.
template <class T>
std::vector<NamedTensor> export_parameters(const Model<T>& m) {
  std::vector<NamedTensor> out;
  for (const auto& p : m.parameters()) out.push_back({p.name, p.var.value().template cast<float>()});
  return out;
}

/// Builds a model for `config` and overwrites its parameters, checking
/// names and shapes one by one.
template <class T>
Model<T> model_from(const ModelConfig& config, const std::vector<NamedTensor>& params) {
  Model<T> m = build<T>(config);
  auto slots = m.parameters();
  if (slots.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(params.size()) + " tensors, model expects " +
                          std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != params[i].name || slots[i].var.shape() != params[i].value.shape()) {
      throw CheckpointError("checkpoint tensor '" + params[i].name + "' " + to_string(params[i].value.shape()) +
                            " does not match model slot '" + slots[i].name + "' " + to_string(slots[i].var.shape()));
    }
    slots[i].var.mutable_value() = params[i].value.template cast<T>();
  }
  return m;
}

}  // namespace polypdam
