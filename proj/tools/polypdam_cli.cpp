// Command-line front end: train, eval, infer, depth, params.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "polypdam/polypdam.hpp"

namespace fs = std::filesystem;
using namespace polypdam;

namespace {

struct DataArgs {
  std::string data;
  std::string split;
  std::string depth_cmd;
  std::string depth_cache;
  double timeout = 120;
  bool resize_depth = false;
};

void add_data_options(CLI::App* cmd, DataArgs& a) {
  cmd->add_option("--data", a.data, "Dataset root (images/, masks/, optional depths/)")->required();
  cmd->add_option("--split", a.split, "File listing sample ids, one per line")->required();
  cmd->add_option("--depth-cmd", a.depth_cmd, "External depth command for ids without a depth file ({in}, {out})");
  cmd->add_option("--depth-cache", a.depth_cache, "Cache directory for --depth-cmd (default DATA/.depth_cache)");
  cmd->add_option("--timeout", a.timeout, "External depth command timeout in seconds")->check(CLI::PositiveNumber);
  cmd->add_flag("--resize-depth", a.resize_depth, "Resample depth maps whose size differs from their image");
}

std::vector<Sample> load_samples(const DataArgs& a) {
  std::optional<ExternalDepthRunner> runner;
  DatasetOptions opts;
  opts.resize_depth = a.resize_depth;
  if (!a.depth_cmd.empty()) {
    const fs::path cache = a.depth_cache.empty() ? fs::path(a.data) / ".depth_cache" : fs::path(a.depth_cache);
    runner.emplace(a.depth_cmd, cache, std::chrono::milliseconds(static_cast<long long>(a.timeout * 1000)));
    opts.external = &*runner;
  }
  return load_dataset(a.data, a.split, opts);
}

std::string with_extension(const fs::path& p, const char* ext) {
  fs::path q = p;
  return q.replace_extension(ext).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-prior polyp segmentation: training, evaluation and inference"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  DataArgs train_data;
  std::string config_path, out_path = "model.m2xc", resume_path;
  bool no_dam = false, no_multiscale = false;
  std::optional<std::uint64_t> seed;
  add_data_options(train, train_data);
  auto* config_opt = train->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  train->add_flag("--no-dam", no_dam, "Train with all-zero depth");
  train->add_flag("--no-multiscale", no_multiscale, "Single-scale input and no rescale draws");
  train->add_option("--seed", seed, "Seed for initialization and training (overrides the config)");
  train->add_option("--out", out_path, "Checkpoint path");
  auto* resume_opt =
      train->add_option("--resume", resume_path, "Continue from a checkpoint (its config is used)")->check(CLI::ExistingFile);
  config_opt->excludes(resume_opt);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  DataArgs eval_data;
  std::string ckpt_path, report_path;
  double threshold = metrics::kBinarizeThreshold;
  add_data_options(eval, eval_data);
  eval->add_option("--ckpt", ckpt_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--threshold", threshold, "Binarization threshold for mDice/mIoU")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--report", report_path, "Report path (.json or .md; the other format is written alongside)");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict a mask for one image");
  std::string infer_ckpt, image_path, depth_path, mask_out, binary_out;
  bool stub = false, zero = false;
  double infer_threshold = metrics::kBinarizeThreshold;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--image", image_path, "Input image")->required();
  auto* depth_opt = infer->add_option("--depth", depth_path, "Depth file (PNG or DPT1)");
  auto* stub_opt = infer->add_flag("--stub-depth", stub, "Use luminance stand-in depth (default)");
  auto* zero_opt = infer->add_flag("--zero-depth", zero, "Use all-zero depth");
  depth_opt->excludes(stub_opt)->excludes(zero_opt);
  stub_opt->excludes(zero_opt);
  infer->add_option("--out", mask_out, "Output 8-bit probability PNG")->required();
  infer->add_option("--binary-out", binary_out, "Optional binarized PNG");
  infer->add_option("--threshold", infer_threshold, "Threshold for --binary-out")->check(CLI::Range(0.0, 1.0));

  // depth
  auto* depth = app.add_subcommand("depth", "Precompute depth maps with an external command");
  std::string cmd_template, depth_data, depth_split, depth_cache;
  double depth_timeout = 120;
  bool force = false;
  depth->add_option("--cmd", cmd_template, "Command template with {in} and {out}")->required();
  depth->add_option("--data", depth_data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  depth->add_option("--split", depth_split, "Restrict to these ids (default: every image)");
  depth->add_option("--cache", depth_cache, "Cache directory (default DATA/.depth_cache)");
  depth->add_option("--timeout", depth_timeout, "Per-image timeout in seconds")->check(CLI::PositiveNumber);
  depth->add_flag("--force", force, "Recompute ids that already have a depth file");

  // params
  auto* params = app.add_subcommand("params", "Print parameter counts");
  std::string params_config;
  params->add_option("--config", params_config, "key=value config file (defaults when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto samples = load_samples(train_data);
      std::optional<Trainer> trainer;
      if (!resume_path.empty()) {
        trainer.emplace(samples, load_checkpoint(resume_path));
      } else {
        if (config_path.empty()) throw ConfigError("config", "train needs --config or --resume");
        PipelineConfig cfg = load_config(config_path);
        if (seed) cfg.model.seed = cfg.train.seed = *seed;
        cfg.train.no_dam = cfg.train.no_dam || no_dam;
        cfg.train.no_multiscale = cfg.train.no_multiscale || no_multiscale;
        trainer.emplace(samples, cfg);
      }
      std::cerr << "training " << samples.size() << " samples, " << trainer->total_steps() << " steps, "
                << param_count(trainer->config().model) << " parameters\n";
      trainer->run(0, [&](const Checkpoint& ck) {
        const std::string p = out_path + ".step" + std::to_string(ck.state.step);
        save_checkpoint(p, ck);
        std::cerr << "wrote " << p << '\n';
      });
      save_checkpoint(out_path, trainer->checkpoint());
      std::cerr << "wrote " << out_path << '\n';
    } else if (eval->parsed()) {
      const auto samples = load_samples(eval_data);
      const Evaluation ev = evaluate(load_checkpoint(ckpt_path), samples, threshold);
      std::cout << report_markdown(ev);
      if (!report_path.empty()) {
        const fs::path p(report_path);
        write_report(p, ev);
        write_report(with_extension(p, p.extension() == ".json" ? ".md" : ".json"), ev);
      }
    } else if (infer->parsed()) {
      const Checkpoint ck = load_checkpoint(infer_ckpt);
      const Model<float> model = model_from<float>(ck.config.model, ck.params);
      const Tensor<float> image = io::read_rgb(image_path);
      const std::size_t H = image.dim(1), W = image.dim(2);
      DepthMap d;
      if (!depth_path.empty()) {
        d = load_depth(depth_path);
        if (d.height() != H || d.width() != W) throw ShapeError("depth size does not match the image");
      } else if (zero || (!stub && ck.config.train.no_dam)) {
        d = zero_depth(H, W);
      } else {
        d = stub_depth(image);
      }
      const Tensor<float> p = predict(model, image, replicate3(d));
      io::write_image(mask_out, p);
      if (!binary_out.empty()) io::write_image(binary_out, binary_mask(p, infer_threshold));
    } else if (depth->parsed()) {
      const fs::path root(depth_data);
      ExternalDepthRunner runner(cmd_template, depth_cache.empty() ? root / ".depth_cache" : fs::path(depth_cache),
                                 std::chrono::milliseconds(static_cast<long long>(depth_timeout * 1000)));
      std::vector<std::string> ids;
      if (!depth_split.empty()) {
        ids = read_split(depth_split);
      } else {
        for (const auto& e : fs::directory_iterator(root / "images")) {
          if (e.is_regular_file()) ids.push_back(e.path().stem().string());
        }
        std::sort(ids.begin(), ids.end());
      }
      fs::create_directories(root / "depths");
      std::size_t written = 0;
      for (const auto& id : ids) {
        if (!force && io::find_by_stem(root / "depths", id, depth_extensions())) continue;
        const auto img = io::find_by_stem(root / "images", id, io::image_extensions());
        if (!img) throw IoError("no image for id '" + id + "'");
        const DepthMap d = runner(*img);
        write_dpt1(root / "depths" / (id + ".dpt"), d.height(), d.width(), d.values.vector());
        ++written;
      }
      std::cerr << "wrote " << written << " depth map(s), " << runner.launches() << " command launch(es)\n";
    } else if (params->parsed()) {
      const PipelineConfig cfg = params_config.empty() ? PipelineConfig{} : load_config(params_config);
      cfg.model.validate();
      const std::size_t closed = param_count(cfg.model);
      const std::size_t enumerated = build<float>(cfg.model).enumerate_parameters();
      std::cout << "closed_form=" << closed << "\nenumerated=" << enumerated << "\nreference=470000\n";
      if (closed != enumerated) return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
