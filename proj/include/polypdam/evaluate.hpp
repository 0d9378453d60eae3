#pragma once

// Evaluation, inference and report writers.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "polypdam/autograd.hpp"
#include "polypdam/checkpoint.hpp"
#include "polypdam/dataset.hpp"
#include "polypdam/image_io.hpp"
#include "polypdam/kernels.hpp"
#include "polypdam/metrics.hpp"
#include "polypdam/model.hpp"
#include "polypdam/train.hpp"

namespace polypdam {

/// Produces a (1,h,w) foreground probability map for a sample.
using Predictor = std::function<Tensor<float>(const Sample&)>;

struct ImageRow {
  std::string id;
  metrics::ImageScores scores;
};

struct Evaluation {
  metrics::MetricReport report;
  std::vector<ImageRow> rows;  // sorted by id
  double threshold = metrics::kBinarizeThreshold;
};

/// M_o for one image/depth pair, computed without recording a graph.
inline Tensor<float> predict(const Model<float>& m, const Tensor<float>& image, const Tensor<float>& depth) {
  if (image.rank() != 3 || image.dim(1) < kMinInputSide || image.dim(2) < kMinInputSide) {
    throw ShapeError("inference needs an image of at least " + std::to_string(kMinInputSide) + "x" +
                     std::to_string(kMinInputSide) + ", got " + to_string(image.shape()));
  }
  NoGradGuard guard;
  return forward(m, Var<float>::constant(image), Var<float>::constant(depth))[0].value();
}

inline Predictor model_predictor(const Model<float>& m, bool no_dam) {
  return [&m, no_dam](const Sample& s) { return predict(m, s.image, depth_input(s, no_dam)); };
}

/// Scores every sample's prediction against its mask. Predictions of a
/// different size are bilinearly resampled to the mask first.
inline Evaluation evaluate_predictions(const std::vector<Sample>& samples, const Predictor& predictor,
                                       double threshold = metrics::kBinarizeThreshold) {
  if (samples.empty()) throw std::invalid_argument("evaluation needs at least one sample");
  std::vector<const Sample*> sorted;
  for (const auto& s : samples) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });

  Evaluation ev;
  ev.threshold = threshold;
  std::vector<metrics::ImageScores> scores;
  for (const Sample* s : sorted) {
    Tensor<float> p = predictor(*s);
    if (p.rank() != 3 || p.dim(0) != 1) throw ShapeError("predictor must return (1,h,w), got " + to_string(p.shape()));
    if (p.shape() != s->mask.shape()) p = kernels::bilinear_forward(p, s->mask.dim(1), s->mask.dim(2));
    scores.push_back(metrics::score_image(p, s->mask, threshold));
    ev.rows.push_back({s->id, scores.back()});
  }
  ev.report = metrics::aggregate(scores);
  return ev;
}

inline Evaluation evaluate(const Checkpoint& ck, const std::vector<Sample>& samples,
                           double threshold = metrics::kBinarizeThreshold) {
  const Model<float> m = model_from<float>(ck.config.model, ck.params);
  return evaluate_predictions(samples, model_predictor(m, ck.config.train.no_dam), threshold);
}

namespace detail {

inline nlohmann::json scores_json(double mdice, double miou, double wfm, double sm, double em, double mae) {
  return {{"mdice", mdice}, {"miou", miou}, {"wfm", wfm}, {"smeasure", sm}, {"emeasure_max", em}, {"mae", mae}};
}

inline std::string fixed(double v, int digits = 3) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace detail

/// NaN (an undefined weighted F-measure) is written as null.
inline std::string report_json(const Evaluation& ev) {
  const auto& r = ev.report;
  nlohmann::json j = detail::scores_json(r.mdice, r.miou, r.wfm, r.smeasure, r.emeasure_max, r.mae);
  j["n_samples"] = r.n_samples;
  j["wfm_excluded"] = r.wfm_excluded;
  j["threshold"] = ev.threshold;
  j["images"] = nlohmann::json::array();
  for (const auto& row : ev.rows) {
    const auto& s = row.scores;
    nlohmann::json e = detail::scores_json(s.mdice, s.miou, s.wfm, s.smeasure, s.emeasure_max, s.mae);
    e["id"] = row.id;
    j["images"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

inline std::string report_markdown(const Evaluation& ev) {
  using detail::fixed;
  std::ostringstream os;
  const auto line = [&](const std::string& id, double a, double b, double c, double d, double e, double f) {
    os << "| " << id << " | " << fixed(a) << " | " << fixed(b) << " | " << fixed(c) << " | " << fixed(d) << " | "
       << fixed(e) << " | " << fixed(f) << " |\n";
  };
  os << "| Set | mDice | mIoU | F^w_β | S_α | E^max_ξ | MAE |\n"
     << "|---|---|---|---|---|---|---|\n";
  const auto& r = ev.report;
  line("all (" + std::to_string(r.n_samples) + ")", r.mdice, r.miou, r.wfm, r.smeasure, r.emeasure_max, r.mae);
  if (r.wfm_excluded) os << "\nF^w_β excludes " << r.wfm_excluded << " image(s) with empty ground truth.\n";
  os << "\n| Image | mDice | mIoU | F^w_β | S_α | E^max_ξ | MAE |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& row : ev.rows) {
    const auto& s = row.scores;
    line(row.id, s.mdice, s.miou, s.wfm, s.smeasure, s.emeasure_max, s.mae);
  }
  return os.str();
}

/// Writes JSON or Markdown depending on the extension (.json / .md).
inline void write_report(const std::filesystem::path& path, const Evaluation& ev) {
  const std::string ext = path.extension().string();
  std::string text;
  if (ext == ".json") {
    text = report_json(ev);
  } else if (ext == ".md") {
    text = report_markdown(ev);
  } else {
    throw ConfigError("report", "extension must be .json or .md, got '" + ext + "'");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write report: " + path.string());
  os << text;
}

/// Thresholded copy of a probability map.
inline Tensor<float> binary_mask(Tensor<float> p, double threshold) {
  for (float& v : p.values()) v = v >= threshold ? 1.0f : 0.0f;
  return p;
}

}  // namespace polypdam
