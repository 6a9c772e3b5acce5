#include "fusedet/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fusedet/image.hpp"

namespace fusedet {

using nlohmann::json;

void to_json(json& j, const FramePrediction& p) {
  j = json{{"model_id", p.model_id},
           {"video_id", p.video_id},
           {"frame_index", p.frame_index},
           {"p_fake", p.p_fake}};
}

void from_json(const json& j, FramePrediction& p) {
  p.model_id = j.at("model_id").get<std::string>();
  p.video_id = j.at("video_id").get<std::string>();
  p.frame_index = j.at("frame_index").get<std::size_t>();
  p.p_fake = j.at("p_fake").get<double>();
}

PredictResult predict_frames(const Checkpoint& ckpt, const std::vector<ManifestEntry>& entries,
                             PredictOptions options) {
  PredictResult out;
  const Shape& in = ckpt.spec.input_shape;
  for (const ManifestEntry& e : entries) {
    try {
      Tensor img = load_image(e.frame_path);
      if (img.shape() != in && options.resize_to_input && in.size() == 3 && img.dim(0) == in[0])
        img = resize_bilinear(img, in[1], in[2]);
      const Tensor probs = net_probs(ckpt, img);
      out.predictions.push_back({ckpt.spec.model_id, e.video_id, e.frame_index, probs[1]});
    } catch (const Error& err) {
      out.failures.push_back({e.video_id, e.frame_index, err.what()});
    }
  }
  return out;
}

void to_json(json& j, const VideoVerdict& v) {
  j = json{{"video_id", v.video_id},
           {"p_fake_fused", v.p_fake_fused},
           {"predicted_label", to_string(v.predicted_label)},
           {"per_model_p_fake", v.per_model_p_fake}};
}

Label decide(double p_fake) { return p_fake >= 0.5 ? Label::fake : Label::real; }

std::vector<VideoVerdict> fuse(const std::vector<FramePrediction>& predictions,
                               const std::vector<std::string>& model_ids,
                               const std::vector<std::string>& video_ids) {
  if (model_ids.empty()) throw DataError("fuse: no models given");
  const std::set<std::string> models(model_ids.begin(), model_ids.end());
  if (models.size() != model_ids.size()) throw DataError("fuse: duplicate model ids");

  // (video, model) -> frame_index -> p_fake
  std::map<std::pair<std::string, std::string>, std::map<std::size_t, double>> table;
  for (const FramePrediction& p : predictions) {
    if (!models.contains(p.model_id)) continue;
    if (!(p.p_fake >= 0.0 && p.p_fake <= 1.0))
      throw DataError("fuse: p_fake outside [0,1] for " + p.video_id);
    auto& frames = table[{p.video_id, p.model_id}];
    if (!frames.emplace(p.frame_index, p.p_fake).second)
      throw DataError("fuse: model " + p.model_id + " predicted frame " + p.video_id + "/" +
                      std::to_string(p.frame_index) + " twice");
  }

  std::vector<VideoVerdict> verdicts;
  verdicts.reserve(video_ids.size());
  for (const std::string& vid : video_ids) {
    VideoVerdict v;
    v.video_id = vid;
    const std::map<std::size_t, double>* reference = nullptr;
    double total = 0.0;
    std::size_t frames = 0;
    for (const std::string& m : model_ids) {
      auto it = table.find({vid, m});
      if (it == table.end() || it->second.empty())
        throw DataError("fuse: model " + m + " has no predictions for video " + vid);
      const auto& fm = it->second;
      if (reference) {
        const bool same = fm.size() == reference->size() &&
                          std::equal(fm.begin(), fm.end(), reference->begin(),
                                     [](const auto& a, const auto& b) { return a.first == b.first; });
        if (!same)
          throw DataError("fuse: model " + m + " covers a different frame set for video " + vid);
      }
      reference = &fm;
      double s = 0.0;
      for (const auto& [idx, p] : fm) s += p;
      v.per_model_p_fake[m] = s / static_cast<double>(fm.size());
      total += s;
      frames = fm.size();
    }
    // Equal frame counts per model, so the grand mean is the mean of the
    // per-model means.
    v.p_fake_fused = total / static_cast<double>(frames * model_ids.size());
    v.predicted_label = decide(v.p_fake_fused);
    verdicts.push_back(std::move(v));
  }
  return verdicts;
}

double binary_log_loss(const std::vector<double>& p_fake, const std::vector<Label>& truth) {
  if (p_fake.size() != truth.size()) throw DataError("binary_log_loss: size mismatch");
  if (p_fake.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p_fake.size(); ++i) {
    const double p = std::clamp(p_fake[i], kLogLossEpsilon, 1.0 - kLogLossEpsilon);
    s += truth[i] == Label::fake ? std::log(p) : std::log(1.0 - p);
  }
  return -s / static_cast<double>(p_fake.size());
}

namespace {

MetricBlock block_of(const std::vector<const VideoVerdict*>& verdicts,
                     const std::vector<Label>& labels) {
  MetricBlock b;
  std::vector<double> ps;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    const bool fake_truth = labels[i] == Label::fake;
    const bool fake_pred = verdicts[i]->predicted_label == Label::fake;
    if (fake_truth && fake_pred) ++b.confusion.tp;
    if (!fake_truth && !fake_pred) ++b.confusion.tn;
    if (!fake_truth && fake_pred) ++b.confusion.fp;
    if (fake_truth && !fake_pred) ++b.confusion.fn;
    ps.push_back(verdicts[i]->p_fake_fused);
  }
  const std::size_t n = b.confusion.total();
  b.accuracy = n ? static_cast<double>(b.confusion.tp + b.confusion.tn) / static_cast<double>(n) : 0.0;
  b.log_loss = binary_log_loss(ps, labels);
  return b;
}

}  // namespace

MetricBlock score_block(const std::vector<VideoVerdict>& verdicts,
                        const std::map<std::string, VideoTruth>& truth) {
  return score(verdicts, truth).overall;
}

MetricsReport score(const std::vector<VideoVerdict>& verdicts,
                    const std::map<std::string, VideoTruth>& truth, std::string name,
                    std::vector<std::string> models) {
  std::vector<const VideoVerdict*> all;
  std::vector<Label> labels;
  std::map<std::string, std::pair<std::vector<const VideoVerdict*>, std::vector<Label>>> by_res;
  for (const VideoVerdict& v : verdicts) {
    auto it = truth.find(v.video_id);
    if (it == truth.end()) throw DataError("score: no truth label for video " + v.video_id);
    all.push_back(&v);
    labels.push_back(it->second.label);
    if (it->second.resolution) {
      auto& slot = by_res[to_string(*it->second.resolution)];
      slot.first.push_back(&v);
      slot.second.push_back(it->second.label);
    }
  }
  MetricsReport r;
  r.name = std::move(name);
  r.models = std::move(models);
  r.overall = block_of(all, labels);
  for (const auto& [res, slot] : by_res) r.by_resolution[res] = block_of(slot.first, slot.second);
  return r;
}

std::map<std::string, VideoTruth> video_truth(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, VideoTruth> truth;
  for (const ManifestEntry& e : entries) truth[e.video_id] = {e.label, e.resolution_tag};
  return truth;
}

std::vector<std::string> video_ids(const std::vector<ManifestEntry>& entries) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const ManifestEntry& e : entries)
    if (seen.insert(e.video_id).second) ids.push_back(e.video_id);
  return ids;
}

void to_json(json& j, const MetricBlock& m) {
  j = json{{"accuracy", m.accuracy},
           {"log_loss", m.log_loss},
           {"confusion",
            {{"tp", m.confusion.tp}, {"tn", m.confusion.tn}, {"fp", m.confusion.fp},
             {"fn", m.confusion.fn}}}};
}

void from_json(const json& j, MetricBlock& m) {
  m.accuracy = j.at("accuracy").get<double>();
  m.log_loss = j.at("log_loss").is_null() ? std::nan("") : j.at("log_loss").get<double>();
  const json& c = j.at("confusion");
  m.confusion = {c.at("tp").get<std::size_t>(), c.at("tn").get<std::size_t>(),
                 c.at("fp").get<std::size_t>(), c.at("fn").get<std::size_t>()};
}

void to_json(json& j, const MetricsReport& r) {
  j = json{{"name", r.name}, {"models", r.models}, {"overall", r.overall}};
  j["by_resolution"] = json::object();
  for (const auto& [res, b] : r.by_resolution) j["by_resolution"][res] = b;
}

void from_json(const json& j, MetricsReport& r) {
  r.name = j.at("name").get<std::string>();
  r.models = j.at("models").get<std::vector<std::string>>();
  r.overall = j.at("overall").get<MetricBlock>();
  r.by_resolution = j.at("by_resolution").get<std::map<std::string, MetricBlock>>();
}

namespace {

std::string percent(double v) {
  return std::isfinite(v) ? fmt::format("{:.2f}%", v * 100.0) : "n/a";
}

std::string loss_cell(double v) { return std::isfinite(v) ? fmt::format("{:.5f}", v) : "n/a"; }

}  // namespace

std::string render_report(const std::vector<MetricsReport>& reports, ReportFormat format) {
  if (format == ReportFormat::json) return json(reports).dump(2) + "\n";

  const bool resolution_columns = std::any_of(reports.begin(), reports.end(), [](const auto& r) {
    return !r.by_resolution.empty();
  });
  std::string out = "| Classifier | Accuracy | LogLoss |";
  std::string rule = "|---|---:|---:|";
  if (resolution_columns) {
    out += " Low Res Videos | High Res Videos |";
    rule += "---:|---:|";
  }
  out += "\n" + rule + "\n";
  for (const MetricsReport& r : reports) {
    out += fmt::format("| {} | {} | {} |", r.name, percent(r.overall.accuracy),
                       loss_cell(r.overall.log_loss));
    if (resolution_columns) {
      for (const char* res : {"low", "high"}) {
        auto it = r.by_resolution.find(res);
        out += " " + (it == r.by_resolution.end() ? std::string("n/a") : percent(it->second.accuracy)) +
               " |";
      }
    }
    out += "\n";
  }
  return out;
}

EvaluationResult evaluate(const std::vector<Checkpoint>& ckpts,
                          const std::vector<ManifestEntry>& entries, PredictOptions options) {
  if (ckpts.empty()) throw ConfigError("evaluate: no checkpoints given");
  std::vector<std::string> ids;
  for (const Checkpoint& c : ckpts) {
    if (std::find(ids.begin(), ids.end(), c.spec.model_id) != ids.end())
      throw ConfigError("evaluate: model id " + c.spec.model_id + " given twice");
    ids.push_back(c.spec.model_id);
  }
  EvaluationResult result;
  for (const Checkpoint& c : ckpts) {
    PredictResult pr = predict_frames(c, entries, options);
    result.frames.predictions.insert(result.frames.predictions.end(), pr.predictions.begin(),
                                     pr.predictions.end());
    for (FrameFailure& f : pr.failures) {
      f.reason = c.spec.model_id + ": " + f.reason;
      result.frames.failures.push_back(std::move(f));
    }
  }
  if (!result.frames.failures.empty()) {
    const FrameFailure& f = result.frames.failures.front();
    throw DataError(std::to_string(result.frames.failures.size()) +
                    " frame(s) could not be predicted; first: " + f.video_id + "/" +
                    std::to_string(f.frame_index) + ": " + f.reason);
  }
  const auto vids = video_ids(entries);
  const auto truth = video_truth(entries);
  for (const std::string& m : ids)
    result.reports.push_back(score(fuse(result.frames.predictions, {m}, vids), truth, m, {m}));
  result.fused_verdicts = fuse(result.frames.predictions, ids, vids);
  result.reports.push_back(score(result.fused_verdicts, truth, "fused", ids));
  return result;
}

std::string format_predictions(const std::vector<FramePrediction>& predictions) {
  std::string out;
  for (const FramePrediction& p : predictions) out += json(p).dump() + "\n";
  return out;
}

}  // namespace fusedet
