#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/manifest.hpp"
#include "fusedet/net.hpp"

namespace fusedet {

struct FramePrediction {
  std::string model_id;
  std::string video_id;
  std::size_t frame_index = 0;
  double p_fake = 0.0;

  friend bool operator==(const FramePrediction&, const FramePrediction&) = default;
};

void to_json(nlohmann::json& j, const FramePrediction& p);
void from_json(const nlohmann::json& j, FramePrediction& p);

struct FrameFailure {
  std::string video_id;
  std::size_t frame_index = 0;
  std::string reason;
};

struct PredictOptions {
  // Bilinear-resize frames whose size differs from the network input.
  bool resize_to_input = false;
};

struct PredictResult {
  std::vector<FramePrediction> predictions;
  std::vector<FrameFailure> failures;
};

PredictResult predict_frames(const Checkpoint& ckpt, const std::vector<ManifestEntry>& entries,
                             PredictOptions options = {});

struct VideoVerdict {
  std::string video_id;
  double p_fake_fused = 0.0;
  Label predicted_label = Label::real;
  std::map<std::string, double> per_model_p_fake;
};

void to_json(nlohmann::json& j, const VideoVerdict& v);

// Fake wins ties: p >= 0.5 -> fake.
Label decide(double p_fake);

// Mean over frames per model, then mean over models. Requires every model to
// cover the same non-empty frame set for every listed video.
std::vector<VideoVerdict> fuse(const std::vector<FramePrediction>& predictions,
                               const std::vector<std::string>& model_ids,
                               const std::vector<std::string>& video_ids);

struct Confusion {
  std::size_t tp = 0;  // fake predicted fake
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct MetricBlock {
  double accuracy = 0.0;
  double log_loss = 0.0;
  Confusion confusion;

  friend bool operator==(const MetricBlock&, const MetricBlock&) = default;
};

struct MetricsReport {
  std::string name;
  std::vector<std::string> models;
  MetricBlock overall;
  std::map<std::string, MetricBlock> by_resolution;  // "low", "high"

  double accuracy() const noexcept { return overall.accuracy; }
  double log_loss() const noexcept { return overall.log_loss; }

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

void to_json(nlohmann::json& j, const MetricBlock& m);
void from_json(const nlohmann::json& j, MetricBlock& m);
void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

inline constexpr double kLogLossEpsilon = 1e-15;

// Kaggle binary log loss with probabilities clipped to [eps, 1 - eps].
double binary_log_loss(const std::vector<double>& p_fake, const std::vector<Label>& truth);

struct VideoTruth {
  Label label = Label::real;
  std::optional<Resolution> resolution;
};

MetricBlock score_block(const std::vector<VideoVerdict>& verdicts,
                        const std::map<std::string, VideoTruth>& truth);

MetricsReport score(const std::vector<VideoVerdict>& verdicts,
                    const std::map<std::string, VideoTruth>& truth, std::string name = "",
                    std::vector<std::string> models = {});

std::map<std::string, VideoTruth> video_truth(const std::vector<ManifestEntry>& entries);
std::vector<std::string> video_ids(const std::vector<ManifestEntry>& entries);

enum class ReportFormat { json, markdown };

std::string render_report(const std::vector<MetricsReport>& reports, ReportFormat format);

struct EvaluationResult {
  PredictResult frames;  // predictions and failures across all models
  std::vector<MetricsReport> reports;  // one per model, then "fused"
  std::vector<VideoVerdict> fused_verdicts;
};

// predict_frames for each checkpoint, fuse per model and across models, score.
// Throws DataError when any frame failed (coverage gap).
EvaluationResult evaluate(const std::vector<Checkpoint>& ckpts,
                          const std::vector<ManifestEntry>& entries, PredictOptions options = {});

std::string format_predictions(const std::vector<FramePrediction>& predictions);

}  // namespace fusedet
