#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/fusion.hpp"
#include "fusedet/net.hpp"

namespace fusedet {

struct AttackConfig {
  double epsilon = 0.1;
  std::string target_model_id = kPlainNet;

  void validate() const;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

// epsilon * sign(grad_x loss(image, label)); sign(0) = 0.
Tensor fgsm_perturbation(const Checkpoint& ckpt, const Tensor& image, Label label,
                         double epsilon);

// clamp(image + epsilon * sign(grad_x loss), 0, 1)
Tensor fgsm(const Checkpoint& ckpt, const Tensor& image, Label label, double epsilon);

struct FrameAttackRecord {
  std::string video_id;
  std::size_t frame_index = 0;
  Label truth = Label::real;
  double clean_loss = 0.0;     // target model
  double attacked_loss = 0.0;  // target model
  double max_abs_perturbation = 0.0;
};

struct RobustnessResult {
  double epsilon = 0.0;
  std::string target_model_id;
  std::vector<MetricsReport> clean;     // per model, then "fused"
  std::vector<MetricsReport> attacked;  // same order
  std::vector<VideoVerdict> clean_verdicts;
  std::vector<VideoVerdict> attacked_verdicts;
  std::vector<FrameAttackRecord> frames;

  const MetricsReport& clean_report(const std::string& name) const;
  const MetricsReport& attacked_report(const std::string& name) const;
};

void to_json(nlohmann::json& j, const FrameAttackRecord& r);
void to_json(nlohmann::json& j, const RobustnessResult& r);

// Attacks every frame against the target model with its true label and feeds
// the same adversarial frame to every model.
RobustnessResult run_attack_experiment(const std::vector<Checkpoint>& ckpts,
                                       const std::vector<ManifestEntry>& entries,
                                       const AttackConfig& cfg);

std::string render_robustness_markdown(const RobustnessResult& result);

}  // namespace fusedet
