#include "fusedet/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "fusedet/image.hpp"

namespace fusedet {

using nlohmann::json;

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
    throw ConfigError("attack epsilon must be a finite value >= 0");
  if (target_model_id.empty()) throw ConfigError("attack target_model_id is empty");
}

void to_json(json& j, const AttackConfig& c) {
  j = json{{"epsilon", c.epsilon}, {"target_model_id", c.target_model_id}};
}

void from_json(const json& j, AttackConfig& c) {
  const AttackConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.target_model_id = j.value("target_model_id", d.target_model_id);
}

namespace {

Tensor signed_step(const Tensor& grad, double epsilon) {
  Tensor step(grad.shape());
  for (std::size_t i = 0; i < grad.size(); ++i)
    step[i] = grad[i] > 0.0 ? epsilon : (grad[i] < 0.0 ? -epsilon : 0.0);
  return step;
}

// x + step rounds to nearest, which can land half an ulp beyond |step|; pull
// such values back so |adv - x| <= |step| holds in floating point too.
Tensor apply_step(const Tensor& image, const Tensor& step) {
  Tensor adv = image;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double x = image[i];
    double v = std::clamp(x + step[i], 0.0, 1.0);
    while (std::abs(v - x) > std::abs(step[i])) v = std::nextafter(v, x);
    adv[i] = v;
  }
  return adv;
}

}  // namespace

Tensor fgsm_perturbation(const Checkpoint& ckpt, const Tensor& image, Label label,
                         double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("fgsm: epsilon must be >= 0");
  const ForwardResult fwd = net_forward(ckpt, image);
  const BackwardResult bwd = net_backward(ckpt, fwd.caches, label);
  return signed_step(bwd.input_grad, epsilon);
}

Tensor fgsm(const Checkpoint& ckpt, const Tensor& image, Label label, double epsilon) {
  return apply_step(image, fgsm_perturbation(ckpt, image, label, epsilon));
}

const MetricsReport& RobustnessResult::clean_report(const std::string& name) const {
  for (const MetricsReport& r : clean)
    if (r.name == name) return r;
  throw ConfigError("no clean report named " + name);
}

const MetricsReport& RobustnessResult::attacked_report(const std::string& name) const {
  for (const MetricsReport& r : attacked)
    if (r.name == name) return r;
  throw ConfigError("no attacked report named " + name);
}

void to_json(json& j, const FrameAttackRecord& r) {
  j = json{{"video_id", r.video_id},
           {"frame_index", r.frame_index},
           {"truth", to_string(r.truth)},
           {"clean_loss", r.clean_loss},
           {"attacked_loss", r.attacked_loss},
           {"max_abs_perturbation", r.max_abs_perturbation}};
}

void to_json(json& j, const RobustnessResult& r) {
  j = json{{"epsilon", r.epsilon},
           {"target_model_id", r.target_model_id},
           {"clean", r.clean},
           {"attacked", r.attacked},
           {"clean_verdicts", r.clean_verdicts},
           {"attacked_verdicts", r.attacked_verdicts},
           {"frames", r.frames}};
}

RobustnessResult run_attack_experiment(const std::vector<Checkpoint>& ckpts,
                                       const std::vector<ManifestEntry>& entries,
                                       const AttackConfig& cfg) {
  cfg.validate();
  if (ckpts.empty()) throw ConfigError("attack: no checkpoints given");
  std::vector<std::string> ids;
  const Checkpoint* target = nullptr;
  for (const Checkpoint& c : ckpts) {
    if (std::find(ids.begin(), ids.end(), c.spec.model_id) != ids.end())
      throw ConfigError("attack: model id " + c.spec.model_id + " given twice");
    if (c.spec.input_shape != ckpts.front().spec.input_shape)
      throw ConfigError("attack: models disagree on input shape");
    ids.push_back(c.spec.model_id);
    if (c.spec.model_id == cfg.target_model_id) target = &c;
  }
  if (!target)
    throw ConfigError("attack: target model " + cfg.target_model_id +
                      " is not among the given checkpoints");

  RobustnessResult result;
  result.epsilon = cfg.epsilon;
  result.target_model_id = cfg.target_model_id;
  std::vector<FramePrediction> clean, attacked;
  for (const ManifestEntry& e : entries) {
    const Tensor image = load_image(e.frame_path);
    if (image.shape() != target->spec.input_shape)
      throw DataError("attack: frame " + e.frame_path + " is " + shape_string(image.shape()) +
                      ", models expect " + shape_string(target->spec.input_shape));
    const ForwardResult fwd = net_forward(*target, image);
    const BackwardResult bwd = net_backward(*target, fwd.caches, e.label);
    const Tensor adv = apply_step(image, signed_step(bwd.input_grad, cfg.epsilon));
    const ForwardResult adv_fwd = net_forward(*target, adv);

    result.frames.push_back({e.video_id, e.frame_index, e.label, bwd.loss,
                             softmax_xent(adv_fwd.logits, e.label).loss,
                             max_abs_diff(adv, image)});
    for (const Checkpoint& c : ckpts) {
      const bool is_target = &c == target;
      const double p_clean = is_target ? fwd.probs[1] : net_probs(c, image)[1];
      const double p_adv = is_target ? adv_fwd.probs[1] : net_probs(c, adv)[1];
      clean.push_back({c.spec.model_id, e.video_id, e.frame_index, p_clean});
      attacked.push_back({c.spec.model_id, e.video_id, e.frame_index, p_adv});
    }
  }

  const auto vids = video_ids(entries);
  const auto truth = video_truth(entries);
  for (const std::string& m : ids) {
    result.clean.push_back(score(fuse(clean, {m}, vids), truth, m, {m}));
    result.attacked.push_back(score(fuse(attacked, {m}, vids), truth, m, {m}));
  }
  result.clean_verdicts = fuse(clean, ids, vids);
  result.attacked_verdicts = fuse(attacked, ids, vids);
  result.clean.push_back(score(result.clean_verdicts, truth, "fused", ids));
  result.attacked.push_back(score(result.attacked_verdicts, truth, "fused", ids));
  return result;
}

namespace {

std::string verdict_cell(double p_fake) {
  const Label l = decide(p_fake);
  const double conf = l == Label::fake ? p_fake : 1.0 - p_fake;
  return fmt::format("{} ({:.2f}%)", to_string(l), conf * 100.0);
}

}  // namespace

std::string render_robustness_markdown(const RobustnessResult& r) {
  std::string out = fmt::format("# FGSM attack on {} (epsilon = {})\n\n", r.target_model_id,
                                r.epsilon);
  out += "| Classifier | Clean Accuracy | Attacked Accuracy | Clean LogLoss | Attacked LogLoss |\n";
  out += "|---|---:|---:|---:|---:|\n";
  for (std::size_t i = 0; i < r.clean.size(); ++i)
    out += fmt::format("| {} | {:.2f}% | {:.2f}% | {:.5f} | {:.5f} |\n", r.clean[i].name,
                       r.clean[i].overall.accuracy * 100.0, r.attacked[i].overall.accuracy * 100.0,
                       r.clean[i].overall.log_loss, r.attacked[i].overall.log_loss);

  out += fmt::format("\n## Per-video verdicts\n\n| Video | Truth | {} clean | {} attacked | "
                     "Fused clean | Fused attacked |\n|---|---|---|---|---|---|\n",
                     r.target_model_id, r.target_model_id);
  std::map<std::string, Label> truth;
  for (const FrameAttackRecord& f : r.frames) truth[f.video_id] = f.truth;
  for (std::size_t i = 0; i < r.clean_verdicts.size(); ++i) {
    const VideoVerdict& c = r.clean_verdicts[i];
    const VideoVerdict& a = r.attacked_verdicts[i];
    out += fmt::format("| {} | {} | {} | {} | {} | {} |\n", c.video_id,
                       to_string(truth.at(c.video_id)),
                       verdict_cell(c.per_model_p_fake.at(r.target_model_id)),
                       verdict_cell(a.per_model_p_fake.at(r.target_model_id)),
                       verdict_cell(c.p_fake_fused), verdict_cell(a.p_fake_fused));
  }
  return out;
}

}  // namespace fusedet
