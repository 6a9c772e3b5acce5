#include "fusedet/trainer.hpp"

#include <map>

#include <nlohmann/json.hpp>

#include "fusedet/checkpoint.hpp"
#include "fusedet/image.hpp"
#include "fusedet/rng.hpp"

namespace fusedet {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  augmentation.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"seed", c.seed},
           {"freeze", c.freeze.frozen},
           {"augmentation", c.augmentation}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.momentum = j.value("momentum", d.momentum);
  c.seed = j.value("seed", d.seed);
  c.freeze.frozen = j.value("freeze", std::set<std::string>{});
  c.augmentation = j.contains("augmentation") ? j.at("augmentation").get<AugmentationConfig>()
                                              : AugmentationConfig{};
}

std::string config_digest(const TrainConfig& c) { return sha256_hex(json(c).dump()); }

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},
           {"mean_loss", r.mean_loss},
           {"accuracy", r.accuracy},
           {"batch_losses", r.batch_losses}};
}

void to_json(json& j, const TrainReport& r) {
  j = json{{"model_id", r.model_id}, {"epochs", r.epochs}, {"final_digest", r.final_digest}};
}

SgdResult sgd_step(Checkpoint ckpt, const ParamSet& grads, const TrainConfig& config,
                   ParamSet velocity) {
  for (auto& [name, p] : ckpt.params) {
    if (config.freeze.covers(name)) continue;
    auto git = grads.find(name);
    if (git == grads.end()) throw ShapeError("sgd_step: no gradient for parameter '" + name + "'");
    const Tensor& g = git->second;
    require_same_shape(p, g, ("sgd_step: gradient for '" + name + "'").c_str());
    auto [vit, fresh] = velocity.try_emplace(name, Tensor(p.shape()));
    Tensor& v = vit->second;
    require_same_shape(p, v, ("sgd_step: velocity for '" + name + "'").c_str());
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = config.momentum * v[i] - config.learning_rate * g[i];
      p[i] += v[i];
    }
  }
  return {std::move(ckpt), std::move(velocity)};
}

ParamSet tree_sum(std::vector<ParamSet> grads) {
  if (grads.empty()) return {};
  for (std::size_t step = 1; step < grads.size(); step *= 2)
    for (std::size_t i = 0; i + step < grads.size(); i += 2 * step)
      for (auto& [name, t] : grads[i]) {
        const Tensor& other = grads[i + step].at(name);
        for (std::size_t k = 0; k < t.size(); ++k) t[k] += other[k];
      }
  return std::move(grads.front());
}

TrainResult train(Checkpoint ckpt, const std::vector<ManifestEntry>& entries,
                  const TrainConfig& config) {
  config.validate();
  if (entries.empty()) throw DataError("train: empty dataset");
  for (const ManifestEntry& e : entries)
    if (e.split != Split::train)
      throw DataError("train: entry " + e.video_id + "/" + std::to_string(e.frame_index) +
                      " is not in the train split");

  std::map<std::string, Tensor> images;
  for (const ManifestEntry& e : entries) {
    if (images.contains(e.frame_path)) continue;
    Tensor img = load_image(e.frame_path);
    if (img.shape() != ckpt.spec.input_shape)
      throw DataError("train: frame " + e.frame_path + " is " + shape_string(img.shape()) +
                      ", network expects " + shape_string(ckpt.spec.input_shape));
    images.emplace(e.frame_path, std::move(img));
  }

  TrainReport report;
  report.model_id = ckpt.spec.model_id;
  ParamSet velocity;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<ManifestEntry> order =
        oversample_balance(entries, derive_seed(config.seed, "balance", epoch));
    Rng(derive_seed(config.seed, "shuffle", epoch)).shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ParamSet> grads;
      grads.reserve(end - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const ManifestEntry& e = order[i];
        Rng rng(augmentation_seed(config.seed, e.video_id, e.frame_index, epoch));
        const Tensor x = augment(images.at(e.frame_path), config.augmentation, rng);
        const ForwardResult fwd = net_forward(ckpt, x);
        const Label predicted = fwd.probs[1] >= fwd.probs[0] ? Label::fake : Label::real;
        if (predicted == e.label) ++correct;
        BackwardResult bwd = net_backward(ckpt, fwd.caches, e.label);
        batch_loss += bwd.loss;
        grads.push_back(std::move(bwd.param_grads));
      }
      const double n = static_cast<double>(end - start);
      ParamSet mean = tree_sum(std::move(grads));
      for (auto& [name, t] : mean)
        for (double& v : t.data()) v /= n;
      SgdResult step = sgd_step(std::move(ckpt), mean, config, std::move(velocity));
      ckpt = std::move(step.ckpt);
      velocity = std::move(step.velocity);
      loss_sum += batch_loss;
      rec.batch_losses.push_back(batch_loss / n);
    }
    rec.mean_loss = loss_sum / static_cast<double>(order.size());
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    report.epochs.push_back(std::move(rec));
  }
  ckpt.meta.epochs_trained += config.epochs;
  ckpt.meta.config_digest = config_digest(config);
  report.final_digest = checkpoint_digest(ckpt);
  return {std::move(ckpt), std::move(report)};
}

}  // namespace fusedet
