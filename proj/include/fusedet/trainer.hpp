#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/augment.hpp"
#include "fusedet/manifest.hpp"
#include "fusedet/net.hpp"

namespace fusedet {

struct TrainConfig {
  std::size_t epochs = 25;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  FreezeMask freeze;
  AugmentationConfig augmentation;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

std::string config_digest(const TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> batch_losses;
};

struct TrainReport {
  std::string model_id;
  std::vector<EpochRecord> epochs;
  std::string final_digest;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void to_json(nlohmann::json& j, const TrainReport& r);

struct SgdResult {
  Checkpoint ckpt;
  ParamSet velocity;
};

// v <- momentum * v - lr * g;  p <- p + v, skipping frozen parameters.
// An empty velocity set starts from zeros.
SgdResult sgd_step(Checkpoint ckpt, const ParamSet& grads, const TrainConfig& config,
                   ParamSet velocity);

// Sums per-sample gradients as a pairwise tree in index order.
ParamSet tree_sum(std::vector<ParamSet> grads);

struct TrainResult {
  Checkpoint ckpt;
  TrainReport report;
};

// Per epoch: oversample_balance -> shuffle -> augment -> batched
// forward/backward with mean loss -> sgd_step.
TrainResult train(Checkpoint ckpt, const std::vector<ManifestEntry>& entries,
                  const TrainConfig& config);

}  // namespace fusedet
