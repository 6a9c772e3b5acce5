#pragma once

// End-to-end driver shared by the CLI and the integration tests. All
// randomness flows from RunConfig::seed through named substreams.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/adversarial.hpp"
#include "fusedet/synth.hpp"
#include "fusedet/trainer.hpp"

namespace fusedet {

struct TrainSettings {
  TrainConfig base;  // epochs is the total, warm-up included
  // Epochs with every layer trainable before the prefix is frozen.
  std::size_t warmup_epochs = 3;
  // Parameterized top-level layers frozen after warm-up.
  std::size_t freeze_prefix = 1;
  // Per-model overrides, merged over `base`.
  std::map<std::string, nlohmann::json> overrides;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticDataConfig synthetic;
  TrainSettings train;
  AttackConfig attack;
  Resolution model_input = Resolution::low;
  std::optional<std::filesystem::path> data_dir;

  Shape input_shape() const;
};

// Throws ConfigError on missing seed, unknown keys in known sections, or
// invalid values.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

SyntheticDataConfig synthetic_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg, const std::string& model_id);

std::vector<ManifestEntry> run_synth(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Entries tagged with the model input resolution. Throws DataError when a
// non-empty list has none.
std::vector<ManifestEntry> entries_at_input(const RunConfig& cfg,
                                            const std::vector<ManifestEntry>& entries);

struct TrainOutcome {
  Checkpoint ckpt;
  TrainReport report;
};

// Builds the model and trains it on the model_input frames: warm-up epochs with
// nothing frozen, then the remaining epochs with the leading layers frozen.
TrainOutcome run_train(const RunConfig& cfg, const std::string& model_id,
                       const std::vector<ManifestEntry>& train_entries);

}  // namespace fusedet
