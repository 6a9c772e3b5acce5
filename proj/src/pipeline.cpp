#include "fusedet/pipeline.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "fusedet/checkpoint.hpp"
#include "fusedet/rng.hpp"

namespace fusedet {

using nlohmann::json;

Shape RunConfig::input_shape() const {
  const std::size_t s = resolution_pixels(model_input);
  return {3, s, s};
}

RunConfig parse_run_config(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    if (!j.contains("seed")) throw ConfigError("run config needs a 'seed'");
    RunConfig cfg;
    cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("synthetic")) cfg.synthetic = j.at("synthetic").get<SyntheticDataConfig>();
    cfg.synthetic.validate();
    if (j.contains("train")) {
      const json& t = j.at("train");
      cfg.train.base = t.get<TrainConfig>();
      cfg.train.warmup_epochs = t.value("warmup_epochs", cfg.train.warmup_epochs);
      cfg.train.freeze_prefix = t.value("freeze_prefix", cfg.train.freeze_prefix);
      if (t.contains("models"))
        for (const auto& [id, o] : t.at("models").items()) cfg.train.overrides[id] = o;
    }
    cfg.train.base.validate();
    if (j.contains("attack")) cfg.attack = j.at("attack").get<AttackConfig>();
    cfg.attack.validate();
    if (j.contains("model_input"))
      cfg.model_input = resolution_from_string(j.at("model_input").get<std::string>());
    if (j.contains("paths") && j.at("paths").contains("data_dir"))
      cfg.data_dir = j.at("paths").at("data_dir").get<std::string>();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

SyntheticDataConfig synthetic_config(const RunConfig& cfg) {
  SyntheticDataConfig s = cfg.synthetic;
  s.seed = derive_seed(cfg.seed, "data");
  return s;
}

TrainConfig train_config(const RunConfig& cfg, const std::string& model_id) {
  json merged = cfg.train.base;
  if (auto it = cfg.train.overrides.find(model_id); it != cfg.train.overrides.end())
    merged.merge_patch(it->second);
  TrainConfig t;
  try {
    t = merged.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("train overrides for " + model_id + ": " + e.what());
  }
  t.seed = derive_seed(cfg.seed, "train", model_id);
  t.validate();
  return t;
}

std::vector<ManifestEntry> run_synth(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  return generate_synthetic_dataset(synthetic_config(cfg), out_dir);
}

std::vector<ManifestEntry> entries_at_input(const RunConfig& cfg, const std::vector<ManifestEntry>& entries) {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries)
    if (e.resolution_tag == cfg.model_input) out.push_back(e);
  if (out.empty() && !entries.empty())
    throw DataError(std::string("no ") + to_string(cfg.model_input) + " frames in the manifest");
  return out;
}

TrainOutcome run_train(const RunConfig& cfg, const std::string& model_id,
                       const std::vector<ManifestEntry>& train_entries) {
  const TrainConfig full = train_config(cfg, model_id);
  const std::vector<ManifestEntry> entries = entries_at_input(cfg, train_entries);
  Checkpoint ckpt = build_net(model_id, cfg.input_shape(), derive_seed(cfg.seed, "init"));

  const std::size_t warmup =
      cfg.train.freeze_prefix == 0 ? full.epochs : std::min(cfg.train.warmup_epochs, full.epochs);
  TrainReport report;
  report.model_id = model_id;
  json phases = json::array();
  auto run_phase = [&](std::size_t epochs, FreezeMask freeze, const char* name) {
    if (epochs == 0) return;
    TrainConfig phase = full;
    phase.epochs = epochs;
    phase.freeze = std::move(freeze);
    phase.seed = derive_seed(full.seed, name);
    TrainResult r = train(std::move(ckpt), entries, phase);
    ckpt = std::move(r.ckpt);
    for (EpochRecord& e : r.report.epochs) {
      e.epoch = report.epochs.size() + 1;
      report.epochs.push_back(std::move(e));
    }
    phases.push_back({{"phase", name}, {"config", phase}});
  };
  run_phase(warmup, {}, "warmup");
  run_phase(full.epochs - warmup, freeze_prefix(ckpt.spec, cfg.train.freeze_prefix), "finetune");

  ckpt.meta.epochs_trained = full.epochs;
  ckpt.meta.config_digest = sha256_hex(phases.dump());
  report.final_digest = checkpoint_digest(ckpt);
  return {std::move(ckpt), std::move(report)};
}

}  // namespace fusedet
