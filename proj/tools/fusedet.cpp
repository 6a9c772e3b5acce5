// fusedet: synthesize data, train the three detectors, evaluate the fused
// ensemble and run the FGSM robustness experiment.
//
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fusedet/adversarial.hpp"
#include "fusedet/checkpoint.hpp"
#include "fusedet/fusion.hpp"
#include "fusedet/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fusedet;

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kIo = 3, kData = 4 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed,
                      std::optional<std::size_t> epochs, std::optional<double> epsilon) {
  RunConfig cfg = load_run_config(path);
  if (seed) cfg.seed = *seed;
  if (epochs) {
    if (*epochs < 1) throw ConfigError("--epochs must be >= 1");
    cfg.train.base.epochs = *epochs;
  }
  if (epsilon) {
    cfg.attack.epsilon = *epsilon;
    cfg.attack.validate();
  }
  return cfg;
}

std::vector<ManifestEntry> load_split(const std::string& manifest, const std::string& split) {
  std::vector<ManifestEntry> entries = filter_split(load_manifest(manifest), split_from_string(split));
  if (entries.empty()) throw DataError("manifest " + manifest + " has no " + split + " entries");
  return entries;
}

std::vector<Checkpoint> load_checkpoints(const std::vector<std::string>& paths) {
  std::vector<Checkpoint> ckpts;
  for (const std::string& p : paths) ckpts.push_back(load_checkpoint(p));
  return ckpts;
}

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) {
  return fs::path(prefix.string() + suffix);
}

int cmd_synth(const std::string& config, std::string out, std::optional<std::uint64_t> seed) {
  const RunConfig cfg = load_config(config, seed, std::nullopt, std::nullopt);
  if (out.empty()) {
    if (!cfg.data_dir) throw ConfigError("synth needs --out or paths.data_dir in the config");
    out = cfg.data_dir->string();
  }
  const std::vector<ManifestEntry> entries = run_synth(cfg, out);
  std::map<std::string, std::map<std::string, std::size_t>> videos;
  std::map<std::string, bool> seen;
  for (const ManifestEntry& e : entries)
    if (!seen[e.video_id]) {
      seen[e.video_id] = true;
      ++videos[std::string(to_string(e.split)) + "/" + to_string(e.resolution_tag)][to_string(e.label)];
    }
  std::cout << (fs::path(out) / "manifest.jsonl").string() << "\n";
  std::cout << entries.size() << " frames in " << seen.size() << " videos\n";
  for (const auto& [group, by_label] : videos)
    std::cout << "  " << group << ": " << (by_label.contains("real") ? by_label.at("real") : 0)
              << " real, " << (by_label.contains("fake") ? by_label.at("fake") : 0) << " fake\n";
  return kOk;
}

int cmd_train(const std::string& config, const std::string& model, const std::string& manifest,
              const std::string& out, std::optional<std::uint64_t> seed,
              std::optional<std::size_t> epochs) {
  const RunConfig cfg = load_config(config, seed, epochs, std::nullopt);
  const auto& ids = builtin_model_ids();
  if (std::find(ids.begin(), ids.end(), model) == ids.end())
    throw ConfigError("unknown model '" + model + "' (expected plainnet, branchnet or sepnet)");
  const std::vector<ManifestEntry> entries = load_split(manifest, "train");
  TrainOutcome outcome = run_train(cfg, model, entries);
  fs::path ckpt_path(out);
  if (ckpt_path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(ckpt_path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + ckpt_path.parent_path().string() + ": " + ec.message());
  }
  save_checkpoint(outcome.ckpt, ckpt_path);
  fs::path report_path = ckpt_path;
  report_path.replace_extension(".train.json");
  write_text(report_path, json(outcome.report).dump(2) + "\n");
  const EpochRecord& last = outcome.report.epochs.back();
  std::cout << model << ": " << outcome.report.epochs.size() << " epochs, final loss "
            << last.mean_loss << ", training accuracy " << last.accuracy << "\n"
            << "checkpoint " << ckpt_path.string() << " sha256 " << outcome.report.final_digest
            << "\n";
  return kOk;
}

int cmd_eval(const std::vector<std::string>& ckpt_paths, const std::string& manifest,
             const std::string& out, const std::string& split, bool resize) {
  const std::vector<Checkpoint> ckpts = load_checkpoints(ckpt_paths);
  const std::vector<ManifestEntry> entries = load_split(manifest, split);
  const EvaluationResult result = evaluate(ckpts, entries, PredictOptions{resize});
  write_text(with_suffix(out, ".predictions.jsonl"), format_predictions(result.frames.predictions));
  write_text(with_suffix(out, ".json"), render_report(result.reports, ReportFormat::json));
  const std::string md = render_report(result.reports, ReportFormat::markdown);
  write_text(with_suffix(out, ".md"), md);
  std::cout << md;
  return kOk;
}

int cmd_attack(const std::vector<std::string>& ckpt_paths, const std::string& manifest,
               const std::string& config, const std::string& out, const std::string& split,
               std::optional<double> epsilon, std::optional<std::string> target) {
  RunConfig cfg = load_config(config, std::nullopt, std::nullopt, epsilon);
  if (target) cfg.attack.target_model_id = *target;
  const std::vector<Checkpoint> ckpts = load_checkpoints(ckpt_paths);
  bool found = false;
  for (const Checkpoint& c : ckpts) found = found || c.spec.model_id == cfg.attack.target_model_id;
  if (!found)
    throw ConfigError("target model " + cfg.attack.target_model_id +
                      " is not among the given checkpoints");
  const std::vector<ManifestEntry> entries = entries_at_input(cfg, load_split(manifest, split));
  const RobustnessResult result = run_attack_experiment(ckpts, entries, cfg.attack);
  write_text(with_suffix(out, ".json"), json(result).dump(2) + "\n");
  const std::string md = render_robustness_markdown(result);
  write_text(with_suffix(out, ".md"), md);
  std::cout << md.substr(0, md.find("\n## "));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deepfake detection with fused CNN predictions"};
  app.require_subcommand(1);

  std::string config, out, model, manifest, split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> epsilon;
  std::optional<std::string> target;
  std::vector<std::string> ckpts;
  bool resize = false;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic pseudo-video dataset");
  synth->add_option("-c,--config", config, "Run config (JSON)")->required();
  synth->add_option("-o,--out", out, "Output directory");
  synth->add_option("--seed", seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Train one model and write a .fdck checkpoint");
  train->add_option("-c,--config", config, "Run config (JSON)")->required();
  train->add_option("-m,--model", model, "plainnet, branchnet or sepnet")->required();
  train->add_option("--manifest", manifest, "Dataset manifest (JSONL)")->required();
  train->add_option("-o,--out", out, "Checkpoint path")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--epochs", epochs, "Override the total epoch count");

  auto* eval = app.add_subcommand("eval", "Predict, fuse and score");
  eval->add_option("checkpoints", ckpts, "Checkpoint files")->required();
  eval->add_option("--manifest", manifest, "Dataset manifest (JSONL)")->required();
  eval->add_option("-o,--out", out, "Report path prefix")->required();
  eval->add_option("--split", split, "Manifest split to evaluate")->check(CLI::IsMember({"train", "test"}));
  eval->add_flag("--resize", resize, "Resize frames to the network input size");

  auto* attack = app.add_subcommand("attack", "FGSM attack on one model, scored per model and fused");
  attack->add_option("checkpoints", ckpts, "Checkpoint files")->required();
  attack->add_option("--manifest", manifest, "Dataset manifest (JSONL)")->required();
  attack->add_option("-c,--config", config, "Run config (JSON)")->required();
  attack->add_option("-o,--out", out, "Report path prefix")->required();
  attack->add_option("--split", split, "Manifest split to attack")->check(CLI::IsMember({"train", "test"}));
  attack->add_option("--epsilon", epsilon, "Override the attack epsilon");
  attack->add_option("--target", target, "Override the attacked model id");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(config, out, seed);
    if (train->parsed()) return cmd_train(config, model, manifest, out, seed, epochs);
    if (eval->parsed()) return cmd_eval(ckpts, manifest, out, split, resize);
    if (attack->parsed()) return cmd_attack(ckpts, manifest, config, out, split, epsilon, target);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kConfig;
}
