#include "fusedet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "fusedet/image.hpp"
#include "fusedet/rng.hpp"

namespace fusedet {

using nlohmann::json;

void SyntheticDataConfig::validate() const {
  if (frames_per_video < 1) throw ConfigError("frames_per_video must be >= 1");
  if (!(artifact_amplitude.lo > 0.0 && artifact_amplitude.lo <= artifact_amplitude.hi))
    throw ConfigError("artifact_amplitude must be an ordered range of positive values");
}

std::size_t SyntheticDataConfig::total_videos() const {
  std::size_t n = 0;
  for (const auto& [split, by_res] : counts)
    for (const auto& [res, c] : by_res) n += c.real + c.fake;
  return n;
}

void to_json(json& j, const SyntheticDataConfig& c) {
  json counts = json::object();
  for (const auto& [split, by_res] : c.counts)
    for (const auto& [res, vc] : by_res)
      counts[to_string(split)][to_string(res)] = {{"real", vc.real}, {"fake", vc.fake}};
  j = json{{"counts", counts},
           {"frames_per_video", c.frames_per_video},
           {"artifact_amplitude", {c.artifact_amplitude.lo, c.artifact_amplitude.hi}},
           {"seed", c.seed}};
}

void from_json(const json& j, SyntheticDataConfig& c) {
  c = SyntheticDataConfig{};
  try {
    if (j.contains("counts"))
      for (const auto& [split, by_res] : j.at("counts").items())
        for (const auto& [res, vc] : by_res.items())
          c.counts[split_from_string(split)][resolution_from_string(res)] =
              VideoCounts{vc.value("real", std::size_t{0}), vc.value("fake", std::size_t{0})};
  } catch (const DataError& e) {
    throw ConfigError(std::string("synthetic counts: ") + e.what());
  }
  c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
  if (j.contains("artifact_amplitude")) {
    const auto v = j.at("artifact_amplitude").get<std::vector<double>>();
    if (v.size() != 2) throw ConfigError("artifact_amplitude needs [lo, hi]");
    c.artifact_amplitude = {v[0], v[1]};
  }
  c.seed = j.value("seed", c.seed);
}

std::size_t resolution_pixels(Resolution res) { return res == Resolution::high ? 128 : 64; }

namespace {

struct Blob {
  double u, v, sigma;
  std::array<double, 3> amp;
};

}  // namespace

SyntheticVideo synthesize_video(const std::string& video_id, Label label, Split split,
                                Resolution res, std::size_t frames, Range amplitude,
                                std::uint64_t seed) {
  const std::size_t S = resolution_pixels(res);
  Rng rng(derive_seed(seed, "video", video_id));

  // Scene: smooth background plus low-frequency colour blobs, in normalized
  // coordinates so both resolutions show the same content.
  std::array<double, 3> background{};
  for (double& b : background) b = rng.uniform(0.35, 0.65);
  std::vector<Blob> blobs(5 + rng.below(4));
  for (Blob& b : blobs) {
    b.u = rng.uniform(0.1, 0.9);
    b.v = rng.uniform(0.1, 0.9);
    b.sigma = rng.uniform(0.08, 0.22);
    for (double& a : b.amp) a = rng.uniform(-0.2, 0.2);
  }

  // Blending artifact: period-2 checkerboard inside a soft face-region ellipse.
  // Amplitude is specified at 64x64 and scales with 64/S.
  const double a = rng.uniform(amplitude.lo, amplitude.hi) * 64.0 / static_cast<double>(S);
  const double phase = rng.below(2) == 0 ? 1.0 : -1.0;
  std::array<double, 3> channel_weight{};
  for (double& w : channel_weight) w = rng.uniform(0.6, 1.0);
  const double cu = 0.5 + rng.uniform(-0.05, 0.05), cv = 0.5 + rng.uniform(-0.05, 0.05);
  const double rx = rng.uniform(0.25, 0.32), ry = rng.uniform(0.32, 0.4);

  SyntheticVideo video{video_id, label, split, res, {}};
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<Blob> moved = blobs;
    for (Blob& b : moved) {
      b.u += rng.normal(0.0, 0.008);
      b.v += rng.normal(0.0, 0.008);
    }
    const double brightness = rng.normal(0.0, 0.01);
    Tensor img({3, S, S});
    for (std::size_t y = 0; y < S; ++y) {
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(S);
      for (std::size_t x = 0; x < S; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(S);
        std::array<double, 3> px = background;
        for (const Blob& b : moved) {
          const double d2 = (u - b.u) * (u - b.u) + (v - b.v) * (v - b.v);
          const double g = std::exp(-d2 / (2.0 * b.sigma * b.sigma));
          for (std::size_t c = 0; c < 3; ++c) px[c] += b.amp[c] * g;
        }
        double artifact = 0.0;
        if (label == Label::fake) {
          const double du = (u - cu) / rx, dv = (v - cv) / ry;
          const double rho = std::sqrt(du * du + dv * dv);
          const double mask = 1.0 / (1.0 + std::exp((rho - 1.0) / 0.08));
          const double checker = ((x + y) % 2 == 0) ? phase : -phase;
          artifact = a * mask * checker;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double val = px[c] + brightness + artifact * channel_weight[c] +
                             rng.normal(0.0, 0.008);
          img.at(c, y, x) = std::clamp(val, 0.0, 1.0);
        }
      }
    }
    video.frames.push_back(std::move(img));
  }
  return video;
}

std::vector<ManifestEntry> generate_synthetic_dataset(const SyntheticDataConfig& cfg,
                                                      const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<ManifestEntry> entries;
  for (Split split : {Split::train, Split::test}) {
    auto sit = cfg.counts.find(split);
    if (sit == cfg.counts.end()) continue;
    for (Resolution res : {Resolution::low, Resolution::high}) {
      auto rit = sit->second.find(res);
      if (rit == sit->second.end()) continue;
      std::size_t counter = 0;
      for (Label label : {Label::real, Label::fake}) {
        const std::size_t n = label == Label::real ? rit->second.real : rit->second.fake;
        for (std::size_t i = 0; i < n; ++i, ++counter) {
          char id[64];
          std::snprintf(id, sizeof id, "%s-%s-%04zu", to_string(split), to_string(res), counter);
          const SyntheticVideo video = synthesize_video(id, label, split, res,
                                                        cfg.frames_per_video,
                                                        cfg.artifact_amplitude, cfg.seed);
          const fs::path rel_dir = fs::path(to_string(split)) / id;
          fs::create_directories(out_dir / rel_dir, ec);
          if (ec) throw IoError("cannot create " + (out_dir / rel_dir).string() + ": " + ec.message());
          for (std::size_t f = 0; f < video.frames.size(); ++f) {
            const fs::path rel = rel_dir / (std::to_string(f) + ".ppm");
            save_image(video.frames[f], out_dir / rel);
            entries.push_back({rel.generic_string(), id, f, label, split, res});
          }
        }
      }
    }
  }
  save_manifest(entries, out_dir / "manifest.jsonl");
  return entries;
}

double laplacian_energy(const Tensor& image) {
  if (image.rank() != 3 || image.dim(1) < 3 || image.dim(2) < 3)
    throw ShapeError("laplacian_energy: expected [C,H,W] with H,W >= 3");
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 1; y + 1 < H; ++y)
      for (std::size_t x = 1; x + 1 < W; ++x)
        sum += std::abs(4.0 * image.at(c, y, x) - image.at(c, y - 1, x) - image.at(c, y + 1, x) -
                        image.at(c, y, x - 1) - image.at(c, y, x + 1));
  return sum / static_cast<double>(C * (H - 2) * (W - 2));
}

}  // namespace fusedet
