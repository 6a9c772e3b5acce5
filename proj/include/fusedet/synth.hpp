#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/augment.hpp"
#include "fusedet/manifest.hpp"

namespace fusedet {

struct VideoCounts {
  std::size_t real = 0;
  std::size_t fake = 0;

  friend bool operator==(const VideoCounts&, const VideoCounts&) = default;
};

struct SyntheticDataConfig {
  // counts[split][resolution]
  std::map<Split, std::map<Resolution, VideoCounts>> counts;
  std::size_t frames_per_video = 5;
  // Artifact amplitude at 64x64; high resolution frames use amplitude * 64/128.
  Range artifact_amplitude{0.2, 0.35};
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t total_videos() const;
};

void to_json(nlohmann::json& j, const SyntheticDataConfig& c);
void from_json(const nlohmann::json& j, SyntheticDataConfig& c);

std::size_t resolution_pixels(Resolution res);

struct SyntheticVideo {
  std::string video_id;
  Label label = Label::real;
  Split split = Split::train;
  Resolution resolution = Resolution::low;
  std::vector<Tensor> frames;
};

// Frames of one pseudo-video, a pure function of its arguments.
SyntheticVideo synthesize_video(const std::string& video_id, Label label, Split split,
                                Resolution res, std::size_t frames, Range amplitude,
                                std::uint64_t seed);

// Writes <out>/<split>/<video_id>/<frame_index>.ppm and <out>/manifest.jsonl.
// Returned entries carry paths relative to `out_dir`.
std::vector<ManifestEntry> generate_synthetic_dataset(const SyntheticDataConfig& cfg,
                                                      const std::filesystem::path& out_dir);

// Mean absolute response of the 4-neighbour Laplacian, per channel, averaged.
double laplacian_energy(const Tensor& image);

}  // namespace fusedet
