#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fusedet/layers.hpp"

namespace fusedet {

enum class Split { train, test };
enum class Resolution { low, high };

const char* to_string(Label label);
const char* to_string(Split split);
const char* to_string(Resolution res);
Label label_from_string(const std::string& s);
Split split_from_string(const std::string& s);
Resolution resolution_from_string(const std::string& s);

struct ManifestEntry {
  std::string frame_path;
  std::string video_id;
  std::size_t frame_index = 0;
  Label label = Label::real;
  Split split = Split::train;
  Resolution resolution_tag = Resolution::low;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

// Checks (video_id, frame_index) uniqueness and per-video consistency of label,
// split and resolution. Throws DataError naming the offending lines (1-based
// positions in `entries`).
void validate_manifest(const std::vector<ManifestEntry>& entries);

// JSONL, one entry per line; blank lines are skipped. Relative frame paths are
// resolved against the manifest's directory.
std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir = {});
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

std::string format_manifest(const std::vector<ManifestEntry>& entries);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split);

// Minority-class entries are resampled with replacement until both classes
// have equal counts; the result is shuffled with `seed`.
std::vector<ManifestEntry> oversample_balance(const std::vector<ManifestEntry>& entries,
                                             std::uint64_t seed);

}  // namespace fusedet
