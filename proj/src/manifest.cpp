#include "fusedet/manifest.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fusedet/rng.hpp"

namespace fusedet {

using nlohmann::json;

const char* to_string(Label label) { return label == Label::fake ? "fake" : "real"; }
const char* to_string(Split split) { return split == Split::test ? "test" : "train"; }
const char* to_string(Resolution res) { return res == Resolution::high ? "high" : "low"; }

Label label_from_string(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "fake") return Label::fake;
  throw DataError("label must be 'real' or 'fake', got '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw DataError("split must be 'train' or 'test', got '" + s + "'");
}

Resolution resolution_from_string(const std::string& s) {
  if (s == "low") return Resolution::low;
  if (s == "high") return Resolution::high;
  throw DataError("resolution_tag must be 'low' or 'high', got '" + s + "'");
}

void to_json(json& j, const ManifestEntry& e) {
  j = json{{"frame_path", e.frame_path},   {"video_id", e.video_id},
           {"frame_index", e.frame_index}, {"label", to_string(e.label)},
           {"split", to_string(e.split)},  {"resolution_tag", to_string(e.resolution_tag)}};
}

void from_json(const json& j, ManifestEntry& e) {
  e.frame_path = j.at("frame_path").get<std::string>();
  e.video_id = j.at("video_id").get<std::string>();
  e.frame_index = j.at("frame_index").get<std::size_t>();
  e.label = label_from_string(j.at("label").get<std::string>());
  e.split = split_from_string(j.at("split").get<std::string>());
  e.resolution_tag = resolution_from_string(j.at("resolution_tag").get<std::string>());
}

namespace {

void validate_with_lines(const std::vector<ManifestEntry>& entries,
                         const std::vector<std::size_t>& lines) {
  std::map<std::pair<std::string, std::size_t>, std::size_t> seen;
  std::map<std::string, std::size_t> first_of_video;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& e = entries[i];
    auto [it, inserted] = seen.emplace(std::pair{e.video_id, e.frame_index}, i);
    if (!inserted)
      throw DataError("duplicate frame (" + e.video_id + ", " + std::to_string(e.frame_index) +
                      ") on lines " + std::to_string(lines[it->second]) + " and " +
                      std::to_string(lines[i]));
    auto [vit, vnew] = first_of_video.emplace(e.video_id, i);
    if (!vnew) {
      const ManifestEntry& f = entries[vit->second];
      const char* field = f.label != e.label               ? "label"
                          : f.split != e.split             ? "split"
                          : f.resolution_tag != e.resolution_tag ? "resolution_tag"
                                                           : nullptr;
      if (field)
        throw DataError("video " + e.video_id + " has mixed " + field + " on lines " +
                        std::to_string(lines[vit->second]) + " and " + std::to_string(lines[i]));
    }
  }
}

}  // namespace

void validate_manifest(const std::vector<ManifestEntry>& entries) {
  std::vector<std::size_t> lines(entries.size());
  for (std::size_t i = 0; i < lines.size(); ++i) lines[i] = i + 1;
  validate_with_lines(entries, lines);
}

std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base_dir) {
  std::vector<ManifestEntry> entries;
  std::vector<std::size_t> lines;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestEntry e;
    try {
      e = json::parse(line).get<ManifestEntry>();
    } catch (const json::exception& ex) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const DataError& ex) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
    if (!base_dir.empty() && std::filesystem::path(e.frame_path).is_relative())
      e.frame_path = (base_dir / e.frame_path).lexically_normal().string();
    entries.push_back(std::move(e));
    lines.push_back(lineno);
  }
  validate_with_lines(entries, lines);
  return entries;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::filesystem::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_manifest(ss.str(), base);
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const ManifestEntry& e : entries) {
    out += json(e).dump();
    out += '\n';
  }
  return out;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_manifest(entries);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

std::vector<ManifestEntry> oversample_balance(const std::vector<ManifestEntry>& entries,
                                             std::uint64_t seed) {
  std::vector<std::size_t> real, fake;
  for (std::size_t i = 0; i < entries.size(); ++i)
    (entries[i].label == Label::real ? real : fake).push_back(i);
  if (real.empty() || fake.empty())
    throw DataError("oversample_balance needs both classes, got " + std::to_string(real.size()) +
                    " real and " + std::to_string(fake.size()) + " fake entries");
  const auto& minority = real.size() < fake.size() ? real : fake;
  const std::size_t missing =
      std::max(real.size(), fake.size()) - std::min(real.size(), fake.size());
  Rng rng(seed);
  std::vector<ManifestEntry> out = entries;
  out.reserve(entries.size() + missing);
  for (std::size_t k = 0; k < missing; ++k) out.push_back(entries[minority[rng.below(minority.size())]]);
  rng.shuffle(out);
  return out;
}

}  // namespace fusedet
