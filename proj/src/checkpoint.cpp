#include "fusedet/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <zlib.h>

namespace fusedet {

using nlohmann::json;

namespace {

constexpr std::array<unsigned char, 8> kMagic{'F', 'D', 'C', 'K', 0, 0, 0, 1};

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

[[noreturn]] void fail(CheckpointError::Kind kind, const std::string& what) {
  throw CheckpointError(kind, "checkpoint: " + what);
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<unsigned char> data;
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, shape] : param_shapes(ckpt.spec)) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end() || it->second.shape() != shape)
      throw ShapeError("checkpoint parameter '" + name + "' missing or not shaped " +
                       shape_string(shape));
    const Tensor& t = it->second;
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", t.size()}});
    for (double v : t.data()) put_u64(data, std::bit_cast<std::uint64_t>(v));
    offset += t.size() * 8;
  }
  if (tensors.size() != ckpt.params.size())
    throw ShapeError("checkpoint holds parameters not described by its network spec");

  const json header{{"format", "fdck"},
                    {"version", 1},
                    {"spec", ckpt.spec},
                    {"meta",
                     {{"seed", ckpt.meta.seed},
                      {"epochs_trained", ckpt.meta.epochs_trained},
                      {"config_digest", ckpt.meta.config_digest}}},
                    {"tensors", tensors},
                    {"data_bytes", data.size()},
                    {"crc32", crc32_of(data.data(), data.size())}};
  const std::string text = header.dump();

  std::vector<unsigned char> out(kMagic.begin(), kMagic.end());
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 16 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    fail(K::corrupt_header, "bad magic");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) fail(K::corrupt_header, "header length exceeds file size");

  json header;
  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> table;
  std::vector<std::size_t> offsets;
  std::uint64_t data_bytes = 0;
  std::uint32_t crc = 0;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    if (header.at("format") != "fdck" || header.at("version") != 1)
      fail(K::corrupt_header, "unsupported format or version");
    ckpt.spec = header.at("spec").get<NetworkSpec>();
    const json& meta = header.at("meta");
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.meta.epochs_trained = meta.at("epochs_trained").get<std::size_t>();
    ckpt.meta.config_digest = meta.at("config_digest").get<std::string>();
    for (const json& t : header.at("tensors")) {
      table.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      offsets.push_back(t.at("offset").get<std::size_t>());
      if (t.at("count").get<std::size_t>() != shape_size(table.back().second))
        fail(K::shape_mismatch, "tensor '" + table.back().first + "' count disagrees with shape " +
                                    shape_string(table.back().second));
    }
    data_bytes = header.at("data_bytes").get<std::uint64_t>();
    crc = header.at("crc32").get<std::uint32_t>();
  } catch (const json::exception& e) {
    fail(K::corrupt_header, std::string("unreadable header: ") + e.what());
  } catch (const ConfigError& e) {
    fail(K::corrupt_header, std::string("invalid network spec: ") + e.what());
  }

  std::vector<std::pair<std::string, Shape>> expected;
  try {
    infer_shapes(ckpt.spec);
    expected = param_shapes(ckpt.spec);
  } catch (const Error& e) {
    fail(K::corrupt_header, std::string("invalid network spec: ") + e.what());
  }
  if (expected != table) fail(K::shape_mismatch, "tensor table does not match the network spec");

  std::size_t running = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (offsets[i] != running)
      fail(K::shape_mismatch, "tensor '" + table[i].first + "' offset " +
                                  std::to_string(offsets[i]) + ", expected " +
                                  std::to_string(running));
    running += shape_size(table[i].second) * 8;
  }
  if (running != data_bytes) fail(K::shape_mismatch, "tensor table does not cover data_bytes");

  const std::size_t data_start = 16 + header_len;
  const std::size_t available = bytes.size() - data_start;
  if (available < data_bytes)
    fail(K::truncated, "data section has " + std::to_string(available) + " bytes, expected " +
                           std::to_string(data_bytes));
  if (available > data_bytes) fail(K::corrupt_header, "trailing bytes after data section");
  if (crc32_of(bytes.data() + data_start, data_bytes) != crc)
    fail(K::checksum_mismatch, "CRC32 of data section does not match header");

  const unsigned char* p = bytes.data() + data_start;
  for (const auto& [name, shape] : table) {
    Tensor t(shape);
    for (double& v : t.data()) {
      v = std::bit_cast<double>(get_u64(p));
      p += 8;
    }
    ckpt.params.emplace(name, std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

namespace {

std::string sha256_raw(const unsigned char* data, std::size_t n) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data, n, md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s.push_back(hex[md[i] >> 4]);
    s.push_back(hex[md[i] & 0xf]);
  }
  return s;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  return sha256_raw(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
}

std::string sha256_hex(const std::vector<unsigned char>& bytes) {
  return sha256_raw(bytes.data(), bytes.size());
}

std::string checkpoint_digest(const Checkpoint& ckpt) {
  return sha256_hex(serialize_checkpoint(ckpt));
}

}  // namespace fusedet
