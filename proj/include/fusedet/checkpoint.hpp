#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fusedet/net.hpp"

namespace fusedet {

// .fdck layout:
//   bytes 0..7   magic "FDCK\0\0\0\1"
//   bytes 8..15  header length L, little-endian uint64
//   next L bytes JSON header: spec, meta, tensors [{name, shape, offset, count}],
//                data_bytes, crc32 (of the data section)
//   data section little-endian IEEE-754 doubles, tensors in header order
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex SHA-256 of the serialized checkpoint.
std::string checkpoint_digest(const Checkpoint& ckpt);

std::string sha256_hex(const std::string& bytes);
std::string sha256_hex(const std::vector<unsigned char>& bytes);

}  // namespace fusedet
