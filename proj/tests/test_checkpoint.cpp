#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "fusedet/checkpoint.hpp"
#include "fusedet/errors.hpp"
#include "fusedet/net.hpp"
#include "test_util.hpp"

using namespace fusedet;
using nlohmann::json;
using fusedet::testing::TempDir;

namespace {

using Bytes = std::vector<unsigned char>;

Checkpoint sample(std::uint64_t seed = 3) {
  Checkpoint c = build_net(kBranchNet, {3, 64, 64}, seed);
  c.meta.epochs_trained = 7;
  c.meta.config_digest = "abc123";
  return c;
}

Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

struct Parts {
  json header;
  Bytes data;
};

Parts split(const Bytes& b) {
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(b[8 + i]) << (8 * i);
  return {json::parse(b.begin() + 16, b.begin() + 16 + long(len)), Bytes(b.begin() + 16 + long(len), b.end())};
}

Bytes join(const json& header, const Bytes& data) {
  const std::string text = header.dump();
  Bytes out{'F', 'D', 'C', 'K', 0, 0, 0, 1};
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(text.size() >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

CheckpointError::Kind kind_of(const Bytes& b) {
  try {
    deserialize_checkpoint(b);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no CheckpointError raised";
  return CheckpointError::Kind::corrupt_header;
}

}  // namespace

TEST(Checkpoint, RoundTripIsIdentity) {
  const Checkpoint c = sample();
  EXPECT_EQ(deserialize_checkpoint(serialize_checkpoint(c)), c);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir("ckpt");
  const Checkpoint c = sample();
  save_checkpoint(c, dir / "a.fdck");
  const Checkpoint loaded = load_checkpoint(dir / "a.fdck");
  save_checkpoint(loaded, dir / "b.fdck");
  EXPECT_EQ(loaded, c);
  EXPECT_EQ(read_file(dir / "a.fdck"), read_file(dir / "b.fdck"));
  EXPECT_EQ(checkpoint_digest(loaded), checkpoint_digest(c));
}

TEST(Checkpoint, LayoutIsMagicHeaderThenLittleEndianDoubles) {
  const Checkpoint c = sample();
  const Bytes b = serialize_checkpoint(c);
  EXPECT_EQ(Bytes(b.begin(), b.begin() + 8), (Bytes{'F', 'D', 'C', 'K', 0, 0, 0, 1}));
  const Parts p = split(b);
  EXPECT_EQ(p.header.at("format"), "fdck");
  EXPECT_EQ(p.header.at("data_bytes").get<std::size_t>(), p.data.size());
  const json& first = p.header.at("tensors").at(0);
  const Tensor& t = c.params.at(first.at("name").get<std::string>());
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p.data[i]) << (8 * i);
  EXPECT_EQ(std::bit_cast<double>(bits), t[0]);
}

TEST(Checkpoint, FlippedShapeFieldIsShapeMismatch) {
  Parts p = split(serialize_checkpoint(sample()));
  json& shape = p.header["tensors"][0]["shape"];
  std::swap(shape[0], shape[1]);
  EXPECT_EQ(kind_of(join(p.header, p.data)), CheckpointError::Kind::shape_mismatch);
}

TEST(Checkpoint, WrongOffsetIsShapeMismatch) {
  Parts p = split(serialize_checkpoint(sample()));
  p.header["tensors"][1]["offset"] = p.header["tensors"][1]["offset"].get<std::size_t>() + 8;
  EXPECT_EQ(kind_of(join(p.header, p.data)), CheckpointError::Kind::shape_mismatch);
}

TEST(Checkpoint, TruncatedData) {
  Bytes b = serialize_checkpoint(sample());
  b.resize(b.size() - 9);
  EXPECT_EQ(kind_of(b), CheckpointError::Kind::truncated);
}

TEST(Checkpoint, FlippedDataBitFailsChecksum) {
  Bytes b = serialize_checkpoint(sample());
  b[b.size() - 3] ^= 0x10;
  EXPECT_EQ(kind_of(b), CheckpointError::Kind::checksum_mismatch);
}

TEST(Checkpoint, CorruptHeader) {
  Bytes b = serialize_checkpoint(sample());
  b[20] = '#';
  EXPECT_EQ(kind_of(b), CheckpointError::Kind::corrupt_header);
  Bytes magic = serialize_checkpoint(sample());
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), CheckpointError::Kind::corrupt_header);
  EXPECT_EQ(kind_of(Bytes{1, 2, 3}), CheckpointError::Kind::corrupt_header);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/x.fdck"), IoError);
}

TEST(Checkpoint, DigestTracksParameters) {
  Checkpoint a = sample(), b = sample();
  EXPECT_EQ(checkpoint_digest(a), checkpoint_digest(b));
  b.params.begin()->second[0] = std::nextafter(b.params.begin()->second[0], 1.0);
  EXPECT_NE(checkpoint_digest(a), checkpoint_digest(b));
  EXPECT_EQ(checkpoint_digest(a).size(), 64u);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex(std::string("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
