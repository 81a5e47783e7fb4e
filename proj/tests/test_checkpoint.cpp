#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "distlab/checkpoint.hpp"
#include "test_support.hpp"

using namespace distlab;

namespace {

Checkpoint sample_checkpoint(bool tied = false) {
  auto cfg = distlab::testing::tiny_config(13, 1);
  cfg.tie_embeddings = tied;
  Checkpoint c;
  c.config = cfg;
  c.params = distlab::testing::spread_params<float>(cfg, 42);
  c.tokenizer_hash = "abc123";
  c.metadata = {{"role", "teacher"}, {"seed", 7}};
  return c;
}

}  // namespace

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), "DLABCKPT");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + i]);
  const auto header = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(header["format_version"], Checkpoint::kFormatVersion);
  EXPECT_EQ(header["tokenizer_hash"], "abc123");
  EXPECT_TRUE(header["tensors"].contains("layers.1.feed_forward.w_down"));
  // Payload is exactly the parameters as f32.
  EXPECT_EQ(bytes.size() - 16 - len, static_cast<std::size_t>(param_count(sample_checkpoint().config)) * 4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool tied : {false, true}) {
    const auto c = sample_checkpoint(tied);
    const auto back = deserialize_checkpoint(serialize_checkpoint(c));
    EXPECT_TRUE(params_bit_equal(c.params, back.params));
    EXPECT_TRUE(back.config == c.config);
    EXPECT_EQ(back.tokenizer_hash, c.tokenizer_hash);
    EXPECT_EQ(back.metadata, c.metadata);
  }
}

TEST(Checkpoint, PreservesSpecialFloatBits) {
  auto c = sample_checkpoint();
  c.params.norm(0, 0) = -0.0f;
  c.params.norm(0, 1) = std::numeric_limits<float>::denorm_min();
  const auto back = deserialize_checkpoint(serialize_checkpoint(c));
  EXPECT_TRUE(std::signbit(back.params.norm(0, 0)));
  EXPECT_EQ(back.params.norm(0, 1), std::numeric_limits<float>::denorm_min());
}

TEST(Checkpoint, SaveLoadFile) {
  const auto dir = distlab::testing::temp_dir("ckpt");
  const auto c = sample_checkpoint();
  save_checkpoint(dir / "m.ckpt", c);
  const auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_TRUE(params_bit_equal(c.params, back.params));
  // Saving the reloaded checkpoint yields identical bytes.
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(c));
}

TEST(Checkpoint, BitEqualDetectsSingleUlp) {
  const auto c = sample_checkpoint();
  auto d = c.params;
  d.layers[0].wv(1, 2) = std::nextafter(d.layers[0].wv(1, 2), 1.0f);
  EXPECT_FALSE(params_bit_equal(c.params, d));
}

TEST(Checkpoint, Errors) {
  const auto dir = distlab::testing::temp_dir("ckpt_err");
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
  auto bytes = serialize_checkpoint(sample_checkpoint());
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT"), CheckpointError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 12)), CheckpointError);
}
