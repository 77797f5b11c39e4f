#include "rotasim/core.hpp"

#include <gtest/gtest.h>

#include <random>

#include "rotasim/io.hpp"

namespace rotasim {
namespace {

ModelProfile qwen_like() {
  ModelProfile p;
  p.name = "qwen2.5-32b-like";
  p.n_layers = 64;
  p.kv_bytes_per_token_per_layer = 4096;
  p.block_tokens = 16;
  return p;
}

TEST(BlocksNeeded, Examples) {
  ModelProfile p = qwen_like();
  EXPECT_EQ(blocks_needed(0, 0, p), 0);
  EXPECT_EQ(blocks_needed(16, 0, p), 1);
  EXPECT_EQ(blocks_needed(17, 1, p), 2);  // ceil(18/16)
}

TEST(BlocksNeeded, MonotoneInBothArguments) {
  ModelProfile p = qwen_like();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const TokenCount a = static_cast<TokenCount>(rng() % 500);
    const TokenCount b = static_cast<TokenCount>(rng() % 500);
    EXPECT_LE(blocks_needed(a, b, p), blocks_needed(a + 1, b, p));
    EXPECT_LE(blocks_needed(a, b, p), blocks_needed(a, b + 1, p));
  }
  EXPECT_THROW(blocks_needed(-1, 0, p), SimError);
}

TEST(Geometry, SegmentBytes) {
  EXPECT_EQ(segment_bytes(qwen_like()), 64ull << 10);  // 64KB
  ModelProfile unit;
  unit.n_layers = 1;
  unit.kv_bytes_per_token_per_layer = 1;
  unit.block_tokens = 1;
  EXPECT_EQ(segment_bytes(unit), 1u);
  ModelProfile p = qwen_like();
  p.kv_bytes_per_token_per_layer = 8192;
  EXPECT_EQ(segment_bytes(p), 128ull << 10);
}

TEST(Geometry, BlockBytes) {
  EXPECT_EQ(block_bytes(qwen_like()), 4ull << 20);  // 4MB
  ModelProfile unit;
  unit.n_layers = 1;
  unit.kv_bytes_per_token_per_layer = 1;
  unit.block_tokens = 1;
  EXPECT_EQ(block_bytes(unit), 1u);
  ModelProfile p;
  p.n_layers = 32;
  p.kv_bytes_per_token_per_layer = 2048;
  p.block_tokens = 16;
  EXPECT_EQ(block_bytes(p), 1ull << 20);
}

TEST(Geometry, BlockIsLayersTimesSegment) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    ModelProfile p;
    p.n_layers = 1 + static_cast<int>(rng() % 128);
    p.kv_bytes_per_token_per_layer = 1 + rng() % 16384;
    p.block_tokens = 1 + static_cast<int>(rng() % 64);
    EXPECT_EQ(block_bytes(p), static_cast<Bytes>(p.n_layers) * segment_bytes(p));
  }
}

TEST(Validation, RejectsBadProfiles) {
  ModelProfile p = qwen_like();
  p.n_layers = 0;
  EXPECT_THROW(p.validate(), SimError);
  p = qwen_like();
  p.kv_bytes_per_token_per_layer = 0;
  EXPECT_THROW(p.validate(), SimError);
  p = qwen_like();
  p.block_tokens = 0;
  EXPECT_THROW(p.validate(), SimError);
  p = qwen_like();
  p.compute_c1 = -1.0;
  EXPECT_THROW(p.validate(), SimError);

  SloSpec slos;
  slos.ttft_slo = 0.0;
  EXPECT_THROW(slos.validate(), SimError);
  VltParams vlt;
  vlt.alpha = -0.5;
  EXPECT_THROW(vlt.validate(), SimError);
}

TEST(Clock, Monotone) {
  SimClock clock;
  clock.advance_by(1.5);
  clock.advance_to(2.0);
  EXPECT_DOUBLE_EQ(clock.now, 2.0);
  EXPECT_THROW(clock.advance_to(1.0), SimError);
}

TEST(ProfileJson, ExactFieldNamesRoundTrip) {
  const json j = json::parse(R"({
    "name": "qwen2.5-32b-like",
    "n_layers": 64,
    "kv_bytes_per_token_per_layer": 4096,
    "block_tokens": 16,
    "compute_c0": 0.002,
    "compute_c1": 0.00002,
    "compute_c2": 0.00004,
    "compute_c3": 1e-9
  })");
  const ModelProfile p = model_profile_from_json(j);
  EXPECT_EQ(p.n_layers, 64);
  EXPECT_EQ(p.kv_bytes_per_token_per_layer, 4096u);
  EXPECT_EQ(p.block_tokens, 16);
  const json back = to_json(p);
  EXPECT_EQ(back.at("n_layers"), 64);
  EXPECT_EQ(back.at("kv_bytes_per_token_per_layer"), 4096);
  EXPECT_EQ(model_profile_from_json(back).name, p.name);
  EXPECT_THROW(model_profile_from_json(json{{"name", "x"}}), SimError);
}

}  // namespace
}  // namespace rotasim
