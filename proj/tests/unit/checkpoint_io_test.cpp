#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "grlab/checkpoint.hpp"
#include "grlab/io.hpp"
#include "grlab/metrics.hpp"

namespace grlab {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("grlab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PolicyParams transformer_params() {
  ArchDescriptor a;
  a.kind = PolicyKind::kTinyTransformer;
  a.vocab_size = 12;
  a.max_seq_len = 10;
  a.embed_dim = 8;
  a.num_layers = 2;
  a.num_heads = 2;
  a.ffn_dim = 16;
  PolicyParams p = init_policy(a, 3);
  p.version = 17;
  p.values[0] = -0.0;
  p.values[1] = 1e-310;
  return p;
}

TEST(CheckpointTest, ExactRoundTrip) {
  const PolicyParams p = transformer_params();
  const auto bytes = encode_checkpoint(p);
  ASSERT_GE(bytes.size(), 4u);
  EXPECT_EQ(std::memcmp(bytes.data(), "GRLB", 4), 0);
  EXPECT_EQ(bytes.size(), 4 + 4 + 4 + 6 * 4 + 8 + 8 + 8 * p.values.size());
  const PolicyParams q = decode_checkpoint(bytes);
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(q.version, p.version);
  ASSERT_EQ(q.values.size(), p.values.size());
  EXPECT_EQ(std::memcmp(q.values.data(), p.values.data(), 8 * p.values.size()), 0);
  EXPECT_EQ(encode_checkpoint(q), bytes);
}

TEST(CheckpointTest, LittleEndianValues) {
  ArchDescriptor a;
  a.vocab_size = 2;
  a.max_seq_len = 1;
  PolicyParams p = init_policy(a, 0);
  p.values = {1.0, -2.5};
  const auto bytes = encode_checkpoint(p);
  const std::size_t off = bytes.size() - 16;
  // 1.0 is 0x3FF0000000000000.
  EXPECT_EQ(bytes[off + 7], 0x3F);
  EXPECT_EQ(bytes[off + 6], 0xF0);
  EXPECT_EQ(bytes[off + 0], 0x00);
}

TEST(CheckpointTest, RejectsCorruption) {
  auto bytes = encode_checkpoint(transformer_params());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), std::runtime_error);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(decode_checkpoint(bad_version), std::runtime_error);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated), std::runtime_error);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), std::runtime_error);
  EXPECT_THROW(decode_checkpoint({}), std::runtime_error);
}

TEST(CheckpointTest, FileRoundTripLeavesNoTemporaries) {
  const fs::path dir = scratch_dir("ckpt");
  const PolicyParams p = transformer_params();
  save_checkpoint(dir / "a.grlb", p);
  save_checkpoint(dir / "a.grlb", p);
  const PolicyParams q = load_checkpoint(dir / "a.grlb");
  EXPECT_EQ(q.values, p.values);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(load_checkpoint(dir / "missing.grlb"), IoError);
}

TEST(IoTest, AtomicWriteAndRead) {
  const fs::path dir = scratch_dir("io");
  write_file_atomic(dir / "x.txt", "hello\nworld\n");
  EXPECT_EQ(read_text_file(dir / "x.txt"), "hello\nworld\n");
  write_file_atomic(dir / "x.txt", "");
  EXPECT_EQ(read_text_file(dir / "x.txt"), "");
  EXPECT_THROW(read_text_file(dir / "nope.txt"), IoError);
  write_file_atomic(dir / "new_dir" / "y.txt", "a");
  EXPECT_EQ(read_text_file(dir / "new_dir" / "y.txt"), "a");
  // The parent is a regular file, so no directory can be created.
  EXPECT_THROW(write_file_atomic(dir / "x.txt" / "z.txt", "a"), IoError);
}

TEST(IoTest, SplitLines) {
  EXPECT_EQ(split_lines("a\nb\n"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(split_lines("a\r\nb"), (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(split_lines("").empty());
}

TEST(IoTest, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path dir = scratch_dir("sha");
  write_file_atomic(dir / "abc", "abc");
  EXPECT_EQ(sha256_file(dir / "abc"), sha256_hex("abc"));
}

TEST(MetricsTest, TrainRecordRoundTrip) {
  MetricsRecord m;
  m.outer = 3;
  m.inner = 2;
  m.version = 14;
  m.mean_reward = {0.125, std::nullopt, 1.0 / 3.0};
  m.mean_reward_all = 0.2;
  m.loss = -0.012345678901234567;
  m.fraction_clipped = 0.25;
  m.mean_abs_log_ratio = 1e-17;
  m.mean_advantage = -3e-9;
  m.num_groups = 12;
  m.degenerate_groups = 1;
  m.collapsed_groups = 2;
  m.masked_rollouts = 5;
  m.flagged = true;
  const std::string line = to_json_line(m);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_NE(line.find("\"type\":\"train\""), std::string::npos);
  EXPECT_NE(line.find("\"code\":null"), std::string::npos);
  EXPECT_EQ(std::get<MetricsRecord>(parse_stream_record(line)), m);
  m.wall_clock_s = 1.5;
  EXPECT_EQ(std::get<MetricsRecord>(parse_stream_record(to_json_line(m))), m);
}

TEST(MetricsTest, EvalRecordRoundTripAndErrors) {
  EvalRecord e{4, {0.5, 0.25, std::nullopt}, 0.375};
  EXPECT_EQ(std::get<EvalRecord>(parse_stream_record(to_json_line(e))), e);
  EXPECT_THROW(parse_stream_record("not json"), std::invalid_argument);
  EXPECT_THROW(parse_stream_record("{\"type\":\"other\"}"), std::invalid_argument);
  EXPECT_THROW(parse_stream_record("{\"type\":\"train\",\"outer\":1}"), std::invalid_argument);
}

}  // namespace
}  // namespace grlab
