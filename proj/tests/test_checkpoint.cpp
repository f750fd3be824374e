#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"

using namespace mos;
using mos::testing::scratch_dir;
using mos::testing::tiny_model;

namespace {

std::string load_error_message(const std::string& bytes) {
  try {
    decode_checkpoint(bytes, "ck");
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (auto mode : {MemMode::none, MemMode::short_term, MemMode::long_term, MemMode::full}) {
    const auto dir = scratch_dir("ck_roundtrip");
    const auto params = ModelParams<float>::init(tiny_model(mode), 17);
    save_checkpoint(params, dir / "model.ckpt");
    const auto ck = load_checkpoint(dir / "model.ckpt");
    EXPECT_EQ(ck.config, params.config);
    const auto a = params.named_tensors(), b = ck.params.named_tensors();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].first, b[i].first);
      ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
      EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(), a[i].second.size() * 4), 0);
    }
    EXPECT_EQ(encode_checkpoint(ck.params), encode_checkpoint(params));
  }
}

TEST(Checkpoint, ForwardIdenticalAfterReload) {
  const auto c = tiny_model();
  const auto params = ModelParams<float>::init(c, 3);
  const auto ck = decode_checkpoint(encode_checkpoint(params), "mem");
  const std::vector<Frame> frames(c.window, Frame(c.frame_size(), 0.25f));
  const std::vector<FrameView> window(frames.begin(), frames.end());
  HistoryState h(c.num_phases, c.step_size);
  for (int i = 0; i < 5; ++i) h.observe(1);
  const std::vector<std::vector<float>> imps(2, std::vector<float>(c.dim, 0.5f));
  const auto a = forward(params, std::span<const FrameView>(window), h, std::span<const std::vector<float>>(imps));
  const auto b = forward(ck.params, std::span<const FrameView>(window), h, std::span<const std::vector<float>>(imps));
  for (std::size_t i = 0; i < c.num_phases; ++i) EXPECT_EQ(a.logits.data()[i], b.logits.data()[i]);
}

TEST(Checkpoint, NoneModeOmitsMemoryGroups) {
  const auto bytes = encode_checkpoint(ModelParams<float>::init(tiny_model(MemMode::none), 1));
  EXPECT_EQ(bytes.find("history."), std::string::npos);
  EXPECT_EQ(bytes.find("impression."), std::string::npos);
}

TEST(Checkpoint, UnknownVersionByte) {
  auto bytes = encode_checkpoint(ModelParams<float>::init(tiny_model(), 1));
  bytes[8] = 9;
  const auto msg = load_error_message(bytes);
  EXPECT_NE(msg.find("version"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unsupported"), std::string::npos) << msg;
}

TEST(Checkpoint, ConfigShapeMismatchNamesParameter) {
  // Header claims C=7 while the payload was written for C=3.
  auto c3 = tiny_model();
  auto c7 = c3;
  c7.num_phases = 7;
  const auto bytes3 = encode_checkpoint(ModelParams<float>::init(c3, 1));
  const auto header_len = static_cast<std::uint32_t>(static_cast<unsigned char>(bytes3[9])) |
                          static_cast<std::uint32_t>(static_cast<unsigned char>(bytes3[10])) << 8 |
                          static_cast<std::uint32_t>(static_cast<unsigned char>(bytes3[11])) << 16 |
                          static_cast<std::uint32_t>(static_cast<unsigned char>(bytes3[12])) << 24;
  auto header = Json::parse(bytes3.substr(13, header_len));
  header["config"] = c7;
  const auto text = header.dump();
  std::string forged = bytes3.substr(0, 9);
  io::put_u32(forged, static_cast<std::uint32_t>(text.size()));
  forged += text + bytes3.substr(13 + header_len);
  const auto msg = load_error_message(forged);
  EXPECT_NE(msg.find("shape"), std::string::npos) << msg;
  EXPECT_NE(msg.find("head.weight"), std::string::npos) << msg;
}

TEST(Checkpoint, TruncatedAndCorruptFiles) {
  const auto bytes = encode_checkpoint(ModelParams<float>::init(tiny_model(), 1));
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{11}, std::size_t{40}, bytes.size() - 1}) {
    const auto msg = load_error_message(bytes.substr(0, cut));
    EXPECT_NE(msg.find("truncated"), std::string::npos) << "cut " << cut << ": " << msg;
  }
  EXPECT_NE(load_error_message("XXXXXXXX" + bytes.substr(8)).find("magic"), std::string::npos);
  EXPECT_NE(load_error_message(bytes + "zz").find("trailing"), std::string::npos);
  auto bad_json = bytes;
  bad_json[13] = '!';
  EXPECT_NE(load_error_message(bad_json).find("header"), std::string::npos);
  const auto dir = scratch_dir("ck_missing");
  EXPECT_THROW(load_checkpoint(dir / "nope.ckpt"), IoError);
}

TEST(Checkpoint, HashIsStableAndContentSensitive) {
  const auto dir = scratch_dir("ck_hash");
  save_checkpoint(ModelParams<float>::init(tiny_model(), 1), dir / "a.ckpt");
  save_checkpoint(ModelParams<float>::init(tiny_model(), 1), dir / "b.ckpt");
  save_checkpoint(ModelParams<float>::init(tiny_model(), 2), dir / "c.ckpt");
  EXPECT_EQ(checkpoint_hash(dir / "a.ckpt"), checkpoint_hash(dir / "b.ckpt"));
  EXPECT_NE(checkpoint_hash(dir / "a.ckpt"), checkpoint_hash(dir / "c.ckpt"));
  EXPECT_EQ(checkpoint_hash(dir / "a.ckpt").size(), 16u);
  // FNV-1a 64 reference values.
  EXPECT_EQ(io::fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(io::fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(ModelConfigJson, UnknownKeyRejected) {
  ModelConfig c;
  Json j = c;
  ModelConfig back;
  merge_model_config(j, back);
  EXPECT_EQ(back, c);
  j["dropout"] = 0.1;
  EXPECT_THROW(merge_model_config(j, back), ConfigError);
  EXPECT_THROW(merge_model_config(Json{{"mem_mode", "medium"}}, back), ConfigError);
}
