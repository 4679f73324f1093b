#include <filesystem>

#include <gtest/gtest.h>

#include "driftcomp/errors.hpp"
#include "driftcomp/pretrain.hpp"
#include "driftcomp/serialization.hpp"

using namespace driftcomp;

namespace {

Backbone sample_backbone() {
  const auto spec = build_toy_resnet(4, 1, 5, {2, 8, 8});
  auto w = init_weights(spec, 3);
  for (auto& l : w)
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.01 * static_cast<double>(i) - 0.02;
  QuantScheme s;
  s.per = ScaleGranularity::kOutputChannel;
  return quantize_backbone(spec, w, s);
}

CompensationArchive sample_archive() {
  const auto spec = build_toy_resnet(4, 1, 5, {2, 8, 8});
  CompensationArchive a;
  a.projections = init_shared_projections(spec, 2, 11);
  for (int k = 0; k < 3; ++k) {
    auto s = make_initial_set(spec, 2, k, k == 0 ? 1.0 : 100.0 * k, 0.1 * (k + 1));
    for (auto& l : s.layers)
      for (std::size_t i = 0; i < l.b_vec.size(); ++i) l.b_vec[i] = 0.5 * k - 0.003 * static_cast<double>(i);
    a.sets.push_back(s);
  }
  return a;
}

void expect_same(const Backbone& a, const Backbone& b) {
  EXPECT_EQ(model_to_json(a.spec), model_to_json(b.spec));
  EXPECT_EQ(a.scheme.weight_bits, b.scheme.weight_bits);
  EXPECT_EQ(a.scheme.act_bits, b.scheme.act_bits);
  EXPECT_EQ(a.scheme.per, b.scheme.per);
  ASSERT_EQ(a.weights.size(), b.weights.size());
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    EXPECT_EQ(a.weights[k].codes, b.weights[k].codes);
    EXPECT_EQ(a.weights[k].scales, b.weights[k].scales);
    EXPECT_EQ(a.weights[k].shape, b.weights[k].shape);
    EXPECT_EQ(a.biases[k], b.biases[k]);
  }
}

}  // namespace

TEST(Crc32, KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}

TEST(BackboneFile, RoundTrip) {
  const auto bb = sample_backbone();
  const auto bytes = encode_backbone(bb, R"({"seed": 3})");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DCBK");
  expect_same(bb, decode_backbone(bytes));
  EXPECT_EQ(encode_backbone(decode_backbone(bytes), R"({"seed": 3})"), bytes);
}

TEST(BackboneFile, SaveLoad) {
  const auto path = (std::filesystem::temp_directory_path() / "driftcomp_test.dcbk").string();
  const auto bb = sample_backbone();
  save_backbone(path, bb);
  expect_same(bb, load_backbone(path));
  std::filesystem::remove(path);
}

TEST(BackboneFile, EveryCorruptedByteDetected) {
  const auto bytes = encode_backbone(sample_backbone());
  for (std::size_t i = 0; i < bytes.size(); i += 7) {
    auto bad = bytes;
    bad[i] ^= 0x5A;
    EXPECT_THROW(decode_backbone(bad), FormatError) << "byte " << i;
  }
}

TEST(BackboneFile, BadMagicAndTruncation) {
  auto bytes = encode_backbone(sample_backbone());
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_backbone(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0);
  }
  for (std::size_t n : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + n);
    EXPECT_THROW(decode_backbone(cut), FormatError) << n;
  }
}

TEST(BackboneFile, LoadNamesPath) {
  const auto path = (std::filesystem::temp_directory_path() / "driftcomp_bad.dcbk").string();
  auto bytes = encode_backbone(sample_backbone());
  bytes[bytes.size() / 2] ^= 1;
  write_file_bytes(path, bytes);
  try {
    load_backbone(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(load_backbone(path), ConfigError);
}

TEST(ArchiveFile, RoundTrip) {
  const auto a = sample_archive();
  const auto bytes = encode_archive(a);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DCCA");
  const auto b = decode_archive(bytes);
  EXPECT_EQ(b.projections.rank, a.projections.rank);
  EXPECT_EQ(b.projections.d_max_in, a.projections.d_max_in);
  EXPECT_EQ(b.projections.d_max_out, a.projections.d_max_out);
  EXPECT_EQ(b.projections.init_seed, a.projections.init_seed);
  EXPECT_EQ(b.projections.a_max, a.projections.a_max);
  EXPECT_EQ(b.projections.b_max, a.projections.b_max);
  ASSERT_EQ(b.sets.size(), a.sets.size());
  for (std::size_t k = 0; k < a.sets.size(); ++k) {
    EXPECT_EQ(b.sets[k].set_id, a.sets[k].set_id);
    EXPECT_EQ(b.sets[k].drift_time, a.sets[k].drift_time);
    ASSERT_EQ(b.sets[k].layers.size(), a.sets[k].layers.size());
    for (std::size_t l = 0; l < a.sets[k].layers.size(); ++l) {
      EXPECT_EQ(b.sets[k].layers[l].layer, a.sets[k].layers[l].layer);
      EXPECT_EQ(b.sets[k].layers[l].d_vec, a.sets[k].layers[l].d_vec);
      EXPECT_EQ(b.sets[k].layers[l].b_vec, a.sets[k].layers[l].b_vec);
    }
  }
  EXPECT_EQ(encode_archive(b), bytes);
}

TEST(ArchiveFile, CorruptionAndTruncation) {
  const auto bytes = encode_archive(sample_archive());
  for (std::size_t i = 0; i < bytes.size(); i += 11) {
    auto bad = bytes;
    bad[i] ^= 0x80;
    EXPECT_THROW(decode_archive(bad), FormatError) << "byte " << i;
  }
  for (std::size_t n : {std::size_t{0}, std::size_t{10}, bytes.size() - 4}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + n);
    EXPECT_THROW(decode_archive(cut), FormatError);
  }
  auto wrong = bytes;
  wrong[3] = 'K';
  EXPECT_THROW(decode_archive(wrong), FormatError);
}

TEST(ArchiveFile, InconsistentProjectionsRejected) {
  auto a = sample_archive();
  a.projections.a_max.pop_back();
  EXPECT_THROW(encode_archive(a), ContractError);
}
