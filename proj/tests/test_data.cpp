#include <unistd.h>

#include <cstring>
#include <fstream>

#include "test_util.hpp"
#include "wmmt/data.hpp"

using namespace wmmt;
using wmmt::testing::expect_error;
using wmmt::testing::random_matrix;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wmmt_data_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Matrix f32_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m = random_matrix(rng, r, c, -3.0, 3.0);
  for (auto& x : m.data()) x = static_cast<double>(static_cast<float>(x));
  return m;
}

std::string header(std::uint32_t t, std::uint32_t d, float fps) {
  std::string s = "FTR1";
  detail::put_u32(s, t);
  detail::put_u32(s, d);
  detail::put_f32(s, fps);
  return s;
}

}  // namespace

TEST(FeatureFile, FourByTwoRoundTrip) {
  Rng rng(1);
  const FeatureSequence seq(f32_matrix(rng, 4, 2), 25.0);
  const std::string bytes = encode_feature_file(seq);
  EXPECT_EQ(bytes.size(), 16u + 8u * 4u);
  const FeatureSequence back = decode_feature_file(bytes);
  EXPECT_EQ(back.frames(), 4u);
  EXPECT_EQ(back.dim(), 2u);
  EXPECT_EQ(back, seq);
}

TEST(FeatureFile, HeaderLayoutIsLittleEndian) {
  const FeatureSequence seq(Matrix{{1.0f}}, 2.0);
  const std::string b = encode_feature_file(seq);
  ASSERT_EQ(b.size(), 20u);
  EXPECT_EQ(b.substr(0, 4), "FTR1");
  const unsigned char expect[] = {1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x80, 0x3f};
  EXPECT_EQ(std::memcmp(b.data() + 4, expect, sizeof expect), 0);
}

TEST(FeatureFile, EmptyFileIsFormatError) {
  expect_error(ErrorKind::format, [] { decode_feature_file(""); });
}

TEST(FeatureFile, ZeroFramesIsFormatError) {
  try {
    decode_feature_file(header(0, 2, 25.0f));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("'T'"), std::string::npos) << e.what();
  }
}

TEST(FeatureFile, BadHeadersNameTheField) {
  const std::pair<std::string, std::string> cases[] = {
      {"FTR2" + header(1, 1, 1.0f).substr(4) + std::string(4, '\0'), "magic"},
      {header(1, 0, 1.0f), "'d'"},
      {header(1, 1, 0.0f) + std::string(4, '\0'), "'fps'"},
      {header(1, 1, -5.0f) + std::string(4, '\0'), "'fps'"},
      {header(2, 2, 1.0f) + std::string(12, '\0'), "truncated"},
      {header(1, 1, 1.0f) + std::string(8, '\0'), "trailing"},
      {header(1, 1, 1.0f).substr(0, 10), "'d'"},
  };
  for (const auto& [bytes, needle] : cases) {
    try {
      decode_feature_file(bytes);
      ADD_FAILURE() << needle;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  }
}

TEST(FeatureFile, SaveLoadRandomSevenByThree) {
  const auto dir = scratch_dir("rt");
  Rng rng(7);
  const FeatureSequence seq(f32_matrix(rng, 7, 3), 12.5);
  save_feature_file(seq, dir / "x.ftr");
  EXPECT_EQ(load_feature_file(dir / "x.ftr"), seq);
  EXPECT_FALSE(fs::exists(dir / "x.ftr.tmp"));
}

TEST(FeatureFile, SaveLoadOneByOne) {
  const auto dir = scratch_dir("one");
  const FeatureSequence seq(Matrix{{-0.5}}, 1.0);
  save_feature_file(seq, dir / "y.ftr");
  EXPECT_EQ(load_feature_file(dir / "y.ftr"), seq);
}

TEST(FeatureFile, NarrowsToFloatOnSave) {
  const FeatureSequence seq(Matrix{{0.1}}, 3.0);
  const FeatureSequence back = decode_feature_file(encode_feature_file(seq));
  EXPECT_EQ(back.values()(0, 0), static_cast<double>(0.1f));
}

TEST(FeatureFile, UnwritablePathIsIoError) {
  const FeatureSequence seq(Matrix{{1.0}}, 1.0);
  expect_error(ErrorKind::io, [&] { save_feature_file(seq, "/nonexistent_dir_wmmt/sub/x.ftr"); });
  expect_error(ErrorKind::io, [] { load_feature_file("/nonexistent_dir_wmmt/x.ftr"); });
}

TEST(FeatureSequence, InvariantsAndDuration) {
  const FeatureSequence s(Matrix(50, 2), 25.0);
  EXPECT_DOUBLE_EQ(s.duration_seconds(), 2.0);
  expect_error(ErrorKind::format, [] { FeatureSequence(Matrix(0, 2), 25.0); });
  expect_error(ErrorKind::format, [] { FeatureSequence(Matrix(2, 0), 25.0); });
  expect_error(ErrorKind::format, [] { FeatureSequence(Matrix(2, 2), 0.0); });
  expect_error(ErrorKind::numeric, [] { FeatureSequence(Matrix(1, 1, std::nan("")), 1.0); });
}

TEST(AlignAudio, EqualFramesIsIdentity) {
  Rng rng(3);
  const FeatureSequence a(random_matrix(rng, 5, 3), 10.0);
  EXPECT_EQ(align_audio(a, 5), a);
}

TEST(AlignAudio, FourToTwoHandBuckets) {
  const FeatureSequence a(Matrix{{1, 10}, {3, 20}, {5, 30}, {7, 40}}, 4.0);
  const FeatureSequence out = align_audio(a, 2);
  EXPECT_EQ(out.values(), (Matrix{{2, 15}, {6, 35}}));
  EXPECT_DOUBLE_EQ(out.fps(), 2.0);
}

TEST(AlignAudio, FiveToTwoRemainderGoesFirst) {
  Rng rng(4);
  const FeatureSequence a(random_matrix(rng, 5, 2), 5.0);
  const FeatureSequence out = align_audio(a, 2);
  // First bucket takes rows 0..2, second rows 3..4.
  for (std::size_t j = 0; j < 2; ++j) {
    const auto& v = a.values();
    EXPECT_NEAR(out.values()(0, j), (v(0, j) + v(1, j) + v(2, j)) / 3.0, 1e-15);
    EXPECT_NEAR(out.values()(1, j), (v(3, j) + v(4, j)) / 2.0, 1e-15);
  }
  EXPECT_DOUBLE_EQ(out.fps(), 2.0);
}

TEST(AlignAudio, UpsampleIsRejected) {
  const FeatureSequence a(Matrix(3, 1), 1.0);
  expect_error(ErrorKind::alignment, [&] { align_audio(a, 4); });
}

TEST(AlignAudio, PreservesDurationForRandomShapes) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t target = 1 + rng.below(40);
    const std::size_t n = target + rng.below(100);
    const double fps = rng.uniform(1.0, 60.0);
    const FeatureSequence a(Matrix(n, 1, 1.0), fps);
    const FeatureSequence out = align_audio(a, target);
    EXPECT_EQ(out.frames(), target);
    EXPECT_NEAR(out.duration_seconds(), a.duration_seconds(), 1e-9);
  }
}

TEST(Labels, BinaryDerivation) {
  EXPECT_EQ(derive_binary_labels(ForgeryLabel{0}), (BinaryLabels{0, 0}));
  EXPECT_EQ(derive_binary_labels(ForgeryLabel{1}), (BinaryLabels{1, 1}));
  EXPECT_EQ(derive_binary_labels(ForgeryLabel{2}), (BinaryLabels{1, 0}));
  EXPECT_EQ(derive_binary_labels(ForgeryLabel{3}), (BinaryLabels{0, 1}));
}

TEST(Labels, FlagsAgreeWithBinaryLabels) {
  for (int c = 0; c < 4; ++c) {
    const ForgeryLabel l{c};
    const BinaryLabels b = derive_binary_labels(l);
    EXPECT_EQ(b.visual == 1, l.visual_forged());
    EXPECT_EQ(b.audio == 1, l.audio_forged());
    EXPECT_EQ(l.any_forged(), b.visual || b.audio);
  }
  expect_error(ErrorKind::domain, [] { ForgeryLabel::checked(4); });
  expect_error(ErrorKind::domain, [] { ForgeryLabel::checked(-1); });
}

namespace {

const char* kManifestLine =
    R"({"id":"a","visual_path":"a_v.ftr","audio_path":"a_a.ftr","fps":2.0,"label":2,"segments":[{"start_s":0.5,"end_s":1.0,"kind":2}]})";

}  // namespace

TEST(Manifest, ParsesAndRoundTrips) {
  const Manifest m = parse_manifest(std::string(kManifestLine) + "\n\n", "/base");
  ASSERT_EQ(m.size(), 1u);
  const auto& e = m.entries[0];
  EXPECT_EQ(e.id, "a");
  EXPECT_EQ(e.label, ForgeryLabel{2});
  ASSERT_EQ(e.segments.size(), 1u);
  EXPECT_EQ(e.segments[0], (SegmentAnnotation{0.5, 1.0, 2}));
  EXPECT_EQ(dump_manifest(m), std::string(kManifestLine) + "\n");
}

TEST(Manifest, RejectsBadEntries) {
  const std::string base = R"({"id":"a","visual_path":"v","audio_path":"a","fps":2.0,)";
  const std::string cases[] = {
      base + R"("label":0,"segments":[{"start_s":0,"end_s":1,"kind":1}]})",
      base + R"("label":1,"segments":[]})",
      base + R"("label":4,"segments":[]})",
      base + R"("label":1,"segments":[{"start_s":1,"end_s":1,"kind":1}]})",
      base + R"("label":1,"segments":[{"start_s":0,"end_s":1,"kind":0}]})",
      R"({"id":"a","audio_path":"a","fps":2.0,"label":0,"segments":[]})",
      "not json",
      std::string(kManifestLine) + "\n" + kManifestLine,
  };
  for (const auto& text : cases) expect_error(ErrorKind::format, [&] { parse_manifest(text, "."); });
}

TEST(Manifest, LoadChecksFilesAndAligns) {
  const auto dir = scratch_dir("manifest");
  Rng rng(6);
  save_feature_file(FeatureSequence(f32_matrix(rng, 4, 2), 2.0), dir / "a_v.ftr");
  save_feature_file(FeatureSequence(f32_matrix(rng, 8, 3), 4.0), dir / "a_a.ftr");
  {
    std::ofstream(dir / "manifest.jsonl") << kManifestLine << "\n";
  }
  const Manifest m = load_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(m.base_dir, dir);
  const auto samples = load_samples(m);
  ASSERT_EQ(samples.size(), 1u);
  EXPECT_EQ(samples[0].visual.frames(), 4u);
  EXPECT_EQ(samples[0].audio.frames(), 4u);
  EXPECT_EQ(samples[0].audio.dim(), 3u);
  EXPECT_NEAR(samples[0].audio.duration_seconds(), samples[0].visual.duration_seconds(), 1e-9);

  fs::remove(dir / "a_a.ftr");
  expect_error(ErrorKind::io, [&] { load_manifest(dir / "manifest.jsonl"); });
}

TEST(Manifest, SegmentPastVideoEndIsRejected) {
  const auto dir = scratch_dir("pastend");
  save_feature_file(FeatureSequence(Matrix(2, 1), 2.0), dir / "a_v.ftr");
  save_feature_file(FeatureSequence(Matrix(2, 1), 2.0), dir / "a_a.ftr");
  ManifestEntry e{"a", "a_v.ftr", "a_a.ftr", 2.0, ForgeryLabel{1}, {{0.5, 1.5, 1}}};
  expect_error(ErrorKind::format, [&] { load_sample(e, dir); });
  e.fps = 3.0;
  e.segments = {{0.0, 0.5, 1}};
  expect_error(ErrorKind::format, [&] { load_sample(e, dir); });
}

TEST(Predictions, RoundTripAndValidation) {
  std::vector<PredictionRecord> preds = {{"v1", 0, {}}, {"v2", 2, {{0.0, 1.5, 0.75}, {2.0, 3.0, 0.5}}}};
  const std::string text = dump_predictions(preds);
  EXPECT_EQ(text,
            "{\"id\":\"v1\",\"pred_label\":0,\"proposals\":[]}\n"
            "{\"id\":\"v2\",\"pred_label\":2,\"proposals\":[{\"start_s\":0.0,\"end_s\":1.5,\"score\":0.75},"
            "{\"start_s\":2.0,\"end_s\":3.0,\"score\":0.5}]}\n");
  const auto back = parse_predictions(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].proposals, preds[1].proposals);
  expect_error(ErrorKind::format, [] { parse_predictions(R"({"id":"x","pred_label":1,"proposals":[{"start_s":1,"end_s":0.5,"score":0.1}]})"); });
  expect_error(ErrorKind::format, [] { parse_predictions(R"({"id":"x","pred_label":1,"proposals":[{"start_s":0,"end_s":0.5,"score":1.5}]})"); });
  expect_error(ErrorKind::format, [] { parse_predictions(R"({"id":"x","proposals":[]})"); });
}
