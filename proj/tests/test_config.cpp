#include <unistd.h>

#include "test_util.hpp"
#include "wmmt/config.hpp"

using namespace wmmt;
using wmmt::testing::expect_error;

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig c;
  const json j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_EQ(to_json(run_config_from_json(json::object())), j);
  EXPECT_FALSE(j["train"].contains("seed"));
  EXPECT_FALSE(j["synth"].contains("seed"));
}

TEST(RunConfig, SeedAndThreadsReachEveryStage) {
  const RunConfig c = run_config_from_json(json{{"seed", 42}, {"threads", 3}});
  EXPECT_EQ(c.synth.seed, 42u);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.train.threads, 3u);
}

TEST(RunConfig, DeviationSectionFeedsTraining) {
  const RunConfig c = run_config_from_json(
      json::parse(R"({"deviation": {"measure": "cosine", "objectives": ["visual", "audio"], "reduction": "sum"}})"));
  EXPECT_EQ(c.deviation().measure, DeviationMeasure::cosine);
  EXPECT_EQ(c.train.deviation.measure, DeviationMeasure::cosine);
  EXPECT_EQ(to_json(c)["deviation"]["objectives"], json::parse(R"(["visual", "audio"])"));
}

TEST(RunConfig, RejectsNestedSeedThreadsAndDeviation) {
  for (const char* text : {R"({"synth": {"seed": 1}})", R"({"train": {"seed": 1}})", R"({"train": {"threads": 2}})",
                           R"({"train": {"deviation": {"measure": "l1"}}})"}) {
    try {
      run_config_from_json(json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::config);
      EXPECT_NE(std::string(e.what()).find("not allowed"), std::string::npos) << e.what();
    }
  }
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  for (const char* text :
       {R"({"sed": 1})", R"({"threads": 0})", R"({"train": {"epoch": 3}})", R"({"paths": {"manifest": 3}})",
        R"({"paths": {"model": "x"}})", R"({"proposals": {"nms_iou": 1.5}})", R"({"proposals": {"thresholds": []}})",
        R"({"eval": {"ar_proposal_counts": []}})", R"({"deviation": {"measure": "hamming"}})", R"({"seed": -1})"}) {
    expect_error(ErrorKind::config, [&] { run_config_from_json(json::parse(text)); });
  }
}

TEST(RunConfig, UnknownKeyMessageNamesThePath) {
  try {
    run_config_from_json(json::parse(R"({"train": {"epoch": 3}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos) << e.what();
  }
}

TEST(ApplyOverride, SetsNestedScalars) {
  json doc = json::object();
  apply_override(doc, "train.epochs=5");
  apply_override(doc, "paths.manifest=corpus/manifest.jsonl");
  apply_override(doc, "deviation.objectives=[\"visual\"]");
  apply_override(doc, "train.learning_rate=0.01");
  EXPECT_EQ(doc["train"]["epochs"], 5);
  EXPECT_EQ(doc["paths"]["manifest"], "corpus/manifest.jsonl");
  EXPECT_EQ(doc["deviation"]["objectives"], json::array({"visual"}));
  const RunConfig c = run_config_from_json(doc);
  EXPECT_EQ(c.train.epochs, 5u);
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.paths.manifest, "corpus/manifest.jsonl");
}

TEST(ApplyOverride, LaterOverrideWins) {
  json doc = json::parse(R"({"seed": 3})");
  apply_override(doc, "seed=4");
  apply_override(doc, "seed=9");
  EXPECT_EQ(run_config_from_json(doc).seed, 9u);
}

TEST(ApplyOverride, MalformedAssignments) {
  json doc = json::parse(R"({"seed": 1, "train": {"epochs": 2}})");
  for (const char* a : {"train.epochs", "=3", "train..epochs=1", ".x=1", "train=3", "seed.x=1"})
    expect_error(ErrorKind::config, [&] { apply_override(doc, a); });
}

TEST(ConfigText, InvalidJsonAndMissingFile) {
  expect_error(ErrorKind::config, [] { parse_config_text("{\"seed\": ", "inline"); });
  const fs::path missing = fs::temp_directory_path() / ("wmmt_no_config_" + std::to_string(::getpid()) + ".json");
  expect_error(ErrorKind::config, [&] { load_config_document(missing); });
  write_file_atomic(missing, "{\"seed\": 5}");
  EXPECT_EQ(load_config_document(missing)["seed"], 5);
  fs::remove(missing);
}
