#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>

#include "test_util.hpp"
#include "wmmt/wmmt.hpp"

using namespace wmmt;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("wmmt_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(WMMT_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = detail::read_file(out);
    r.err = detail::read_file(err);
    return r;
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  static constexpr const char* kTinySynth =
      " --seed 3 --set synth.num_videos=12 --set synth.frames=16 --set synth.dim_v=4 --set synth.dim_a=4";
  static constexpr const char* kTinyTrain =
      " --seed 3 --set train.epochs=2 --set train.d_out=4 --set train.batch_size=4";

  // synth -> train -> infer into a subdirectory; returns the predictions path.
  std::string pipeline(const std::string& tag) const {
    const std::string corpus = p(tag + "_corpus");
    EXPECT_EQ(run("synth" + std::string(kTinySynth) + " --out " + corpus).code, 0);
    const std::string manifest = corpus + "/manifest.jsonl";
    const std::string ck = p(tag + ".ckpt");
    const RunResult t = run("train" + std::string(kTinyTrain) + " --manifest " + manifest + " --out " + ck);
    EXPECT_EQ(t.code, 0) << t.err;
    const std::string preds = p(tag + "_preds.jsonl");
    const RunResult i = run("infer --checkpoint " + ck + " --manifest " + manifest + " --out " + preds);
    EXPECT_EQ(i.code, 0) << i.err;
    return preds;
  }

  fs::path dir_;
};

void expect_error_line(const RunResult& r, const std::string& kind) {
  const json j = json::parse(r.err);
  EXPECT_EQ(j["error"], kind) << r.err;
  EXPECT_TRUE(j["message"].is_string());
}

}  // namespace

TEST_F(Cli, FullPipelineProducesMetrics) {
  const std::string preds = pipeline("a");
  const std::string manifest = p("a_corpus") + "/manifest.jsonl";
  EXPECT_EQ(load_predictions(preds).size(), 12u);

  const RunResult e = run("eval --predictions " + preds + " --manifest " + manifest);
  ASSERT_EQ(e.code, 0) << e.err;
  const json m = json::parse(e.out);
  for (const char* k : {"0.1", "0.5", "0.7", "avg"}) EXPECT_TRUE(m["map"].contains(k)) << k;
  for (const char* k : {"20", "10", "5", "2", "avg"}) EXPECT_TRUE(m["ar"].contains(k)) << k;
  EXPECT_GE(m["accuracy"].get<double>(), 0.0);
  EXPECT_LE(m["accuracy"].get<double>(), 1.0);

  // The log has one line per epoch.
  const std::string log = detail::read_file(p("a.ckpt") + ".log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
}

TEST_F(Cli, EvalOracleFlagMatchesPlainEval) {
  const std::string preds = pipeline("o");
  const std::string manifest = p("o_corpus") + "/manifest.jsonl";
  // Inference caps proposals at 100; the oracle only handles 32, so trim.
  auto records = load_predictions(preds);
  for (auto& r : records)
    if (r.proposals.size() > 5) r.proposals.resize(5);
  save_predictions(records, preds);
  const RunResult plain = run("eval --predictions " + preds + " --manifest " + manifest);
  const RunResult orc = run("eval --oracle --predictions " + preds + " --manifest " + manifest);
  ASSERT_EQ(plain.code, 0) << plain.err;
  ASSERT_EQ(orc.code, 0) << orc.err;
  const json a = json::parse(plain.out), b = json::parse(orc.out);
  EXPECT_EQ(a["map"], b["map"]);
  EXPECT_EQ(a["ar"], b["ar"]);
  EXPECT_TRUE(b.contains("ar_optimal_matching"));
}

TEST_F(Cli, SameSeedSameBytes) {
  const std::string a = pipeline("x"), b = pipeline("y");
  EXPECT_EQ(detail::read_file(p("x.ckpt")), detail::read_file(p("y.ckpt")));
  EXPECT_EQ(detail::read_file(a), detail::read_file(b));
  EXPECT_EQ(detail::read_file(p("x_corpus") + "/manifest.jsonl"), detail::read_file(p("y_corpus") + "/manifest.jsonl"));
}

TEST_F(Cli, StatsAndGradcheck) {
  ASSERT_EQ(run("synth" + std::string(kTinySynth) + " --out " + p("c")).code, 0);
  const RunResult s = run("stats --measure l1 --manifest " + p("c") + "/manifest.jsonl");
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(json::parse(s.out)["measure"], "l1");

  const RunResult g = run("gradcheck --seed 5");
  EXPECT_EQ(g.code, 0) << g.err;
  const json gj = json::parse(g.out);
  EXPECT_EQ(gj["seed"], 5);
  EXPECT_EQ(gj["pass"], true);
}

TEST_F(Cli, ExportEmbeddingsWritesThreeStreamsPerVideo) {
  pipeline("e");
  const RunResult r =
      run("export-embeddings --checkpoint " + p("e.ckpt") + " --manifest " + p("e_corpus") + "/manifest.jsonl --out " + p("emb"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t n = 0;
  for (const auto& f : fs::directory_iterator(p("emb"))) {
    n += f.path().extension() == ".ftr";
    // Multimodal rows concatenate the two enhanced streams.
    const bool mm = f.path().filename().string().find("_multimodal") != std::string::npos;
    EXPECT_EQ(load_feature_file(f.path()).dim(), mm ? 8u : 4u) << f.path();
  }
  EXPECT_EQ(n, 36u);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  RunResult r = run("synth --bogus-flag");
  EXPECT_EQ(r.code, 2);
  expect_error_line(r, "config");

  r = run("synth --set synth.frames=4 --out " + p("bad"));
  EXPECT_EQ(r.code, 2);
  expect_error_line(r, "config");

  write_file_atomic(p("nested.json"), R"({"train": {"seed": 4}})");
  r = run("train --config " + p("nested.json") + " --manifest x --out y");
  EXPECT_EQ(r.code, 2);
  expect_error_line(r, "config");

  write_file_atomic(p("broken.json"), "{\"seed\": ");
  r = run("synth --config " + p("broken.json") + " --out " + p("z"));
  EXPECT_EQ(r.code, 2);

  r = run("train --manifest " + p("m.jsonl"));
  EXPECT_EQ(r.code, 2) << "missing output path";
  r = run("");
  EXPECT_EQ(r.code, 2) << "no subcommand";
}

TEST_F(Cli, DataErrorsExitThree) {
  RunResult r = run("train --manifest " + p("missing.jsonl") + " --out " + p("ck"));
  EXPECT_EQ(r.code, 3);
  expect_error_line(r, "io");

  r = run("infer --checkpoint " + p("missing.ckpt") + " --manifest " + p("m.jsonl") + " --out " + p("pr"));
  EXPECT_EQ(r.code, 3);

  write_file_atomic(p("garbage.jsonl"), "not json\n");
  r = run("stats --manifest " + p("garbage.jsonl"));
  EXPECT_EQ(r.code, 3);
  expect_error_line(r, "format");
}
