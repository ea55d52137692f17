#include "eval_fixtures.hpp"
#include "test_util.hpp"
#include "wmmt/metrics.hpp"

using namespace wmmt;
using wmmt::testing::expect_error;
using wmmt::testing::random_micro_instance;

namespace {

SegmentProposal prop(double s, double e, double score) { return {s, e, score, -1}; }
SegmentAnnotation gt(double s, double e) { return {s, e, 1}; }

}  // namespace

TEST(AveragePrecision, ExactPredictionsScoreOne) {
  std::vector<EvalVideo> vids = {{"a", {gt(0, 1), gt(3, 5)}, {prop(0, 1, 0.9), prop(3, 5, 0.8)}},
                                 {"b", {gt(2, 4)}, {prop(2, 4, 0.7)}}};
  for (double thr : EvalConfig{}.map_iou_grid) EXPECT_EQ(average_precision(vids, thr), 1.0);
  for (const auto& [thr, ap] : map_grid(vids, {})) EXPECT_EQ(ap, 1.0);
}

TEST(AveragePrecision, IouPointFourFiveHandTrace) {
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1)}, {prop(0, 0.45, 0.5)}}};
  for (double thr : {0.1, 0.2, 0.3, 0.4}) EXPECT_EQ(average_precision(vids, thr), 1.0) << thr;
  for (double thr : {0.5, 0.6, 0.7}) EXPECT_EQ(average_precision(vids, thr), 0.0) << thr;
}

TEST(AveragePrecision, OneHitThenFalsePositive) {
  // PR points: (0.5, 1) then (0.5, 0.5); area = 0.5 * 1.
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1), gt(5, 6)}, {prop(0, 1, 0.9), prop(2, 3, 0.4)}}};
  EXPECT_EQ(average_precision(vids, 0.5), 0.5);
}

TEST(AveragePrecision, EnvelopeHandCase) {
  // Ranking: FP, TP, TP over 2 gts. Precision 0, 1/2, 2/3; envelope 2/3, 2/3, 2/3.
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1), gt(4, 5)}, {prop(8, 9, 0.9), prop(0, 1, 0.8), prop(4, 5, 0.7)}}};
  EXPECT_NEAR(average_precision(vids, 0.5), 2.0 / 3.0, 1e-15);
}

TEST(AveragePrecision, NoGroundTruthConvention) {
  EXPECT_EQ(average_precision({{"a", {}, {}}}, 0.5), 1.0);
  EXPECT_EQ(average_precision({{"a", {}, {prop(0, 1, 0.3)}}}, 0.5), 0.0);
}

TEST(AveragePrecision, DuplicateProposalsCountOnce) {
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 2)}, {prop(0, 2, 0.9), prop(0, 2, 0.8)}}};
  EXPECT_EQ(average_precision(vids, 0.5), 1.0);
  const std::vector<EvalVideo> flipped = {{"a", {gt(0, 2)}, {prop(5, 6, 0.9), prop(0, 2, 0.8)}}};
  EXPECT_EQ(average_precision(flipped, 0.5), 0.5);
}

TEST(MapGrid, NoProposalsIsAllZero) {
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1)}, {}}, {"b", {gt(1, 2)}, {}}};
  const auto table = map_grid(vids, {});
  ASSERT_EQ(table.size(), 7u);
  for (const auto& [thr, ap] : table) EXPECT_EQ(ap, 0.0);
}

TEST(AverageRecall, PerfectTopOne) {
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1)}, {prop(0, 1, 0.9), prop(3, 4, 0.1)}},
                                       {"b", {gt(2, 3)}, {prop(2, 3, 0.5)}}};
  for (std::size_t k : {1u, 2u, 5u, 20u}) EXPECT_EQ(average_recall(vids, k, {}), 1.0);
}

TEST(AverageRecall, NoProposalsIsZero) {
  EXPECT_EQ(average_recall({{"a", {gt(0, 1)}, {}}}, 20, {}), 0.0);
}

TEST(AverageRecall, TwoProposalHandTrace) {
  // Top-ranked has IoU 0.6, second 0.9. With k = 2 the first covers 0.5..0.6,
  // the second takes over up to 0.9; only 0.95 fails -> 9 of 10 grid points.
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 10)}, {prop(0, 6, 0.9), prop(0, 9, 0.8)}}};
  EXPECT_NEAR(average_recall(vids, 2, {}), 0.9, 1e-15);
  // With k = 1 only 0.5, 0.55 and 0.6 are met.
  EXPECT_NEAR(average_recall(vids, 1, {}), 0.3, 1e-15);
}

TEST(AverageRecall, TopKUsesCanonicalOrder) {
  // Equal scores: earlier start ranks first, so k=1 keeps the miss.
  const std::vector<EvalVideo> vids = {{"a", {gt(5, 6)}, {prop(5, 6, 0.5), prop(0, 1, 0.5)}}};
  EXPECT_EQ(recall_at(vids, 1, 0.5), 0.0);
  EXPECT_EQ(recall_at(vids, 2, 0.5), 1.0);
}

TEST(Metrics, PropertiesOnRandomInstances) {
  Rng rng(1);
  const EvalConfig cfg;
  for (int trial = 0; trial < 300; ++trial) {
    const auto vids = random_micro_instance(rng);
    const MetricsReport r = evaluate(vids, cfg);
    double prev_ap = 2.0;
    for (const auto& [thr, ap] : r.map) {
      EXPECT_GE(ap, 0.0);
      EXPECT_LE(ap, 1.0);
      EXPECT_LE(ap, prev_ap + 1e-12) << thr;
      prev_ap = ap;
    }
    // Counts are listed 20, 10, 5, 2: AR must not increase along the list.
    for (std::size_t i = 0; i < r.ar.size(); ++i) {
      EXPECT_GE(r.ar[i].second, 0.0);
      EXPECT_LE(r.ar[i].second, 1.0);
      if (i > 0) {
        EXPECT_LE(r.ar[i].second, r.ar[i - 1].second);
      }
    }
  }
}

TEST(Oracle, AgreesExactlyOnRandomMicroInstances) {
  Rng rng(2);
  const EvalConfig cfg;
  std::size_t divergent = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto vids = random_micro_instance(rng);
    const OracleReport o = oracle_eval(vids, cfg);
    const MetricsReport r = evaluate(vids, cfg);
    EXPECT_EQ(r, o.report) << "trial " << trial;
    for (std::size_t i = 0; i < o.ar_optimal.size(); ++i) EXPECT_GE(o.ar_optimal[i].second, o.report.ar[i].second);
    divergent += o.divergent_cells;
  }
  RecordProperty("divergent_cells", std::to_string(divergent));
}

TEST(Oracle, AdversarialTies) {
  // Same score everywhere, ids out of order, identical segments across videos.
  const std::vector<EvalVideo> vids = {
      {"b", {gt(0, 2), gt(1, 3)}, {prop(1, 3, 0.5), prop(0, 2, 0.5), prop(0, 3, 0.5), prop(0, 2, 0.5)}},
      {"a", {gt(0, 2)}, {prop(0, 2, 0.5), prop(0, 1, 0.5)}},
      {"c", {}, {prop(0, 2, 0.5)}}};
  const EvalConfig cfg;
  EXPECT_EQ(evaluate(vids, cfg), oracle_eval(vids, cfg).report);
}

TEST(Oracle, GreedyCanTrailOptimalMatching) {
  // Greedy gives the first proposal its best gt (the wide one), leaving the
  // second proposal without a partner. Optimal matching recalls both.
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 4), gt(0, 2)}, {prop(0, 3, 0.9), prop(0, 4.5, 0.8)}}};
  EvalConfig cfg;
  cfg.ar_iou_grid = {0.6};
  cfg.ar_proposal_counts = {2};
  const OracleReport o = oracle_eval(vids, cfg);
  EXPECT_EQ(o.report.ar[0].second, 0.5);
  EXPECT_EQ(o.ar_optimal[0].second, 1.0);
  EXPECT_EQ(o.divergent_cells, 1u);
}

TEST(Oracle, EmptyDatasetGivesEmptyTables) {
  const OracleReport o = oracle_eval({}, {});
  const MetricsReport r = evaluate({}, {});
  EXPECT_TRUE(o.report.map.empty());
  EXPECT_TRUE(o.report.ar.empty());
  EXPECT_TRUE(r.map.empty());
  EXPECT_TRUE(r.ar.empty());
  EXPECT_EQ(r, o.report);
}

TEST(Oracle, ScopeCap) {
  EvalVideo v{"a", {gt(0, 1)}, {}};
  for (int i = 0; i < 33; ++i) v.proposals.push_back(prop(0, 1, 0.5));
  expect_error(ErrorKind::oracle_scope, [&] { oracle_eval({v}, {}); });
  v.proposals.pop_back();
  EXPECT_NO_THROW(oracle_eval({v}, {}));
}

TEST(Metrics, JsonLayout) {
  const std::vector<EvalVideo> vids = {{"a", {gt(0, 1)}, {prop(0, 1, 0.9)}}};
  const json j = to_json(evaluate(vids, {}));
  EXPECT_EQ(j["map"]["0.1"], 1.0);
  EXPECT_EQ(j["map"]["0.7"], 1.0);
  EXPECT_EQ(j["map"]["avg"], 1.0);
  EXPECT_EQ(j["ar"]["20"], 1.0);
  EXPECT_EQ(j["ar"]["2"], 1.0);
  EXPECT_TRUE(j["ar"].contains("avg"));
}

TEST(JoinPredictions, MissingAndUnknownIds) {
  Manifest m;
  m.entries.push_back({"a", "a_v", "a_a", 1.0, ForgeryLabel{1}, {{0, 1, 1}}});
  m.entries.push_back({"b", "b_v", "b_a", 1.0, ForgeryLabel{0}, {}});
  const auto vids = join_predictions(m, {{"a", 1, {prop(0, 1, 0.5)}}});
  ASSERT_EQ(vids.size(), 2u);
  EXPECT_EQ(vids[0].proposals.size(), 1u);
  EXPECT_TRUE(vids[1].proposals.empty());
  expect_error(ErrorKind::format, [&] { join_predictions(m, {{"zzz", 0, {}}}); });
}

TEST(EvalConfig, Validation) {
  EXPECT_NO_THROW(EvalConfig{}.validate());
  expect_error(ErrorKind::config, [] { eval_config_from_json(json{{"map_iou_grid", {0.5, 0.3}}}, "eval"); });
  expect_error(ErrorKind::config, [] { eval_config_from_json(json{{"ar_iou_grid", json::array()}}, "eval"); });
  expect_error(ErrorKind::config, [] { eval_config_from_json(json{{"ar_proposal_counts", {0}}}, "eval"); });
  expect_error(ErrorKind::config, [] { eval_config_from_json(json{{"map_iou_grid", {0.0, 0.3}}}, "eval"); });
}
