#include <gtest/gtest.h>

#include <filesystem>

#include "buddynet/errors.hpp"
#include "buddynet/evaluation.hpp"
#include "buddynet/postproc.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace buddynet;

namespace {

RankedList list_of(const std::vector<std::string>& ids) {
  RankedList l;
  double score = 1.0;
  for (const auto& id : ids) {
    l.entries.push_back({id, score});
    score -= 0.01;
  }
  return l;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back("d" + std::to_string(i));
  return v;
}

}  // namespace

TEST(AveragePrecision, Examples) {
  GroundTruthEntry gt{{"a", "b"}, {}};
  EXPECT_EQ(average_precision(list_of({"a", "b", "c"}), gt), 1.0);
  GroundTruthEntry one{{"y"}, {}};
  EXPECT_EQ(average_precision(list_of({"x", "y"}), one), 0.5);
  GroundTruthEntry missing{{"a", "zz"}, {}};
  EXPECT_EQ(average_precision(list_of({"a", "b"}), missing), 0.5);
  EXPECT_THROW(average_precision(list_of({"a"}), GroundTruthEntry{}), ValidationError);
}

TEST(AveragePrecision, MatchesDirectDefinitionOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> ids = names(30);
    rng.shuffle(ids);
    GroundTruthEntry gt;
    for (const auto& id : ids) {
      const double u = rng.uniform();
      if (u < 0.3) gt.positives.insert(id);
      else if (u < 0.45) gt.junk.insert(id);
    }
    gt.positives.insert(ids[rng.below(30)]);
    for (const auto& p : gt.positives) gt.junk.erase(p);
    EXPECT_NEAR(average_precision(list_of(ids), gt), oracle::average_precision(ids, gt.positives, gt.junk), 1e-12);
  }
}

TEST(AveragePrecision, InvariantToJunkPlacement) {
  Rng rng(2);
  std::vector<std::string> ids = names(12);
  GroundTruthEntry gt{{"d1", "d4", "d7"}, {"j1", "j2", "j3"}};
  const double base = average_precision(list_of(ids), gt);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::string> with = ids;
    for (const char* j : {"j1", "j2", "j3"}) with.insert(with.begin() + static_cast<std::ptrdiff_t>(rng.below(with.size() + 1)), j);
    EXPECT_DOUBLE_EQ(average_precision(list_of(with), gt), base);
  }
}

TEST(AveragePrecision, PromotingAPositiveNeverHurts) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> ids = names(15);
    rng.shuffle(ids);
    GroundTruthEntry gt;
    for (int k = 0; k < 4; ++k) gt.positives.insert(ids[rng.below(15)]);
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      if (!gt.positives.count(ids[i]) && gt.positives.count(ids[i + 1])) {
        std::vector<std::string> swapped = ids;
        std::swap(swapped[i], swapped[i + 1]);
        EXPECT_GE(average_precision(list_of(swapped), gt), average_precision(list_of(ids), gt));
      }
    }
  }
}

TEST(Evaluate, WholeDatabasePositivesGiveOne) {
  RetrievalIndex index(2);
  Rng rng(4);
  for (int i = 0; i < 6; ++i) index.add("d" + std::to_string(i), test_util::random_vector(2, rng));
  GroundTruth gt;
  gt.queries["q"].positives = {"d0", "d1", "d2", "d3", "d4", "d5"};
  std::vector<EmbeddingRecord> queries{EmbeddingRecord::make("q", {0.3, -0.7})};
  EXPECT_EQ(evaluate(queries, gt, compose(PostProcessing::kNone, index, {})).map, 1.0);
}

TEST(Evaluate, AdversarialBottomPositives) {
  RetrievalIndex index(2);
  for (int i = 0; i < 5; ++i) index.add("d" + std::to_string(i), {1.0, 0.2 * i});
  GroundTruth gt;
  gt.queries["q"].positives = {"d3", "d4"};
  std::vector<EmbeddingRecord> queries{EmbeddingRecord::make("q", {1.0, 0.0})};
  // positives land at ranks 4 and 5: (1/4 + 2/5) / 2
  EXPECT_NEAR(evaluate(queries, gt, compose(PostProcessing::kNone, index, {})).map, 0.325, 1e-15);
}

TEST(Evaluate, QueryRemovedFromItsOwnRanking) {
  RetrievalIndex index(2);
  index.add("q", {1.0, 0.0});
  index.add("far", {0.0, 1.0});
  index.add("near", {1.0, 0.5});
  GroundTruth gt;
  gt.queries["q"].positives = {"near"};
  std::vector<EmbeddingRecord> queries{EmbeddingRecord::make("q", {1.0, 0.0})};
  EXPECT_EQ(evaluate(queries, gt, compose(PostProcessing::kNone, index, {})).map, 1.0);
}

TEST(Evaluate, MatchesRecomputationAndEquivalentPipelines) {
  Rng rng(5);
  RetrievalIndex index(8);
  std::vector<std::vector<double>> centres;
  for (int c = 0; c < 4; ++c) centres.push_back(test_util::random_vector(8, rng));
  GroundTruth gt;
  std::vector<EmbeddingRecord> queries;
  for (int c = 0; c < 4; ++c) {
    for (int k = 0; k < 10; ++k) {
      std::vector<double> v = centres[c];
      for (double& x : v) x += 0.6 * rng.normal();
      index.add("c" + std::to_string(c) + "_" + std::to_string(k), v);
    }
  }
  for (int c = 0; c < 4; ++c) {
    for (int k = 0; k < 3; ++k) {
      std::vector<double> v = centres[c];
      for (double& x : v) x += 0.6 * rng.normal();
      const std::string id = "q" + std::to_string(c) + "_" + std::to_string(k);
      queries.push_back(EmbeddingRecord::make(id, v));
      for (int m = 0; m < 10; ++m) gt.queries[id].positives.insert("c" + std::to_string(c) + "_" + std::to_string(m));
    }
  }
  DiffusionConfig cfg;
  EvalReport report = evaluate(queries, gt, compose(PostProcessing::kNone, index, cfg));
  std::vector<std::pair<std::string, std::vector<double>>> db;
  for (const auto& r : index.records()) db.emplace_back(r.id, r.vector);
  double sum = 0;
  for (const auto& q : queries) sum += oracle::average_precision(oracle::knn(db, q.vector, db.size()), gt.at(q.id).positives, {});
  EXPECT_NEAR(report.map, sum / 12.0, 1e-12);
  ASSERT_EQ(report.per_query.size(), 12u);
  EXPECT_TRUE(std::is_sorted(report.per_query.begin(), report.per_query.end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
  DiffusionConfig zero = cfg;
  zero.aqe_top_k = 0;
  EvalReport q0 = evaluate(queries, gt, compose(PostProcessing::kQueryExpansion, index, zero));
  EXPECT_EQ(q0.map, report.map);
  EXPECT_EQ(q0.to_tsv(), report.to_tsv());
  auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j["queries"].size(), 12u);
  EXPECT_DOUBLE_EQ(j["mAP"].get<double>(), report.map);
  GroundTruth partial = gt;
  partial.queries.erase("q0_0");
  EXPECT_THROW(evaluate(queries, partial, compose(PostProcessing::kNone, index, cfg)), ValidationError);
}

TEST(GroundTruthFile, RoundTripAndErrors) {
  GroundTruth gt;
  gt.queries["q1"] = {{"a", "b"}, {"c"}};
  gt.queries["q2"] = {{"d"}, {}};
  EXPECT_EQ(parse_ground_truth(format_ground_truth(gt)), gt);
  const auto path = std::filesystem::temp_directory_path() / "buddynet_eval_gt.txt";
  write_ground_truth(path, gt);
  EXPECT_EQ(read_ground_truth(path), gt);
  EXPECT_THROW(parse_ground_truth("q1\tP:a\n"), FormatError);
  EXPECT_THROW(parse_ground_truth("q1\tX:a\tJ:\n"), FormatError);
  EXPECT_THROW(parse_ground_truth("q1\tP:a\tJ:\nq1\tP:b\tJ:\n"), FormatError);
  GroundTruth bad;
  bad.queries["q"] = {{"a"}, {"a"}};
  EXPECT_THROW(bad.validate(), ValidationError);
  bad.queries["q"] = {{"q"}, {}};
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Difficulty, VariantsPartitionEasyAndHard) {
  std::set<std::string> easy{"e1", "e2"}, hard{"h1"}, junk{"j"};
  auto e = difficulty_variant(easy, hard, junk, Difficulty::kEasy);
  auto m = difficulty_variant(easy, hard, junk, Difficulty::kMedium);
  auto h = difficulty_variant(easy, hard, junk, Difficulty::kHard);
  EXPECT_EQ(e.positives, easy);
  EXPECT_TRUE(e.junk.count("h1") && e.junk.count("j"));
  EXPECT_EQ(m.positives, (std::set<std::string>{"e1", "e2", "h1"}));
  EXPECT_EQ(h.positives, hard);
  EXPECT_TRUE(h.junk.count("e1") && h.junk.count("j"));
}
