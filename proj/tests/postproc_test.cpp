#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "buddynet/errors.hpp"
#include "buddynet/postproc.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace buddynet;

namespace {

std::string node_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "n%03zu", i);
  return buf;
}

RetrievalIndex random_index(std::size_t n, std::size_t dim, Rng& rng) {
  RetrievalIndex index(dim);
  for (std::size_t i = 0; i < n; ++i) index.add(node_id(i), test_util::random_vector(dim, rng));
  return index;
}

// Tight clusters around random centres.
RetrievalIndex clustered_index(std::size_t clusters, std::size_t per, std::size_t dim, double spread, Rng& rng,
                               std::vector<std::vector<double>>* centres = nullptr) {
  RetrievalIndex index(dim);
  std::size_t id = 0;
  for (std::size_t c = 0; c < clusters; ++c) {
    std::vector<double> centre = test_util::random_vector(dim, rng);
    if (centres) centres->push_back(centre);
    for (std::size_t k = 0; k < per; ++k) {
      std::vector<double> v = centre;
      for (double& x : v) x += spread * rng.normal();
      index.add(node_id(id++), v);
    }
  }
  return index;
}

std::vector<std::string> ids(const RankedList& list) {
  std::vector<std::string> out;
  for (const auto& e : list.entries) out.push_back(e.id);
  return out;
}

// exp(-t L) e_source by Taylor series.
Eigen::VectorXd heat_series(const Eigen::MatrixXd& l, Eigen::Index source, double t) {
  Eigen::VectorXd term = Eigen::VectorXd::Unit(l.rows(), source);
  Eigen::VectorXd total = term;
  for (int k = 1; k < 80; ++k) {
    term = (-t / k) * (l * term);
    total += term;
  }
  return total;
}

}  // namespace

TEST(Diffusion, TwoNodeHandComputed) {
  Eigen::MatrixXd a(2, 2);
  a << 0, 1, 1, 0;
  DiffusionTable d = diffusion_from_transition(a, 0.5);
  EXPECT_NEAR(d.table(0, 0), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(d.table(1, 0), 2.0 / 3.0, 1e-15);
  Eigen::MatrixXd s(2, 2);
  s << 1, 0.4, 0.4, 1;
  DiffusionConfig cfg;
  cfg.alpha = 0.5;
  cfg.graph_k = 1;
  DiffusionTable p = offline_diffusion_prepare(s, cfg);
  EXPECT_NEAR(p.table(0, 0), 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(p.table(1, 0), 2.0 / 3.0, 1e-15);
}

TEST(Diffusion, ResidualAndNeumannSeries) {
  Rng rng(1);
  RetrievalIndex index = clustered_index(8, 25, 12, 0.3, rng);
  Eigen::MatrixXd sims = pairwise_similarities(index);
  DiffusionConfig cfg;
  DiffusionTable direct = offline_diffusion_prepare(sims, cfg);
  EXPECT_LT(direct.residual(), 1e-8);
  for (Eigen::Index i : {0, 37, 111, 199}) {
    Eigen::VectorXd series = oracle::neumann_column(direct.transition, cfg.alpha, i, 400);
    EXPECT_LT((direct.table.col(i) - series).norm(), 1e-8);
  }
  DiffusionTable neumann = offline_diffusion_prepare(sims, cfg, DiffusionSolver::kNeumann, 400);
  EXPECT_LT((direct.table - neumann.table).norm(), 1e-8);
}

TEST(Diffusion, SmallAlphaApproachesIdentity) {
  Rng rng(2);
  RetrievalIndex index = random_index(20, 5, rng);
  DiffusionConfig cfg;
  cfg.alpha = 1e-12;
  DiffusionTable d = offline_diffusion_prepare(pairwise_similarities(index), cfg);
  EXPECT_LT((d.table - Eigen::MatrixXd::Identity(20, 20)).norm(), 1e-10);
}

TEST(Diffusion, IsolatedNodeKeepsUnitColumn) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(3, 3);
  s(0, 1) = s(1, 0) = 0.8;
  DiffusionConfig cfg;
  cfg.graph_k = 1;
  DiffusionTable d = offline_diffusion_prepare(s, cfg);
  EXPECT_EQ(d.table.col(2), Eigen::Vector3d(0, 0, 1));
}

TEST(Diffusion, ValidatesInputs) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(2, 2);
  s(0, 1) = 0.3;
  EXPECT_THROW(offline_diffusion_prepare(s, DiffusionConfig{}), ValidationError);
  s(1, 0) = 0.3;
  s(1, 1) = 0.9;
  EXPECT_THROW(offline_diffusion_prepare(s, DiffusionConfig{}), ValidationError);
  DiffusionConfig bad;
  bad.alpha = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(diffusion_from_transition(Eigen::MatrixXd::Zero(2, 2), 1.0), ValidationError);
}

TEST(DiffusionQuery, IdentityTableAndFullTruncation) {
  Rng rng(3);
  RetrievalIndex index = random_index(30, 6, rng);
  std::vector<double> q = test_util::random_vector(6, rng);
  DiffusionTable identity;
  identity.table = Eigen::MatrixXd::Identity(30, 30);
  identity.transition = Eigen::MatrixXd::Zero(30, 30);
  identity.alpha = 0.5;
  DiffusionConfig cfg;
  cfg.truncation_n = 30;
  RankedList got = offline_diffusion_query(index.similarities(q), identity, index, cfg);
  // positive similarities keep knn order; the clamped ones tie at zero and fall back to id order
  std::vector<RankedEntry> expected;
  std::vector<double> sims = index.similarities(q);
  for (std::size_t i = 0; i < 30; ++i) expected.push_back({index.record(i).id, std::max(sims[i], 0.0)});
  sort_ranked(expected);
  EXPECT_EQ(ids(got), [&] {
    std::vector<std::string> v;
    for (const auto& e : expected) v.push_back(e.id);
    return v;
  }());
  DiffusionTable table = offline_diffusion_prepare(pairwise_similarities(index), cfg);
  DiffusionConfig wide = cfg;
  wide.truncation_n = 5000;
  EXPECT_EQ(offline_diffusion_query(sims, table, index, cfg).entries,
            offline_diffusion_query(sims, table, index, wide).entries);
  std::vector<double> short_sims(29, 0.1);
  EXPECT_THROW(offline_diffusion_query(short_sims, table, index, cfg), ShapeError);
}

TEST(DiffusionQuery, PromotesWeakClusterMemberOverIsolatedDistractor) {
  // nodes 0-11 and 12-23 form two clusters, node 24 stands alone
  const Eigen::Index n = 25;
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(n, n, 0.05);
  for (Eigen::Index i = 0; i < 24; ++i)
    for (Eigen::Index j = 0; j < 24; ++j)
      if ((i < 12) == (j < 12)) s(i, j) = 0.9;
  for (Eigen::Index i = 0; i < n; ++i) s(i, i) = 1.0;
  RetrievalIndex index(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    v[static_cast<std::size_t>(i)] = 1.0;
    index.add(node_id(static_cast<std::size_t>(i)), v);
  }
  std::vector<double> q(static_cast<std::size_t>(n), 0.1);
  for (int i = 0; i < 11; ++i) q[i] = 0.8;
  q[11] = 0.3;  // weak direct match inside the query's cluster
  q[24] = 0.5;  // stronger direct match with no neighbours
  DiffusionConfig cfg;
  cfg.graph_k = 11;
  DiffusionTable d = offline_diffusion_prepare(s, cfg);
  RankedList ranked = offline_diffusion_query(q, d, index, cfg);
  auto rank_of = [&](const std::string& id) {
    auto v = ids(ranked);
    return std::find(v.begin(), v.end(), id) - v.begin();
  };
  EXPECT_LT(rank_of("n011"), rank_of("n024"));

  // closed-form check of the scores
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < 24; ++i)
    for (Eigen::Index j = 0; j < 24; ++j)
      if (i != j && (i < 12) == (j < 12)) a(i, j) = 0.9;
  Eigen::VectorXd deg = a.rowwise().sum();
  Eigen::MatrixXd st = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (a(i, j) > 0) st(i, j) = a(i, j) / std::sqrt(deg(i) * deg(j));
  Eigen::MatrixXd inv = (Eigen::MatrixXd::Identity(n, n) - cfg.alpha * st).fullPivLu().inverse();
  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(q.data(), n);
  y /= y.norm();
  Eigen::VectorXd scores = inv * y;
  for (const RankedEntry& e : ranked.entries) EXPECT_NEAR(e.score, scores(std::stoi(e.id.substr(1))), 1e-10);
}

TEST(HeatKernel, PathGraphOracle) {
  Eigen::MatrixXd w(3, 3);
  w << 0, 1, 0, 1, 0, 1, 0, 1, 0;  // q - a - b
  Eigen::VectorXd h = heat_kernel_scores(w, 0, 1.0, HeatLaplacian::kNormalized);
  EXPECT_GT(h(1), h(2));
  Eigen::Vector3d d = w.rowwise().sum();
  Eigen::Matrix3d lsym = Eigen::Matrix3d::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) lsym(i, j) -= w(i, j) / std::sqrt(d(i) * d(j));
  Eigen::VectorXd start = Eigen::Vector3d(1.0 / std::sqrt(d(0)), 0, 0);
  Eigen::Vector3d series = Eigen::Vector3d::Zero();
  {
    Eigen::VectorXd term = start, total = start;
    for (int k = 1; k < 80; ++k) {
      term = (-1.0 / k) * (lsym * term);
      total += term;
    }
    series = d.cwiseSqrt().cwiseProduct(total);
  }
  EXPECT_LT((h - series).norm(), 1e-12);
  Eigen::VectorXd hu = heat_kernel_scores(w, 0, 1.0, HeatLaplacian::kUnnormalized);
  Eigen::Matrix3d l = Eigen::Matrix3d(d.asDiagonal()) - w;
  EXPECT_LT((hu - heat_series(l, 0, 1.0)).norm(), 1e-12);
  EXPECT_GT(hu(1), hu(2));
}

TEST(HeatKernel, UnnormalizedIsNonNegativeAndSumPreserving) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 12;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) w(i, j) = w(j, i) = rng.uniform() < 0.4 ? rng.uniform() : 0.0;
    Eigen::VectorXd h = heat_kernel_scores(w, static_cast<std::size_t>(trial % n), rng.uniform(0.1, 3.0),
                                           HeatLaplacian::kUnnormalized);
    EXPECT_NEAR(h.sum(), 1.0, 1e-9);
    EXPECT_GE(h.minCoeff(), -1e-12);
  }
}

TEST(HeatRerank, TinyTimePreservesOrder) {
  Rng rng(5);
  RetrievalIndex index = random_index(40, 8, rng);
  std::vector<double> q = test_util::random_vector(8, rng);
  RankedList initial = knn_query(index, q, 40);
  DiffusionConfig cfg;
  cfg.heat_t = 1e-4;
  cfg.rerank_depth = 6;
  RankedList out = heat_diffusion_rerank(q, initial, index, cfg);
  EXPECT_EQ(ids(out), ids(initial));
  EXPECT_TRUE(out.well_formed());
}

TEST(HeatRerank, IdenticalVectorsTieByIdAndDegenerateInput) {
  RetrievalIndex index(3);
  index.add("b", {1, 1, 0});
  index.add("a", {1, 1, 0});
  index.add("c", {1, 0, 0.2});
  std::vector<double> q{1, 0.8, 0};
  RankedList initial = knn_query(index, q, 3);
  DiffusionConfig cfg;
  HeatScores hs = heat_scores(q, initial, index, cfg);
  auto pos = [&](const std::string& id) {
    for (std::size_t i = 0; i < hs.members.size(); ++i)
      if (index.record(hs.members[i]).id == id) return static_cast<Eigen::Index>(i);
    return Eigen::Index{-1};
  };
  EXPECT_NEAR(hs.heat(pos("a")), hs.heat(pos("b")), 1e-12);
  RankedList out = heat_diffusion_rerank(q, initial, index, cfg);
  auto order = ids(out);
  EXPECT_LT(std::find(order.begin(), order.end(), "a"), std::find(order.begin(), order.end(), "b"));

  RetrievalIndex ortho(2);
  ortho.add("x", {0, 1});
  ortho.add("y", {0, 2});
  std::vector<double> q2{1, 0};
  RankedList init2 = knn_query(ortho, q2, 2);
  RankedList degenerate = heat_diffusion_rerank(q2, init2, ortho, cfg);
  EXPECT_TRUE(degenerate.degenerate);
  EXPECT_EQ(degenerate.entries, init2.entries);
  RankedList single;
  single.entries.push_back({"x", 1.0});
  EXPECT_THROW(heat_diffusion_rerank(q2, single, ortho, cfg), ValidationError);
}

TEST(Aqe, DegenerateExpansions) {
  Rng rng(6);
  RetrievalIndex index = random_index(25, 6, rng);
  std::vector<double> q = test_util::random_vector(6, rng);
  RankedList initial = knn_query(index, q, 25);
  EXPECT_EQ(aqe(q, initial, index, 0).entries, initial.entries);
  EXPECT_THROW(aqe(q, initial, index, 26), ValidationError);

  RetrievalIndex dup(6);
  for (std::size_t i = 0; i < 24; ++i) dup.add(index.record(i).id, index.record(i).vector);
  dup.add("query_copy", q);
  RankedList first = knn_query(dup, q, 25);
  ASSERT_EQ(first.entries[0].id, "query_copy");
  EXPECT_EQ(ids(aqe(q, first, dup, 1)), ids(first));
}

TEST(Aqe, PullsClusterAboveInterleavedDistractor) {
  // 29 cluster members spread along one direction; the distractor sits close
  // to the query but away from the cluster's centre of mass
  const std::size_t dim = 4;
  RetrievalIndex index(dim);
  for (std::size_t i = 0; i < 29; ++i) index.add(node_id(i), {1.0, 0.02 * static_cast<double>(i), 0.0, 0.0});
  std::vector<double> q{1.0, 0.0, 0.0, 0.45};
  index.add("zz_distractor", {1.0, 0.0, 0.0, 1.2});
  RankedList plain = knn_query(index, q, 30);
  auto position = [](const RankedList& l, const std::string& id) {
    for (std::size_t i = 0; i < l.size(); ++i)
      if (l.entries[i].id == id) return i;
    return l.size();
  };
  ASSERT_LT(position(plain, "zz_distractor"), 29u);
  RankedList expanded = aqe(q, plain, index, 5);
  EXPECT_EQ(position(expanded, "zz_distractor"), 29u);

  // exhaustive recomputation of the expanded query
  std::vector<double> e = unit_vector(q);
  for (std::size_t i = 0; i < 5; ++i) {
    auto u = index.unit(*index.find(plain.entries[i].id));
    for (std::size_t d = 0; d < dim; ++d) e[d] += u[d];
  }
  std::vector<std::pair<std::string, std::vector<double>>> db;
  for (const auto& r : index.records()) db.emplace_back(r.id, r.vector);
  EXPECT_EQ(ids(expanded), oracle::knn(db, e, 30));
}

TEST(Aqe, IdempotentTopSetOnClusteredData) {
  Rng rng(8);
  RetrievalIndex index = clustered_index(5, 10, 16, 0.05, rng);
  for (std::size_t qi = 0; qi < index.size(); qi += 7) {
    std::vector<double> q = index.record(qi).vector;
    RankedList once = aqe(q, knn_query(index, q, index.size()), index, 5);
    RankedList twice = aqe(q, once, index, 5);
    std::set<std::string> a, b;
    for (std::size_t i = 0; i < 5; ++i) {
      a.insert(once.entries[i].id);
      b.insert(twice.entries[i].id);
    }
    EXPECT_EQ(a, b);
  }
}

TEST(Compose, PipelinesProduceValidLists) {
  Rng rng(9);
  RetrievalIndex index = clustered_index(10, 10, 12, 0.2, rng);
  DiffusionConfig cfg;
  DiffusionTable table = offline_diffusion_prepare(pairwise_similarities(index), cfg);
  std::set<std::string> all;
  for (const auto& r : index.records()) all.insert(r.id);
  for (PostProcessing pp : {PostProcessing::kNone, PostProcessing::kQueryExpansion, PostProcessing::kHeatWeighted,
                            PostProcessing::kOfflineDiffusion}) {
    SimilarityFunc f = compose(pp, index, cfg, &table);
    for (int k = 0; k < 5; ++k) {
      RankedList l = f(test_util::random_vector(12, rng));
      EXPECT_TRUE(l.well_formed()) << postprocessing_name(pp);
      EXPECT_EQ(l.size(), index.size());
      for (const auto& e : l.entries) EXPECT_TRUE(all.count(e.id));
    }
  }
  std::vector<double> q = test_util::random_vector(12, rng);
  EXPECT_EQ(compose(PostProcessing::kNone, index, cfg)(q).entries, knn_query(index, q, index.size()).entries);
  DiffusionConfig no_expansion = cfg;
  no_expansion.aqe_top_k = 0;
  EXPECT_EQ(compose(PostProcessing::kQueryExpansion, index, no_expansion)(q).entries,
            compose(PostProcessing::kNone, index, no_expansion)(q).entries);
  EXPECT_THROW(compose(PostProcessing::kOfflineDiffusion, index, cfg), ValidationError);
  EXPECT_THROW(parse_postprocessing("X"), ValidationError);
  for (const char* name : {"none", "Q", "WQR", "O"}) EXPECT_EQ(postprocessing_name(parse_postprocessing(name)), name);
}

TEST(DiffusionFile, RoundTripAndResidualCheck) {
  Rng rng(10);
  RetrievalIndex index = clustered_index(4, 10, 8, 0.2, rng);
  DiffusionConfig cfg;
  DiffusionTable d = offline_diffusion_prepare(pairwise_similarities(index), cfg);
  const auto path = std::filesystem::temp_directory_path() / "buddynet_postproc_test.bdif";
  write_diffusion_table(path, d.table);
  DiffusionTable back = read_diffusion_table(path, d.transition, cfg.alpha);
  EXPECT_EQ(back.table, d.table);
  EXPECT_EQ(serialize_diffusion_table(back.table), serialize_diffusion_table(d.table));
  Eigen::MatrixXd wrong = d.transition;
  wrong(0, 1) += 0.1;
  wrong(1, 0) += 0.1;
  EXPECT_THROW(read_diffusion_table(path, wrong, cfg.alpha, 40), FormatError);
  auto bytes = serialize_diffusion_table(d.table);
  bytes.pop_back();
  EXPECT_THROW(deserialize_diffusion_table(bytes), FormatError);
}
