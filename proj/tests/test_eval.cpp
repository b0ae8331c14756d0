#include <cmath>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "transvis/eval.hpp"

using namespace transvis;

namespace {

GroundTruth balanced_truth(std::size_t categories, std::size_t instances, std::size_t views) {
  GroundTruth t;
  for (std::uint32_t c = 0; c < categories; ++c)
    for (std::uint32_t i = 0; i < instances; ++i)
      for (std::uint32_t v = 0; v < views; ++v)
        t.push_back({c, static_cast<std::uint32_t>(c * instances + i), v});
  return t;
}

Matrix<double> gaussian_rows(Rng& rng, std::size_t n, std::size_t d) {
  Matrix<double> m(n, d);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

/// `count` disjoint quadruple structures: tracks {4q, 4q+1} and
/// {4q+2, 4q+3}, child cluster {4q, 4q+2}.
AffinityGraph disjoint_quads(std::size_t count) {
  NodeMeta meta;
  std::vector<ChildCluster> children;
  for (std::size_t q = 0; q < count; ++q) {
    for (int t = 0; t < 2; ++t)
      for (std::uint32_t f = 0; f < 2; ++f)
        meta.push_back({"v", "track_" + std::to_string(2 * q + t), f});
    const auto base = static_cast<NodeId>(4 * q);
    children.push_back({static_cast<ClusterId>(q), 0, {base, base + 2}});
  }
  const std::size_t n = meta.size();
  const auto tracks = tracks_from_meta(meta);
  return build_graph(2, std::move(meta), ParentAssignment(n, 0), std::move(children), tracks);
}

/// Random orthogonal d x d matrix via Gram-Schmidt.
Matrix<double> random_orthogonal(Rng& rng, std::size_t d) {
  Matrix<double> q = gaussian_rows(rng, d, d);
  for (std::size_t i = 0; i < d; ++i) {
    auto r = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const double p = dot(r, q.row(j));
      for (std::size_t t = 0; t < d; ++t) r[t] -= p * q(j, t);
    }
    const double n = std::sqrt(squared_norm(r));
    for (double& v : r) v /= n;
  }
  return q;
}

Matrix<double> multiply_rows(const Matrix<double>& x, const Matrix<double>& q) {
  Matrix<double> y(x.rows(), q.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t r = 0; r < q.rows(); ++r) y(i, r) = dot(q.row(r), x.row(i));
  return y;
}

}  // namespace

TEST(Purity, SingleCategoryClustersScoreOne) {
  const auto truth = balanced_truth(2, 4, 1);
  const std::vector<ChildCluster> cs = {{0, 0, {0, 1, 2, 3}}, {1, 1, {4, 5, 6}}};
  const auto r = purity(cs, truth);
  EXPECT_EQ(r.strict, 1.0);
  EXPECT_EQ(r.majority, 1.0);
  EXPECT_EQ(r.clusters, 2u);
}

TEST(Purity, OneMixedClusterOfTwoScoresHalf) {
  const auto truth = balanced_truth(2, 4, 1);
  const std::vector<ChildCluster> cs = {{0, 0, {0, 1, 2, 3}}, {1, 0, {2, 3, 4, 5}}};
  const auto r = purity(cs, truth);
  EXPECT_EQ(r.strict, 0.5);
  EXPECT_EQ(r.majority, 0.75);
}

TEST(Purity, RandomClustersMatchCombinatorialRate) {
  // P(all g members share a category) = C * C^-g = C^(1-g) for independent
  // uniform categories.
  const std::size_t C = 3, g = 4, clusters = 20000;
  const auto truth = balanced_truth(C, 20000, 1);
  Rng rng(7);
  std::vector<ChildCluster> cs;
  for (std::size_t c = 0; c < clusters; ++c) {
    ChildCluster cc{static_cast<ClusterId>(c), 0, {}};
    for (std::size_t m = 0; m < g; ++m) cc.members.push_back(static_cast<NodeId>(rng.uniform_index(truth.size())));
    cs.push_back(cc);
  }
  const double p = std::pow(static_cast<double>(C), 1.0 - static_cast<double>(g));
  const double sigma = std::sqrt(p * (1 - p) / clusters);
  EXPECT_NEAR(purity(cs, truth).strict, p, 3 * sigma);
}

TEST(Purity, MissingLabelIsError) {
  const auto truth = balanced_truth(1, 2, 1);
  EXPECT_THROW(purity({{0, 0, {0, 5}}}, truth), ValidationError);
}

TEST(Retrieval, OneHotCategoryCodesScoreOne) {
  const auto truth = balanced_truth(4, 5, 2);
  Matrix<float> emb(truth.size(), 4, 0.0f);
  for (std::size_t i = 0; i < truth.size(); ++i) emb(i, truth[i].category) = 1.0f;
  for (auto protocol : {RetrievalProtocol::All, RetrievalProtocol::CrossView, RetrievalProtocol::CrossViewCrossInstance})
    EXPECT_EQ(retrieval_precision(emb, truth, 3, protocol), 1.0);
}

TEST(Retrieval, RandomEmbeddingsScoreAtChance) {
  // Each query's gallery holds n/C - 1 same-category items out of n - 1.
  const std::size_t C = 5, per = 40, k = 5, trials = 20;
  const auto truth = balanced_truth(C, per, 1);
  const std::size_t n = truth.size();
  const double expected = static_cast<double>(n / C - 1) / static_cast<double>(n - 1);
  Rng rng(3);
  std::vector<double> runs;
  for (std::size_t t = 0; t < trials; ++t)
    runs.push_back(retrieval_precision(gaussian_rows(rng, n, 8), truth, k, RetrievalProtocol::All));
  const double mean = std::accumulate(runs.begin(), runs.end(), 0.0) / trials;
  double var = 0.0;
  for (double r : runs) var += (r - mean) * (r - mean);
  var /= trials - 1;
  EXPECT_NEAR(mean, expected, 3.0 * std::sqrt(var / trials));
  EXPECT_NEAR(expected, 1.0 / C, 0.01);
}

TEST(Retrieval, InfeasibleKIsError) {
  const auto truth = balanced_truth(2, 3, 2);
  Rng rng(1);
  const auto emb = gaussian_rows(rng, truth.size(), 4);
  // Cross-view cross-instance gallery holds 2 same-category items.
  EXPECT_NO_THROW(retrieval_precision(emb, truth, 2, RetrievalProtocol::CrossViewCrossInstance));
  EXPECT_THROW(retrieval_precision(emb, truth, 3, RetrievalProtocol::CrossViewCrossInstance), ConfigError);
}

TEST(Retrieval, DeterministicAcrossWorkers) {
  const auto truth = balanced_truth(4, 10, 2);
  Rng rng(2);
  const auto emb = gaussian_rows(rng, truth.size(), 6);
  EXPECT_EQ(retrieval_precision(emb, truth, 4, RetrievalProtocol::CrossView, 1),
            retrieval_precision(emb, truth, 4, RetrievalProtocol::CrossView, 6));
}

TEST(Ordering, CoincidentTrackMatesScoreOne) {
  const auto g = disjoint_quads(50);
  Rng rng(4);
  auto emb = gaussian_rows(rng, g.size(), 5);
  for (NodeId v = 1; v < g.size(); v += 2)
    for (std::size_t t = 0; t < 5; ++t) emb(v, t) = emb(v - 1, t);
  EXPECT_EQ(quadruple_ordering_rate(emb, g, 2000, 1), 1.0);
}

TEST(Ordering, RandomEmbeddingsScoreHalf) {
  const std::size_t structures = 2000, samples = 20000;
  const auto g = disjoint_quads(structures);
  Rng rng(5);
  const auto emb = gaussian_rows(rng, g.size(), 6);
  // Sampling noise plus quadruple-level noise; the two orientations of an
  // edge are counted as fully correlated.
  const double sigma = std::sqrt(0.25 / samples + 0.25 / structures);
  EXPECT_NEAR(quadruple_ordering_rate(emb, g, samples, 9), 0.5, 3 * sigma);
}

TEST(Ordering, HandBuiltQuadruple) {
  const auto g = disjoint_quads(1);
  ASSERT_EQ(enumerate_quadruples(g).size(), 2u);  // (0,1,2,3) and (2,3,0,1)
  // A=0 at angle 0, A'=1 at 30 deg, B=2 at 90 deg, B'=3 at 20 deg.
  auto at = [](double deg) {
    const double r = deg * std::numbers::pi / 180.0;
    return std::vector<double>{std::cos(r), std::sin(r)};
  };
  std::vector<double> flat;
  for (double deg : {0.0, 30.0, 90.0, 20.0})
    for (double v : at(deg)) flat.push_back(v);
  const Matrix<double> emb(4, 2, flat);
  // Orientation A=0: D(0,30deg) < D(0,20deg) is false.
  // Orientation A=2: D(90,20deg) < D(90,30deg) is false (70 > 60).
  EXPECT_EQ(quadruple_ordering_rate(emb, g, 100, 3), 0.0);
  // A=0, A'=10, B=90, B'=180 deg: A=0 orientation 10 < 180 holds, A=2
  // orientation 90 < 80 fails.
  flat.clear();
  for (double deg : {0.0, 10.0, 90.0, 180.0})
    for (double v : at(deg)) flat.push_back(v);
  const double rate = quadruple_ordering_rate(Matrix<double>(4, 2, flat), g, 4000, 3);
  EXPECT_NEAR(rate, 0.5, 3 * std::sqrt(0.25 / 4000));
}

TEST(Ordering, NoQuadruplesIsError) {
  const auto g = build_graph(1, {{"v", "a", 0}, {"v", "b", 0}}, {0, 0}, {{0, 0, {0, 1}}}, {});
  EXPECT_THROW(quadruple_ordering_rate(Matrix<double>(2, 1, 1.0), g, 10, 1), ConfigError);
}

TEST(Metrics, InvariantUnderOrthogonalTransform) {
  Rng rng(8);
  const auto truth = balanced_truth(4, 25, 2);
  const auto g = disjoint_quads(50);
  const auto emb = gaussian_rows(rng, truth.size(), 6);
  const auto rotated = multiply_rows(emb, random_orthogonal(rng, 6));
  for (auto protocol : {RetrievalProtocol::All, RetrievalProtocol::CrossViewCrossInstance})
    EXPECT_EQ(retrieval_precision(emb, truth, 5, protocol), retrieval_precision(rotated, truth, 5, protocol));
  EXPECT_EQ(quadruple_ordering_rate(emb, g, 5000, 2), quadruple_ordering_rate(rotated, g, 5000, 2));
}

TEST(Report, JsonAndCsvLayout) {
  TempDir dir;
  EvalReport r;
  r.modes.push_back({"transitive", 10, 0.5, 0.75, 0.125});
  save_report(r, dir / "r.json", dir / "m.csv");
  const auto j = nlohmann::json::parse(detail::read_file(dir / "r.json"));
  EXPECT_EQ(j["modes"][0]["mode"], "transitive");
  EXPECT_EQ(detail::read_file(dir / "m.csv"),
            "mode,pairs,precision_at_k,quadruple_ordering_rate,final_loss\ntransitive,10,0.5,0.75,0.125\n");
}
