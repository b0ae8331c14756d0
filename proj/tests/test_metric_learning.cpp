#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "transvis/metric_learning.hpp"

using namespace transvis;

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <class T>
std::span<const T> view(const std::vector<T>& v) {
  return v;
}

/// Loss as a function of the flat parameter vector.
struct LossAt {
  const EmbeddingModel<double>& shape;
  const TripletFeatures<double>& x;
  double margin;

  double operator()(const std::vector<double>& params) const {
    EmbeddingModel<double> m = shape;
    std::copy(params.begin(), params.end(), m.params().begin());
    return ranking_loss(m, x, margin).loss;
  }
};

/// Smallest |pre-activation| over the three towers, or +inf for Linear.
double min_relu_gap(const EmbeddingModel<double>& m, const TripletFeatures<double>& x) {
  double gap = std::numeric_limits<double>::infinity();
  if (m.architecture() == Architecture::Linear) return gap;
  for (auto row : {x.anchor, x.positive, x.negative})
    for (double v : forward(m, row).pre) gap = std::min(gap, std::abs(v));
  return gap;
}

FeatureStore two_clusters(Rng& rng, std::size_t per, std::size_t d) {
  Matrix<float> m(2 * per, d);
  for (std::size_t i = 0; i < 2 * per; ++i)
    for (std::size_t t = 0; t < d; ++t) {
      const double center = (i < per) == (t < d / 2) ? 1.0 : 0.0;
      m(i, t) = static_cast<float>(center + 0.3 * rng.normal());
    }
  return FeatureStore(std::move(m));
}

}  // namespace

TEST(Embed, IdentityLinearMapReturnsInput) {
  EmbeddingModel<float> m(Architecture::Linear, 4, 0, 4);
  for (std::size_t i = 0; i < 4; ++i) m.w1()[i * 4 + i] = 1.0f;
  const std::vector<float> x = {0.5f, -1.0f, 2.0f, 3.25f};
  EXPECT_EQ(embed(m, view(x)), x);
}

TEST(Embed, ZeroWeightsGiveZeroVectorAndGuardedDistance) {
  EmbeddingModel<double> m(Architecture::OneHidden, 3, 4, 2);
  const std::vector<double> x = {1, 2, 3};
  const auto y = embed(m, view(x));
  EXPECT_EQ(y, (std::vector<double>{0, 0}));
  EXPECT_THROW(cosine_distance(view(y), view(y)), ValidationError);
}

TEST(Embed, MatchesIndependentForwardPass) {
  Rng rng(2);
  for (auto arch : {Architecture::Linear, Architecture::OneHidden}) {
    auto m = EmbeddingModel<double>::xavier(arch, 7, 5, 3, 11);
    for (double& b : m.b1()) b = rng.normal();
    const auto x = gaussian(rng, 7);
    std::vector<double> expected;
    const std::vector<double> w1(m.w1().begin(), m.w1().end()), b1(m.b1().begin(), m.b1().end());
    if (arch == Architecture::Linear) {
      expected = oracle::affine(w1, b1, x);
    } else {
      auto h = oracle::affine(w1, b1, x);
      for (double& v : h) v = std::max(v, 0.0);
      expected = oracle::affine({m.w2().begin(), m.w2().end()}, {m.b2().begin(), m.b2().end()}, h);
    }
    const auto y = embed(m, view(x));
    ASSERT_EQ(y.size(), expected.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_TRUE(std::isfinite(y[i]));
      EXPECT_NEAR(y[i], expected[i], 1e-12);
    }
  }
}

TEST(Embed, DimensionMismatchAndNonFiniteInput) {
  EmbeddingModel<float> m(Architecture::Linear, 3, 0, 2);
  const std::vector<float> x = {1, 2};
  EXPECT_THROW(embed(m, view(x)), ValidationError);
  const std::vector<float> nan = {1, std::nanf(""), 0};
  EXPECT_THROW(embed(m, view(nan)), ValidationError);
}

TEST(CosineDistance, SameOrthogonalOpposite) {
  const std::vector<double> u = {1, 2, 3}, e1 = {1, 0}, e2 = {0, 1};
  const std::vector<double> neg = {-1, -2, -3};
  EXPECT_NEAR(cosine_distance(view(u), view(u)), 0.0, 1e-15);
  EXPECT_NEAR(cosine_distance(view(e1), view(e2)), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(view(u), view(neg)), 2.0, 1e-15);
}

TEST(CosineDistance, MatchesOracleAndIsScaleInvariant) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    auto u = gaussian(rng, 9), v = gaussian(rng, 9);
    const double d = cosine_distance(view(u), view(v));
    EXPECT_NEAR(d, oracle::cosine_distance(u, v), 1e-12);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    const double s = rng.uniform(0.01, 100.0);
    for (double& x : u) x *= s;
    EXPECT_NEAR(cosine_distance(view(u), view(v)), d, 1e-12);
  }
  const std::vector<double> tiny = {1e-13, 0};
  EXPECT_THROW(cosine_distance(view(tiny), view(tiny)), ValidationError);
}

TEST(RankingLoss, HingeFormula) {
  // Identity linear map on R^2 so distances follow from the inputs.
  EmbeddingModel<double> id(Architecture::Linear, 2, 0, 2);
  id.w1()[0] = id.w1()[3] = 1.0;
  auto at = [](double d) { return std::vector<double>{1.0 - d, std::sqrt(1.0 - (1.0 - d) * (1.0 - d))}; };
  const std::vector<double> x = {1, 0};
  const auto p1 = at(0.1), n1 = at(0.9), p2 = at(0.6), n2 = at(0.2);

  const auto inactive = ranking_loss(id, TripletFeatures<double>{x, p1, n1}, 0.5);
  EXPECT_NEAR(inactive.d_pos, 0.1, 1e-12);
  EXPECT_NEAR(inactive.d_neg, 0.9, 1e-12);
  EXPECT_EQ(inactive.loss, 0.0);
  EXPECT_FALSE(inactive.active);

  const auto active = ranking_loss(id, TripletFeatures<double>{x, p2, n2}, 0.5);
  EXPECT_NEAR(active.loss, 0.9, 1e-12);
  EXPECT_TRUE(active.active);

  const auto same = ranking_loss(id, TripletFeatures<double>{x, x, n2}, 0.5);
  EXPECT_NEAR(same.loss, std::max(0.0, -0.2 + 0.5), 1e-12);
}

TEST(RankingLoss, BoundedByTwoPlusMargin) {
  Rng rng(13);
  auto m = EmbeddingModel<double>::xavier(Architecture::OneHidden, 6, 8, 4, 3);
  for (double& b : m.b2()) b = 0.1 * rng.normal();  // keeps embeddings off zero
  for (int t = 0; t < 200; ++t) {
    const auto a = gaussian(rng, 6), p = gaussian(rng, 6), n = gaussian(rng, 6);
    const double margin = rng.uniform(0.1, 1.0);
    const double l = ranking_loss(m, TripletFeatures<double>{a, p, n}, margin).loss;
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0 + margin);
  }
}

TEST(LossGradient, InactiveHingeGivesZeroGradient) {
  EmbeddingModel<double> id(Architecture::Linear, 2, 0, 2);
  id.w1()[0] = id.w1()[3] = 1.0;
  const std::vector<double> x = {1, 0}, p = {0.9, 0.1}, n = {-1, 0.2};
  const auto g = loss_gradient(id, TripletFeatures<double>{x, p, n}, 0.5);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(LossGradient, MatchesCentralDifferences) {
  Rng rng(99);
  for (auto arch : {Architecture::Linear, Architecture::OneHidden}) {
    int checked = 0;
    while (checked < 20) {
      auto m = EmbeddingModel<double>::xavier(arch, 5, 4, 3, rng.next_u64());
      for (double& b : m.b1()) b = 0.1 * rng.normal();
      if (arch == Architecture::OneHidden)
        for (double& b : m.b2()) b = 0.1 * rng.normal();
      const auto a = gaussian(rng, 5), p = gaussian(rng, 5), n = gaussian(rng, 5);
      const TripletFeatures<double> x{a, p, n};
      const auto v = ranking_loss(m, x, 0.5);
      if (v.d_pos - v.d_neg + 0.5 < 1e-7 || min_relu_gap(m, x) < 1e-7) continue;
      const auto analytic = loss_gradient(m, x, 0.5);
      const std::vector<double> params(m.params().begin(), m.params().end());
      const auto numeric = oracle::central_difference(params, LossAt{m, x, 0.5}, 1e-5);
      EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-5) << to_string(arch);
      ++checked;
    }
  }
}

TEST(LossGradient, DistanceToItselfHasZeroGradient) {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const auto u = gaussian(rng, 6);
    const auto g = cosine_distance_gradient(view(u), view(u));
    // D(u + h e_i, u) numerically.
    const auto numeric = oracle::central_difference(
        u, [&](const std::vector<double>& w) { return oracle::cosine_distance(w, u); }, 1e-5);
    for (std::size_t i = 0; i < u.size(); ++i) {
      EXPECT_NEAR(g[i], 0.0, 1e-12);
      EXPECT_NEAR(numeric[i], 0.0, 1e-8);
    }
  }
}

TEST(Train, ZeroLearningRateLeavesModelUnchanged) {
  Rng rng(1);
  const auto store = two_clusters(rng, 10, 4);
  const auto model = EmbeddingModel<float>::xavier(Architecture::Linear, 4, 0, 3, 8);
  auto stepped = model;
  const std::vector<Triplet> batch = {{0, 1, 15, Relation::Inter}, {12, 13, 2, Relation::Inter}};
  sgd_step(stepped, store, std::span<const Triplet>(batch), 0.5, 0.0, 1);
  EXPECT_EQ(stepped, model);
  // The trainer itself refuses a non-positive rate.
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train(model, store, [&] { return batch; }, cfg), ConfigError);
}

TEST(Train, SeparableTripletsConverge) {
  Rng rng(21);
  const std::size_t per = 30;
  const auto store = two_clusters(rng, per, 8);
  auto draw = [&] {
    std::vector<Triplet> batch;
    for (int i = 0; i < 32; ++i) {
      const bool left = rng.coin();
      const auto base = left ? 0 : per;
      const auto other = left ? per : 0;
      batch.push_back({static_cast<NodeId>(base + rng.uniform_index(per)),
                       static_cast<NodeId>(base + rng.uniform_index(per)),
                       static_cast<NodeId>(other + rng.uniform_index(per)), Relation::Inter});
    }
    return batch;
  };
  TrainConfig cfg;
  cfg.margin = 0.5;
  cfg.learning_rate = 0.5;
  cfg.iterations = 500;
  const auto r = train(EmbeddingModel<float>::xavier(Architecture::Linear, 8, 0, 4, 5), store, draw, cfg);
  double tail = 0.0;
  for (std::size_t i = cfg.iterations - 20; i < cfg.iterations; ++i) tail += r.trace[i].mean_loss;
  EXPECT_LT(tail / 20.0, 0.05 * cfg.margin);
  EXPECT_GT(r.trace.front().mean_loss, 0.05 * cfg.margin);
}

TEST(Train, RepeatedActiveTripletLossDecreases) {
  Rng rng(31);
  const auto store = two_clusters(rng, 5, 6);
  auto model = EmbeddingModel<double>::xavier(Architecture::OneHidden, 6, 8, 4, 2);
  for (double& b : model.b2()) b = 0.1;
  // Anchor and negative from one cluster, positive from the other: active.
  const std::vector<Triplet> batch = {{0, 7, 1, Relation::Inter}};
  std::vector<double> losses;
  for (int i = 0; i < 11; ++i) {
    const auto r = sgd_step(model, store, std::span<const Triplet>(batch), 0.5, 0.001, 1);
    ASSERT_EQ(r.active_fraction, 1.0) << "hinge went inactive at step " << i;
    losses.push_back(r.mean_loss);
  }
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Train, UpdateIsIdenticalAcrossWorkerCounts) {
  Rng rng(3);
  const auto store = two_clusters(rng, 100, 6);
  std::vector<Triplet> batch;
  for (int i = 0; i < 300; ++i)
    batch.push_back({static_cast<NodeId>(rng.uniform_index(100)), static_cast<NodeId>(rng.uniform_index(100)),
                     static_cast<NodeId>(100 + rng.uniform_index(100)), Relation::Inter});
  auto init = EmbeddingModel<float>::xavier(Architecture::OneHidden, 6, 5, 4, 1);
  for (float& b : init.b2()) b = 0.1f;
  auto one = init, many = init;
  const auto r1 = sgd_step(one, store, std::span<const Triplet>(batch), 0.5, 0.1, 1);
  const auto r8 = sgd_step(many, store, std::span<const Triplet>(batch), 0.5, 0.1, 8);
  EXPECT_EQ(one, many);
  EXPECT_EQ(r1.mean_loss, r8.mean_loss);
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  const FeatureStore store(Matrix<float>(3, 2, std::vector<float>{1, 0, 0, 1, 1, 1}));
  EmbeddingModel<float> m(Architecture::Linear, 2, 0, 2);
  m.w1()[0] = m.w1()[3] = 1.0f;
  int calls = 0;
  auto source = [&] {
    ++calls;
    return std::vector<Triplet>{{0, 1, 2, Relation::Inter}};
  };
  TrainConfig cfg;
  cfg.learning_rate = 1e39;  // overflows float on the first update
  cfg.iterations = 5;
  try {
    train(m, store, source, cfg);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_LT(e.batch(), 5u);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  for (auto arch : {Architecture::Linear, Architecture::OneHidden}) {
    const auto m = EmbeddingModel<float>::xavier(arch, 9, 6, 4, 77);
    save_checkpoint(m, {42, 600}, dir / "model.json");
    CheckpointInfo info;
    EXPECT_EQ(load_checkpoint(dir / "model.json", &info), m);
    EXPECT_EQ(info.seed, 42u);
    EXPECT_EQ(info.iteration, 600u);
  }
}

TEST(RankingLoss, InvariantToRescalingTheEmbedding) {
  // Scaling every weight of a linear model by c > 0 scales every embedding.
  Rng rng(10);
  auto m = EmbeddingModel<double>::xavier(Architecture::Linear, 5, 0, 3, 5);
  for (double& b : m.b1()) b = rng.normal();
  for (int t = 0; t < 20; ++t) {
    const auto a = gaussian(rng, 5), p = gaussian(rng, 5), n = gaussian(rng, 5);
    const TripletFeatures<double> x{a, p, n};
    auto scaled = m;
    const double c = rng.uniform(0.01, 50.0);
    for (double& w : scaled.params()) w *= c;
    EXPECT_NEAR(ranking_loss(scaled, x, 0.5).loss, ranking_loss(m, x, 0.5).loss, 1e-12);
  }
}

TEST(LossTrace, CsvLayout) {
  TempDir dir;
  save_loss_trace({{0, 0.5, 1.0}, {1, 0.25, 0.5}}, dir / "loss.csv");
  EXPECT_EQ(detail::read_file(dir / "loss.csv"), "iteration,mean_loss,active_fraction\n0,0.5,1\n1,0.25,0.5\n");
}
