#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "transvis/neighbors.hpp"
#include "transvis/rng.hpp"

using namespace transvis;

namespace {

MutualKnnGraph from_adjacency(const oracle::Adjacency& adj) {
  std::vector<std::vector<NodeId>> lists(adj.size());
  for (std::size_t i = 0; i < adj.size(); ++i)
    for (std::size_t j = 0; j < adj.size(); ++j)
      if (adj[i][j]) lists[i].push_back(static_cast<NodeId>(j));
  return mutual_graph(lists);
}

FeatureStore angles(const std::vector<double>& theta) {
  Matrix<float> m(theta.size(), 2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m(i, 0) = static_cast<float>(std::cos(theta[i]));
    m(i, 1) = static_cast<float>(std::sin(theta[i]));
  }
  return FeatureStore(std::move(m));
}

}  // namespace

TEST(Knn, ThreeDirectionsOrderedByAngle) {
  const std::vector<double> theta = {0.0, 0.3, 1.0};
  const auto store = angles(theta);
  NeighborConfig cfg;
  cfg.k = 2;
  cfg.g = 2;
  const auto r = knn_within_cluster(store, ParentAssignment(3, 0), cfg);
  // Exhaustive pairwise-angle ordering.
  for (NodeId i = 0; i < 3; ++i) {
    std::vector<NodeId> others;
    for (NodeId j = 0; j < 3; ++j)
      if (j != i) others.push_back(j);
    std::sort(others.begin(), others.end(), [&](NodeId a, NodeId b) {
      return std::abs(theta[a] - theta[i]) < std::abs(theta[b] - theta[i]);
    });
    EXPECT_EQ(r.lists[i], others) << "node " << i;
  }
  EXPECT_TRUE(r.clamped.empty());
}

TEST(Knn, DuplicatesRankFirstWithIdTieBreak) {
  const auto store = angles({0.5, 0.0, 0.5, 0.5, 2.0});
  NeighborConfig cfg;
  cfg.k = 3;
  const auto r = knn_within_cluster(store, ParentAssignment(5, 0), cfg);
  EXPECT_EQ(r.lists[0], (std::vector<NodeId>{2, 3, 1}));
  EXPECT_EQ(r.lists[3], (std::vector<NodeId>{0, 2, 1}));
}

TEST(Knn, KIsClampedToClusterSizeMinusOne) {
  const auto store = angles({0.0, 0.1, 0.2, 1.0, 1.1, 1.2, 1.3, 2.0});
  const ParentAssignment parent = {0, 0, 0, 1, 1, 1, 1, kUnassigned};
  NeighborConfig cfg;
  cfg.k = 10;
  const auto r = knn_within_cluster(store, parent, cfg);
  for (NodeId i = 0; i < 3; ++i) EXPECT_EQ(r.lists[i].size(), 2u);
  for (NodeId i = 3; i < 7; ++i) EXPECT_EQ(r.lists[i].size(), 3u);
  EXPECT_TRUE(r.lists[7].empty());
  EXPECT_EQ(r.clamped, (std::vector<ClusterId>{0, 1}));
  // Lists never cross parents.
  for (NodeId i = 0; i < 7; ++i)
    for (NodeId j : r.lists[i]) EXPECT_EQ(parent[j], parent[i]);
}

TEST(Knn, SingletonClusterGivesEmptyList) {
  const auto store = angles({0.0, 1.0});
  const auto r = knn_within_cluster(store, ParentAssignment{0, 1}, NeighborConfig{});
  EXPECT_TRUE(r.lists[0].empty());
  EXPECT_TRUE(r.lists[1].empty());
}

TEST(Knn, DeterministicAcrossWorkers) {
  Rng rng(6);
  Matrix<float> m(400, 8);
  for (float& v : m.data()) v = static_cast<float>(rng.normal());
  const auto store = l2_normalize(FeatureStore(std::move(m)));
  ParentAssignment parent(400);
  for (auto& p : parent) p = static_cast<ClusterId>(rng.uniform_index(7));
  NeighborConfig cfg;
  const auto a = knn_within_cluster(store, parent, cfg);
  cfg.workers = 5;
  EXPECT_EQ(knn_within_cluster(store, parent, cfg).lists, a.lists);
}

TEST(Mutual, OneSidedListingGivesNoEdge) {
  const auto g = mutual_graph({{1}, {}});
  EXPECT_FALSE(g.adjacent(0, 1));
  EXPECT_EQ(g.edge_count(), 0u);
}

TEST(Mutual, MutualListingGivesEdge) {
  const auto g = mutual_graph({{1, 2}, {0}, {}});
  EXPECT_TRUE(g.adjacent(0, 1));
  EXPECT_TRUE(g.adjacent(1, 0));
  EXPECT_FALSE(g.adjacent(0, 2));
  EXPECT_EQ(g.edge_count(), 1u);
}

TEST(Mutual, RandomListsMatchScanOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<NodeId>> lists(50);
    for (std::size_t i = 0; i < 50; ++i) {
      while (lists[i].size() < 8) {
        const auto j = static_cast<NodeId>(rng.uniform_index(50));
        if (j != i && std::find(lists[i].begin(), lists[i].end(), j) == lists[i].end()) lists[i].push_back(j);
      }
    }
    const auto g = mutual_graph(lists);
    const auto expected = oracle::mutual_by_scan(lists);
    for (NodeId i = 0; i < 50; ++i)
      for (NodeId j = 0; j < 50; ++j) ASSERT_EQ(g.adjacent(i, j), expected[i][j]);
  }
}

TEST(Cliques, CompleteGraphOnFiveHasFiveFourCliques) {
  oracle::Adjacency k5(5, std::vector<bool>(5, true));
  for (std::size_t i = 0; i < 5; ++i) k5[i][i] = false;
  const auto cliques = enumerate_cliques(from_adjacency(k5), 4);
  EXPECT_EQ(cliques.size(), 5u);
  EXPECT_EQ(cliques, oracle::cliques_by_subsets(k5, 4));
}

TEST(Cliques, FourCycleHasNone) {
  oracle::Adjacency c4(4, std::vector<bool>(4, false));
  for (std::size_t i = 0; i < 4; ++i) c4[i][(i + 1) % 4] = c4[(i + 1) % 4][i] = true;
  EXPECT_TRUE(enumerate_cliques(from_adjacency(c4), 4).empty());
}

TEST(Cliques, RandomGraphsMatchSubsetOracle) {
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(25);
    const auto adj = oracle::random_graph(rng, n, rng.uniform(0.2, 0.9));
    const auto graph = from_adjacency(adj);
    for (std::size_t g : {2u, 3u, 4u})
      ASSERT_EQ(enumerate_cliques(graph, g), oracle::cliques_by_subsets(adj, g)) << "n=" << n << " g=" << g;
  }
}

TEST(ChildClusters, IdsParentsAndMembershipCap) {
  oracle::Adjacency k5(5, std::vector<bool>(5, true));
  for (std::size_t i = 0; i < 5; ++i) k5[i][i] = false;
  const auto graph = from_adjacency(k5);
  const ParentAssignment parent(5, 3);
  const auto all = find_child_clusters(graph, 4, parent);
  ASSERT_EQ(all.size(), 5u);
  for (std::size_t c = 0; c < all.size(); ++c) {
    EXPECT_EQ(all[c].id, static_cast<ClusterId>(c));
    EXPECT_EQ(all[c].parent, 3);
    EXPECT_EQ(all[c].members.size(), 4u);
  }
  // With a cap of 1 only the first clique survives.
  const auto capped = find_child_clusters(graph, 4, parent, 1);
  ASSERT_EQ(capped.size(), 1u);
  EXPECT_EQ(capped[0].members, (std::vector<NodeId>{0, 1, 2, 3}));
}
