#pragma once

// Second clustering stage: exact top-k neighbours inside each parent cluster,
// the mutual-kNN graph, and enumeration of every size-g clique (child
// clusters).

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "transvis/error.hpp"
#include "transvis/features_io.hpp"
#include "transvis/graph.hpp"
#include "transvis/parallel.hpp"

namespace transvis {

struct NeighborConfig {
  std::size_t k = 10;
  std::size_t g = 4;
  /// Cap on child-cluster memberships per node; 0 disables the filter.
  std::size_t max_memberships = 0;
  std::size_t workers = 1;

  void validate() const {
    if (g < 2) throw ConfigError("neighbors: g must be >= 2");
    if (k + 1 < g) throw ConfigError("neighbors: k must be >= g - 1");
  }
};

struct KnnResult {
  /// Per node, neighbour ids nearest first. Empty for unassigned nodes.
  std::vector<std::vector<NodeId>> lists;
  /// Parent clusters whose size forced k down to size - 1.
  std::vector<ClusterId> clamped;
};

inline std::vector<std::vector<NodeId>> members_by_parent(std::span<const ClusterId> parent_of) {
  std::vector<std::vector<NodeId>> members;
  for (std::size_t i = 0; i < parent_of.size(); ++i) {
    const ClusterId p = parent_of[i];
    if (p < 0) continue;
    if (static_cast<std::size_t>(p) >= members.size()) members.resize(static_cast<std::size_t>(p) + 1);
    members[static_cast<std::size_t>(p)].push_back(static_cast<NodeId>(i));
  }
  return members;
}

/// Exact top-k by cosine distance within each parent cluster; ties go to the
/// smaller node id and a node never lists itself. `store` must be unit norm.
inline KnnResult knn_within_cluster(const FeatureStore& store, std::span<const ClusterId> parent_of,
                                    const NeighborConfig& config) {
  if (parent_of.size() != store.size())
    throw ValidationError("parent assignment size does not match feature count");
  const auto clusters = members_by_parent(parent_of);

  KnnResult res;
  res.lists.assign(store.size(), {});
  std::vector<std::uint8_t> clamped(clusters.size(), 0);

  parallel_for(clusters.size(), config.workers, [&](std::size_t c) {
    const auto& members = clusters[c];
    if (members.size() <= 1) {
      clamped[c] = !members.empty() && config.k > 0;
      return;
    }
    const std::size_t k = std::min(config.k, members.size() - 1);
    clamped[c] = k < config.k;
    std::vector<std::pair<double, NodeId>> cand;
    cand.reserve(members.size() - 1);
    for (NodeId i : members) {
      cand.clear();
      for (NodeId j : members)
        if (j != i) cand.emplace_back(1.0 - dot(store.row(i), store.row(j)), j);
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
      auto& out = res.lists[i];
      out.reserve(k);
      for (std::size_t t = 0; t < k; ++t) out.push_back(cand[t].second);
    }
  });

  for (std::size_t c = 0; c < clusters.size(); ++c)
    if (clamped[c]) res.clamped.push_back(static_cast<ClusterId>(c));
  return res;
}

/// Symmetric adjacency with sorted neighbour lists and no self loops.
class MutualKnnGraph {
 public:
  MutualKnnGraph() = default;
  explicit MutualKnnGraph(std::vector<std::vector<NodeId>> adj) : adj_(std::move(adj)) {}

  std::size_t size() const noexcept { return adj_.size(); }
  std::span<const NodeId> neighbors(NodeId v) const { return adj_[v]; }
  bool adjacent(NodeId u, NodeId v) const {
    return std::binary_search(adj_[u].begin(), adj_[u].end(), v);
  }
  std::size_t edge_count() const {
    std::size_t s = 0;
    for (const auto& a : adj_) s += a.size();
    return s / 2;
  }

  friend bool operator==(const MutualKnnGraph&, const MutualKnnGraph&) = default;

 private:
  std::vector<std::vector<NodeId>> adj_;
};

/// i ~ j iff each lists the other.
inline MutualKnnGraph mutual_graph(const std::vector<std::vector<NodeId>>& lists) {
  const std::size_t n = lists.size();
  std::vector<std::vector<NodeId>> sorted(n);
  for (std::size_t i = 0; i < n; ++i) {
    sorted[i] = lists[i];
    std::sort(sorted[i].begin(), sorted[i].end());
  }
  std::vector<std::vector<NodeId>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (NodeId j : sorted[i]) {
      if (j >= n) throw ValidationError("neighbour id " + std::to_string(j) + " out of range", j);
      if (j == i) continue;
      if (std::binary_search(sorted[j].begin(), sorted[j].end(), static_cast<NodeId>(i)))
        adj[i].push_back(j);
    }
    adj[i].erase(std::unique(adj[i].begin(), adj[i].end()), adj[i].end());
  }
  return MutualKnnGraph(std::move(adj));
}

namespace detail {

// Grows `clique` with candidates larger than its last member; `cand` holds
// the common higher neighbours of every member so far.
inline void extend_cliques(const MutualKnnGraph& graph, std::size_t g, std::vector<NodeId>& clique,
                           const std::vector<NodeId>& cand,
                           std::vector<std::vector<NodeId>>& out) {
  if (clique.size() == g) {
    out.push_back(clique);
    return;
  }
  const std::size_t need = g - clique.size();
  for (std::size_t t = 0; t + need <= cand.size(); ++t) {
    const NodeId v = cand[t];
    std::vector<NodeId> next;
    const auto nv = graph.neighbors(v);
    std::set_intersection(cand.begin() + static_cast<std::ptrdiff_t>(t) + 1, cand.end(),
                          nv.begin(), nv.end(), std::back_inserter(next));
    if (next.size() + 1 < need) continue;
    clique.push_back(v);
    extend_cliques(graph, g, clique, next, out);
    clique.pop_back();
  }
}

}  // namespace detail

/// Every size-g clique, members ascending, cliques in lexicographic order.
inline std::vector<std::vector<NodeId>> enumerate_cliques(const MutualKnnGraph& graph,
                                                          std::size_t g) {
  std::vector<std::vector<NodeId>> out;
  if (g == 0) return out;
  std::vector<NodeId> clique;
  for (NodeId v = 0; v < graph.size(); ++v) {
    const auto nv = graph.neighbors(v);
    std::vector<NodeId> higher(std::upper_bound(nv.begin(), nv.end(), v), nv.end());
    if (higher.size() + 1 < g) continue;
    clique.assign(1, v);
    detail::extend_cliques(graph, g, clique, higher, out);
  }
  return out;
}

/// Child clusters from the size-g cliques of the mutual graph, numbered in
/// output order. Overlapping cliques are all kept unless `max_memberships`
/// is nonzero, in which case a clique is dropped once any member already
/// belongs to that many accepted clusters.
inline std::vector<ChildCluster> find_child_clusters(const MutualKnnGraph& graph, std::size_t g,
                                                     std::span<const ClusterId> parent_of = {},
                                                     std::size_t max_memberships = 0) {
  std::vector<ChildCluster> out;
  std::vector<std::size_t> uses(graph.size(), 0);
  for (auto& members : enumerate_cliques(graph, g)) {
    if (max_memberships != 0 &&
        std::any_of(members.begin(), members.end(),
                    [&](NodeId m) { return uses[m] >= max_memberships; }))
      continue;
    for (NodeId m : members) ++uses[m];
    ChildCluster c;
    c.id = static_cast<ClusterId>(out.size());
    c.parent = parent_of.empty() ? kUnassigned : parent_of[members.front()];
    c.members = std::move(members);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace transvis
