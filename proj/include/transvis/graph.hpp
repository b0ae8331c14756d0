#pragma once

// Affinity graph: patch nodes joined by inter-instance edges (members of one
// child cluster) and intra-instance edges (consecutive samples of one track).

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "transvis/error.hpp"
#include "transvis/features_io.hpp"

namespace transvis {

using ClusterId = std::int32_t;
inline constexpr ClusterId kUnassigned = -1;

/// node -> parent cluster id, kUnassigned for pruned nodes.
using ParentAssignment = std::vector<ClusterId>;

enum class EdgeKind : std::uint8_t { Inter, Intra };

/// Undirected edge stored with a < b. Inter edges record the child cluster
/// that produced them; Intra edges originate from a track (child == -1).
struct Edge {
  EdgeKind kind = EdgeKind::Inter;
  NodeId a = 0;
  NodeId b = 0;
  ClusterId child = kUnassigned;

  bool from_track() const noexcept { return kind == EdgeKind::Intra; }

  friend bool operator==(const Edge&, const Edge&) = default;
};

inline Edge make_edge(EdgeKind kind, NodeId u, NodeId v, ClusterId child = kUnassigned) {
  return {kind, std::min(u, v), std::max(u, v), kind == EdgeKind::Inter ? child : kUnassigned};
}

struct ChildCluster {
  ClusterId id = 0;
  ClusterId parent = kUnassigned;
  std::vector<NodeId> members;  // ascending

  friend bool operator==(const ChildCluster&, const ChildCluster&) = default;
};

/// A track as an ordered list of node ids sharing one track id.
using Track = std::vector<NodeId>;

/// Groups nodes by track id, ordered by frame index then node id. Tracks are
/// returned in order of their first node.
inline std::vector<Track> tracks_from_meta(const NodeMeta& meta) {
  std::map<std::string, Track> by_track;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    auto [it, inserted] = by_track.try_emplace(meta[i].track);
    if (inserted) order.push_back(meta[i].track);
    it->second.push_back(static_cast<NodeId>(i));
  }
  std::vector<Track> out;
  out.reserve(order.size());
  for (const auto& key : order) {
    auto t = std::move(by_track[key]);
    std::stable_sort(t.begin(), t.end(), [&](NodeId x, NodeId y) {
      return std::tie(meta[x].frame, x) < std::tie(meta[y].frame, y);
    });
    out.push_back(std::move(t));
  }
  return out;
}

class AffinityGraph {
 public:
  AffinityGraph() = default;

  /// Assembles a graph from already-validated parts. Prefer build_graph or
  /// load_graph, which check the invariants.
  AffinityGraph(std::uint32_t dim, NodeMeta nodes, ParentAssignment parent_of,
                std::vector<ChildCluster> child_clusters, std::vector<Edge> edges)
      : dim_(dim),
        nodes_(std::move(nodes)),
        parent_of_(std::move(parent_of)),
        child_clusters_(std::move(child_clusters)),
        edges_(std::move(edges)) {
    index();
  }

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  const NodeMeta& nodes() const noexcept { return nodes_; }
  const ParentAssignment& parent_of() const noexcept { return parent_of_; }
  const std::vector<ChildCluster>& child_clusters() const noexcept { return child_clusters_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }

  ClusterId parent(NodeId id) const { return parent_of_[id]; }

  /// Direct intra-edge neighbours, ascending.
  std::span<const NodeId> intra_neighbors(NodeId id) const { return intra_adj_[id]; }

  bool has_edge(EdgeKind kind, NodeId u, NodeId v) const {
    const Edge key = make_edge(kind, u, v);
    return std::binary_search(edges_.begin(), edges_.end(), key, edge_less);
  }

  std::size_t count(EdgeKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        edges_.begin(), edges_.end(), [kind](const Edge& e) { return e.kind == kind; }));
  }

  /// Structural equality; derived indices are not compared.
  friend bool operator==(const AffinityGraph& x, const AffinityGraph& y) {
    return x.dim_ == y.dim_ && x.nodes_ == y.nodes_ && x.parent_of_ == y.parent_of_ &&
           x.child_clusters_ == y.child_clusters_ && x.edges_ == y.edges_;
  }

  /// Edge order: Inter before Intra, then (a, b).
  static bool edge_less(const Edge& x, const Edge& y) {
    return std::tie(x.kind, x.a, x.b) < std::tie(y.kind, y.a, y.b);
  }

 private:
  void index() {
    intra_adj_.assign(nodes_.size(), {});
    for (const auto& e : edges_) {
      if (e.kind != EdgeKind::Intra) continue;
      intra_adj_[e.a].push_back(e.b);
      intra_adj_[e.b].push_back(e.a);
    }
    for (auto& adj : intra_adj_) std::sort(adj.begin(), adj.end());
  }

  std::uint32_t dim_ = 0;
  NodeMeta nodes_;
  ParentAssignment parent_of_;
  std::vector<ChildCluster> child_clusters_;
  std::vector<Edge> edges_;
  std::vector<std::vector<NodeId>> intra_adj_;
};

namespace detail {

inline void check_node(NodeId id, std::size_t n, const std::string& where) {
  if (id >= n)
    throw ValidationError(where + ": node id " + std::to_string(id) + " out of range", id);
}

/// Checks ids, parents, membership and uniqueness shared by build_graph and
/// load_graph.
inline void validate_clusters(std::size_t n, const ParentAssignment& parent_of,
                              const std::vector<ChildCluster>& clusters) {
  if (parent_of.size() != n)
    throw ValidationError("parent assignment covers " + std::to_string(parent_of.size()) +
                          " nodes, graph has " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (parent_of[i] < kUnassigned)
      throw ValidationError("node " + std::to_string(i) + " has invalid parent id", i);
  std::set<ClusterId> ids;
  for (const auto& c : clusters) {
    const std::string where = "child cluster " + std::to_string(c.id);
    if (!ids.insert(c.id).second)
      throw ValidationError(where + ": duplicate cluster id", static_cast<std::size_t>(c.id));
    if (c.members.size() < 2) throw ValidationError(where + ": fewer than 2 members");
    for (std::size_t i = 0; i < c.members.size(); ++i) {
      const NodeId m = c.members[i];
      check_node(m, n, where);
      if (i > 0 && c.members[i - 1] >= m)
        throw ValidationError(where + ": members must be strictly ascending at node " +
                                  std::to_string(m),
                              m);
      if (parent_of[m] == kUnassigned || parent_of[m] != c.parent)
        throw ValidationError(where + ": node " + std::to_string(m) +
                                  " is not in parent cluster " + std::to_string(c.parent),
                              m);
    }
  }
}

}  // namespace detail

/// Builds the graph: a complete clique of Inter edges per child cluster and
/// one Intra edge per consecutive pair in each track. Repeated edges of the
/// same kind collapse to one, keeping the smallest originating cluster id.
inline AffinityGraph build_graph(std::uint32_t dim, NodeMeta nodes,
                                 ParentAssignment parent_of,
                                 std::vector<ChildCluster> child_clusters,
                                 const std::vector<Track>& tracks) {
  const std::size_t n = nodes.size();
  detail::validate_clusters(n, parent_of, child_clusters);

  std::vector<Edge> edges;
  for (const auto& c : child_clusters)
    for (std::size_t i = 0; i < c.members.size(); ++i)
      for (std::size_t j = i + 1; j < c.members.size(); ++j)
        edges.push_back(make_edge(EdgeKind::Inter, c.members[i], c.members[j], c.id));

  for (const auto& t : tracks) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      detail::check_node(t[i], n, "track");
      if (nodes[t[i]].track != nodes[t.front()].track)
        throw ValidationError("track mixes track ids at node " + std::to_string(t[i]), t[i]);
      if (i == 0) continue;
      if (t[i] == t[i - 1])
        throw ValidationError("track repeats node " + std::to_string(t[i]), t[i]);
      edges.push_back(make_edge(EdgeKind::Intra, t[i - 1], t[i]));
    }
  }

  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.kind, x.a, x.b, x.child) < std::tie(y.kind, y.a, y.b, y.child);
  });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& x, const Edge& y) {
                            return x.kind == y.kind && x.a == y.a && x.b == y.b;
                          }),
              edges.end());

  return AffinityGraph(dim, std::move(nodes), std::move(parent_of), std::move(child_clusters),
                       std::move(edges));
}

/// Nodes joined to `id` by a direct Intra edge.
inline std::set<NodeId> intra_partners(const AffinityGraph& graph, NodeId id) {
  detail::check_node(id, graph.size(), "intra_partners");
  const auto adj = graph.intra_neighbors(id);
  return {adj.begin(), adj.end()};
}

// ---------------------------------------------------------------------------
// JSON-lines persistence. Record order: header, nodes, parent assignments,
// child clusters, edges.

inline constexpr int kGraphFormatVersion = 1;

inline void save_graph(const AffinityGraph& g, const std::filesystem::path& path) {
  using nlohmann::ordered_json;
  std::string out;
  auto emit = [&out](const ordered_json& j) { out += j.dump() + "\n"; };

  ordered_json header;
  header["version"] = kGraphFormatVersion;
  header["n_nodes"] = g.size();
  header["dim"] = g.dim();
  emit(header);

  for (std::size_t i = 0; i < g.size(); ++i)
    emit(node_record_json(static_cast<NodeId>(i), g.nodes()[i]));

  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g.parent_of()[i] == kUnassigned) continue;
    ordered_json j;
    j["node"] = i;
    j["parent"] = g.parent_of()[i];
    emit(j);
  }

  for (const auto& c : g.child_clusters()) {
    ordered_json j;
    j["child"] = c.id;
    j["parent"] = c.parent;
    j["members"] = c.members;
    emit(j);
  }

  for (const auto& e : g.edges()) {
    ordered_json j;
    j["kind"] = e.kind == EdgeKind::Inter ? "inter" : "intra";
    j["a"] = e.a;
    j["b"] = e.b;
    if (e.kind == EdgeKind::Inter) j["child"] = e.child;
    emit(j);
  }
  detail::write_file(path, out);
}

inline AffinityGraph load_graph(const std::filesystem::path& path) {
  bool have_header = false;
  std::uint64_t n_nodes = 0;
  std::uint32_t dim = 0;
  NodeMeta nodes;
  ParentAssignment parent_of;
  std::vector<ChildCluster> clusters;
  std::vector<Edge> edges;

  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    if (!have_header) {
      if (jsonl_field<int>(j, "version", line) != kGraphFormatVersion)
        throw ParseError("unsupported graph version", line);
      n_nodes = jsonl_field<std::uint64_t>(j, "n_nodes", line);
      dim = jsonl_field<std::uint32_t>(j, "dim", line);
      parent_of.assign(n_nodes, kUnassigned);
      have_header = true;
      return;
    }
    auto node_in_range = [&](std::uint64_t id) {
      if (id >= n_nodes) throw ParseError("node id " + std::to_string(id) + " out of range", line);
      return static_cast<NodeId>(id);
    };
    if (j.contains("kind")) {
      const auto kind = jsonl_field<std::string>(j, "kind", line);
      Edge e;
      if (kind == "inter") {
        e.kind = EdgeKind::Inter;
        e.child = jsonl_field<ClusterId>(j, "child", line);
      } else if (kind == "intra") {
        e.kind = EdgeKind::Intra;
      } else {
        throw ParseError("unknown edge kind \"" + kind + "\"", line);
      }
      e.a = node_in_range(jsonl_field<std::uint64_t>(j, "a", line));
      e.b = node_in_range(jsonl_field<std::uint64_t>(j, "b", line));
      if (e.a >= e.b) throw ParseError("edge endpoints must satisfy a < b", line);
      if (!edges.empty() && !AffinityGraph::edge_less(edges.back(), e))
        throw ParseError("edges out of order or duplicated", line);
      edges.push_back(e);
    } else if (j.contains("members")) {
      ChildCluster c;
      c.id = jsonl_field<ClusterId>(j, "child", line);
      c.parent = jsonl_field<ClusterId>(j, "parent", line);
      for (const auto& m : j["members"]) {
        if (!m.is_number_unsigned()) throw ParseError("members must be node ids", line);
        c.members.push_back(node_in_range(m.get<std::uint64_t>()));
      }
      clusters.push_back(std::move(c));
    } else if (j.contains("video")) {
      const auto id = jsonl_field<std::uint64_t>(j, "node", line);
      if (id != nodes.size()) throw ParseError("node records out of order", line);
      node_in_range(id);
      nodes.push_back({jsonl_field<std::string>(j, "video", line),
                       jsonl_field<std::string>(j, "track", line),
                       jsonl_field<std::uint32_t>(j, "frame", line)});
    } else if (j.contains("parent")) {
      const auto id = node_in_range(jsonl_field<std::uint64_t>(j, "node", line));
      const auto p = jsonl_field<ClusterId>(j, "parent", line);
      if (p < 0) throw ParseError("parent id must be non-negative", line);
      parent_of[id] = p;
    } else {
      throw ParseError("unrecognised record", line);
    }
  });

  if (!have_header) throw ParseError("missing header record", 1);
  if (nodes.size() != n_nodes)
    throw ParseError("expected " + std::to_string(n_nodes) + " node records, found " +
                         std::to_string(nodes.size()),
                     0);
  detail::validate_clusters(nodes.size(), parent_of, clusters);
  for (const auto& e : edges)
    if (e.kind == EdgeKind::Intra && nodes[e.a].track != nodes[e.b].track)
      throw ValidationError("intra edge joins different tracks at node " + std::to_string(e.a),
                            e.a);
  return AffinityGraph(dim, std::move(nodes), std::move(parent_of), std::move(clusters),
                       std::move(edges));
}

}  // namespace transvis
