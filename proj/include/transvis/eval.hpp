#pragma once

// Graph and embedding quality: child-cluster purity, cross-view retrieval
// precision@k, and the quadruple ordering rate D(A,A') < D(A,B').

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "transvis/error.hpp"
#include "transvis/graph.hpp"
#include "transvis/matrix.hpp"
#include "transvis/metric_learning.hpp"
#include "transvis/parallel.hpp"
#include "transvis/rng.hpp"
#include "transvis/synth.hpp"

namespace transvis {

struct PurityReport {
  double strict = 0.0;    // clusters whose members all share one category
  double majority = 0.0;  // mean fraction held by the most common category
  std::size_t clusters = 0;
};

inline PurityReport purity(const std::vector<ChildCluster>& clusters, const GroundTruth& truth) {
  PurityReport r;
  r.clusters = clusters.size();
  if (clusters.empty()) return r;
  for (const auto& c : clusters) {
    std::map<std::uint32_t, std::size_t> counts;
    for (NodeId m : c.members) {
      if (m >= truth.size())
        throw ValidationError("purity: no ground truth for node " + std::to_string(m), m);
      ++counts[truth[m].category];
    }
    std::size_t top = 0;
    for (const auto& [cat, n] : counts) top = std::max(top, n);
    r.strict += counts.size() == 1 ? 1.0 : 0.0;
    r.majority += static_cast<double>(top) / static_cast<double>(c.members.size());
  }
  r.strict /= static_cast<double>(clusters.size());
  r.majority /= static_cast<double>(clusters.size());
  return r;
}

enum class RetrievalProtocol : std::uint8_t {
  All,                     // gallery: every other node
  CrossView,               // gallery: nodes with a different view id
  CrossViewCrossInstance,  // ... and a different instance
};

inline bool in_gallery(RetrievalProtocol protocol, const TruthRecord& q, const TruthRecord& g) {
  switch (protocol) {
    case RetrievalProtocol::All:
      return true;
    case RetrievalProtocol::CrossView:
      return g.view != q.view;
    case RetrievalProtocol::CrossViewCrossInstance:
      return g.view != q.view && g.instance != q.instance;
  }
  return false;
}

/// Mean over all queries of the fraction of the k nearest gallery items (by
/// cosine distance, ties to the smaller id) sharing the query's category.
/// Every query needs at least k same-category gallery items.
template <class T>
double retrieval_precision(const Matrix<T>& embeddings, const GroundTruth& truth, std::size_t k,
                           RetrievalProtocol protocol, std::size_t workers = 1) {
  const std::size_t n = embeddings.rows();
  if (truth.size() != n) throw ValidationError("retrieval: ground truth does not cover embeddings");
  if (k == 0) throw ConfigError("retrieval: k must be >= 1");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(squared_norm(embeddings.row(i)));
    if (norms[i] < kNormFloor)
      throw ValidationError("retrieval: zero embedding at node " + std::to_string(i), i);
  }
  std::vector<double> hits(n, 0.0);
  std::vector<std::uint8_t> infeasible(n, 0);
  parallel_for(n, workers, [&](std::size_t q) {
    std::vector<std::pair<double, NodeId>> cand;
    std::size_t same = 0;
    for (std::size_t g = 0; g < n; ++g) {
      if (g == q || !in_gallery(protocol, truth[q], truth[g])) continue;
      same += truth[g].category == truth[q].category;
      const double d = 1.0 - dot(embeddings.row(q), embeddings.row(g)) / (norms[q] * norms[g]);
      cand.emplace_back(d, static_cast<NodeId>(g));
    }
    if (same < k) {
      infeasible[q] = 1;
      return;
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    std::size_t h = 0;
    for (std::size_t t = 0; t < k; ++t) h += truth[cand[t].second].category == truth[q].category;
    hits[q] = static_cast<double>(h) / static_cast<double>(k);
  });
  for (std::size_t q = 0; q < n; ++q)
    if (infeasible[q])
      throw ConfigError("retrieval: query " + std::to_string(q) + " has fewer than k=" +
                        std::to_string(k) + " same-category gallery items");
  double total = 0.0;
  for (double h : hits) total += h;
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

/// (A, A', B, B'): inter edge (A, B), A' an intra partner of A, B' of B.
struct Quadruple {
  NodeId a, a_prime, b, b_prime;
};

/// All quadruples, taking each inter edge in both orientations.
inline std::vector<Quadruple> enumerate_quadruples(const AffinityGraph& graph) {
  std::vector<Quadruple> out;
  for (const auto& e : graph.edges()) {
    if (e.kind != EdgeKind::Inter) continue;
    for (const auto& [a, b] : {std::pair{e.a, e.b}, std::pair{e.b, e.a}})
      for (NodeId ap : graph.intra_neighbors(a))
        for (NodeId bp : graph.intra_neighbors(b))
          if (ap != b && bp != a && ap != bp) out.push_back({a, ap, b, bp});
  }
  return out;
}

/// Fraction of `n_samples` quadruples (drawn uniformly with replacement)
/// with D(A, A') < D(A, B').
template <class T>
double quadruple_ordering_rate(const Matrix<T>& embeddings, const AffinityGraph& graph,
                               std::size_t n_samples, std::uint64_t seed) {
  const auto quads = enumerate_quadruples(graph);
  if (quads.empty()) throw ConfigError("ordering: graph has no quadruples");
  if (n_samples == 0) throw ConfigError("ordering: n_samples must be >= 1");
  Rng rng(seed);
  std::size_t ok = 0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto& q = quads[rng.uniform_index(quads.size())];
    const double same = cosine_distance(embeddings.row(q.a), embeddings.row(q.a_prime));
    const double cross = cosine_distance(embeddings.row(q.a), embeddings.row(q.b_prime));
    ok += same < cross;
  }
  return static_cast<double>(ok) / static_cast<double>(n_samples);
}

/// Results for one sampler mode in the ablation comparison.
struct ModeResult {
  std::string mode;
  std::size_t pairs = 0;
  double precision = 0.0;
  double ordering_rate = 0.0;
  double final_loss = 0.0;
};

struct EvalReport {
  PurityReport purity;
  std::size_t k = 5;
  double raw_precision = 0.0;        // raw input features
  double untrained_precision = 0.0;  // initial model
  double trained_precision = 0.0;
  double untrained_ordering_rate = 0.0;
  double trained_ordering_rate = 0.0;
  std::vector<ModeResult> modes;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["child_cluster_purity"] = purity.strict;
    j["child_cluster_majority_purity"] = purity.majority;
    j["child_clusters"] = purity.clusters;
    j["k"] = k;
    nlohmann::ordered_json rp;
    rp["raw_features"] = raw_precision;
    rp["untrained"] = untrained_precision;
    rp["trained"] = trained_precision;
    j["retrieval_precision_at_k"] = rp;
    nlohmann::ordered_json qo;
    qo["untrained"] = untrained_ordering_rate;
    qo["trained"] = trained_ordering_rate;
    j["quadruple_ordering_rate"] = qo;
    auto modes_json = nlohmann::ordered_json::array();
    for (const auto& m : modes) {
      nlohmann::ordered_json mj;
      mj["mode"] = m.mode;
      mj["pairs"] = m.pairs;
      mj["precision_at_k"] = m.precision;
      mj["quadruple_ordering_rate"] = m.ordering_rate;
      mj["final_loss"] = m.final_loss;
      modes_json.push_back(mj);
    }
    j["modes"] = modes_json;
    return j;
  }
};

inline void save_report(const EvalReport& report, const std::filesystem::path& json_path,
                        const std::filesystem::path& csv_path) {
  detail::write_file(json_path, report.to_json().dump(2) + "\n");
  std::string csv = "mode,pairs,precision_at_k,quadruple_ordering_rate,final_loss\n";
  for (const auto& m : report.modes)
    csv += m.mode + "," + std::to_string(m.pairs) + "," + format_double(m.precision) + "," +
           format_double(m.ordering_rate) + "," + format_double(m.final_loss) + "\n";
  detail::write_file(csv_path, csv);
}

}  // namespace transvis
