#pragma once

// Positive-pair generation. An inter edge (A, B) together with intra
// partners A' of A and B' of B yields (A, B) plus the transitive pairs
// (A', B), (A, B') and (A', B').

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "transvis/error.hpp"
#include "transvis/graph.hpp"
#include "transvis/rng.hpp"

namespace transvis {

enum class Relation : std::uint8_t {
  Inter,              // (A, B): same child cluster
  TransAprimeB,       // (A', B)
  TransABprime,       // (A, B')
  TransAprimeBprime,  // (A', B')
  Intra,              // (A, A'): same track
};

inline constexpr std::array<std::string_view, 5> kRelationNames = {
    "inter", "trans_a'b", "trans_ab'", "trans_a'b'", "intra"};

inline std::string_view to_string(Relation r) { return kRelationNames[static_cast<std::size_t>(r)]; }

inline Relation relation_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kRelationNames.size(); ++i)
    if (kRelationNames[i] == s) return static_cast<Relation>(i);
  throw ValidationError("unknown relation \"" + std::string(s) + "\"");
}

struct PositivePair {
  NodeId a = 0;
  NodeId b = 0;
  Relation relation = Relation::Inter;

  friend bool operator==(const PositivePair&, const PositivePair&) = default;
};

inline PositivePair make_positive_pair(NodeId u, NodeId v, Relation r) {
  return {std::min(u, v), std::max(u, v), r};
}

struct PairGenConfig {
  double intra_ratio = 2.0 / 9.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(intra_ratio >= 0.0 && intra_ratio < 1.0))
      throw ConfigError("pairs: intra_ratio must lie in [0, 1)");
  }
};

/// Base pairs of every inter edge, in edge order.
inline std::vector<PositivePair> inter_pairs(const AffinityGraph& graph) {
  std::vector<PositivePair> out;
  for (const auto& e : graph.edges())
    if (e.kind == EdgeKind::Inter) out.push_back({e.a, e.b, Relation::Inter});
  return out;
}

/// Base pairs followed by transitive pairs, each group in inter-edge order.
/// A pair reachable several ways is emitted once, with the first relation
/// that produced it; self pairs are skipped.
inline std::vector<PositivePair> transitive_pairs(const AffinityGraph& graph) {
  std::vector<PositivePair> out = inter_pairs(graph);
  std::set<std::pair<NodeId, NodeId>> seen;
  for (const auto& p : out) seen.emplace(p.a, p.b);

  auto emit = [&](NodeId u, NodeId v, Relation r) {
    if (u == v) return;
    const auto p = make_positive_pair(u, v, r);
    if (seen.emplace(p.a, p.b).second) out.push_back(p);
  };
  for (const auto& e : graph.edges()) {
    if (e.kind != EdgeKind::Inter) continue;
    const auto as = graph.intra_neighbors(e.a);
    const auto bs = graph.intra_neighbors(e.b);
    for (NodeId ap : as) emit(ap, e.b, Relation::TransAprimeB);
    for (NodeId bp : bs) emit(e.a, bp, Relation::TransABprime);
    for (NodeId ap : as)
      for (NodeId bp : bs) emit(ap, bp, Relation::TransAprimeBprime);
  }
  return out;
}

/// Uniform draws with replacement from the graph's intra edges.
inline std::vector<PositivePair> sample_intra_pairs(const AffinityGraph& graph,
                                                    std::size_t target_count,
                                                    std::uint64_t seed) {
  std::vector<PositivePair> intra;
  for (const auto& e : graph.edges())
    if (e.kind == EdgeKind::Intra) intra.push_back({e.a, e.b, Relation::Intra});
  if (target_count == 0) return {};
  if (intra.empty()) throw ConfigError("pairs: intra pairs requested but graph has no intra edges");
  Rng rng(seed);
  std::vector<PositivePair> out;
  out.reserve(target_count);
  for (std::size_t i = 0; i < target_count; ++i) out.push_back(intra[rng.uniform_index(intra.size())]);
  return out;
}

/// Intra count i with i / (t + i) as close to `ratio` as an integer allows.
inline std::size_t intra_target_count(std::size_t transitive_count, double ratio) {
  if (ratio <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(transitive_count) * ratio / (1.0 - ratio)));
}

/// Concatenates the transitive pairs with the first intra_target_count()
/// sampled intra pairs (all of them if fewer were supplied) and shuffles.
inline std::vector<PositivePair> assemble_pairs(const std::vector<PositivePair>& transitive,
                                                const std::vector<PositivePair>& intra_sampled,
                                                const PairGenConfig& config) {
  config.validate();
  const std::size_t want =
      std::min(intra_target_count(transitive.size(), config.intra_ratio), intra_sampled.size());
  std::vector<PositivePair> out = transitive;
  out.insert(out.end(), intra_sampled.begin(),
             intra_sampled.begin() + static_cast<std::ptrdiff_t>(want));
  Rng rng(config.seed);
  rng.shuffle(std::span<PositivePair>(out));
  return out;
}

/// Pair sources compared in the ablation experiment.
enum class SamplerMode : std::uint8_t { IntraOnly, InterOnly, Union, Transitive };

inline constexpr std::array<std::string_view, 4> kSamplerModeNames = {"intra_only", "inter_only",
                                                                      "union", "transitive"};

inline std::string_view to_string(SamplerMode m) {
  return kSamplerModeNames[static_cast<std::size_t>(m)];
}

inline SamplerMode sampler_mode_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kSamplerModeNames.size(); ++i)
    if (kSamplerModeNames[i] == s) return static_cast<SamplerMode>(i);
  throw ConfigError("unknown sampler mode \"" + std::string(s) + "\"");
}

/// Training pairs for one mode. Transitive and Union mix in intra pairs at
/// intra_ratio; InterOnly uses base inter pairs alone; IntraOnly draws as
/// many intra pairs as the transitive mode produces in total.
inline std::vector<PositivePair> make_pair_dataset(const AffinityGraph& graph, SamplerMode mode,
                                                   const PairGenConfig& config) {
  config.validate();
  auto mixed = [&](const std::vector<PositivePair>& base) {
    const std::size_t i = intra_target_count(base.size(), config.intra_ratio);
    return assemble_pairs(base, sample_intra_pairs(graph, i, config.seed + 1), config);
  };
  switch (mode) {
    case SamplerMode::Transitive:
      return mixed(transitive_pairs(graph));
    case SamplerMode::Union:
      return mixed(inter_pairs(graph));
    case SamplerMode::InterOnly: {
      PairGenConfig none = config;
      none.intra_ratio = 0.0;
      return assemble_pairs(inter_pairs(graph), {}, none);
    }
    case SamplerMode::IntraOnly: {
      const auto t = transitive_pairs(graph).size();
      const std::size_t total = t + intra_target_count(t, config.intra_ratio);
      PairGenConfig none = config;
      none.intra_ratio = 0.0;
      return assemble_pairs(sample_intra_pairs(graph, total, config.seed + 1), {}, none);
    }
  }
  return {};
}

// Pairs file: JSON-lines {"a","b","relation"}.

inline void save_pairs(const std::vector<PositivePair>& pairs, const std::filesystem::path& path) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["a"] = p.a;
    j["b"] = p.b;
    j["relation"] = to_string(p.relation);
    out += j.dump() + "\n";
  }
  detail::write_file(path, out);
}

inline std::vector<PositivePair> load_pairs(const std::filesystem::path& path) {
  std::vector<PositivePair> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    PositivePair p;
    p.a = jsonl_field<NodeId>(j, "a", line);
    p.b = jsonl_field<NodeId>(j, "b", line);
    if (p.a >= p.b) throw ParseError("pair must satisfy a < b", line);
    try {
      p.relation = relation_from_string(jsonl_field<std::string>(j, "relation", line));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line);
    }
    out.push_back(p);
  });
  return out;
}

}  // namespace transvis
