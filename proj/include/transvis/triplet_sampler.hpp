#pragma once

// Mini-batch triplet stream. Each pair in a batch gets a negative drawn
// uniformly from the other pairs' nodes in the same batch whose parent
// cluster differs from the anchor's.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "transvis/error.hpp"
#include "transvis/graph.hpp"
#include "transvis/rng.hpp"
#include "transvis/transitivity.hpp"

namespace transvis {

struct Triplet {
  NodeId anchor = 0;
  NodeId positive = 0;
  NodeId negative = 0;
  Relation relation = Relation::Inter;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct BatchConfig {
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  /// Epoch reshuffles allowed before an infeasible batch plan is an error.
  std::size_t max_retries = 100;

  void validate() const {
    if (batch_size < 2) throw ConfigError("triplets: batch_size must be >= 2");
  }
};

/// Endless, deterministic batch generator. One epoch visits every pair
/// exactly once, in a fresh order and with a fresh anchor/positive
/// orientation. A trailing batch of a single pair joins the batch before it.
///
/// Anchors without a parent (pruned nodes) draw their negative from the
/// global pool of assigned nodes instead of the batch.
class TripletSampler {
 public:
  TripletSampler(std::vector<PositivePair> pairs, ParentAssignment parent_of, BatchConfig config)
      : pairs_(std::move(pairs)), parent_of_(std::move(parent_of)), config_(config),
        rng_(config.seed) {
    config_.validate();
    if (pairs_.size() < 2) throw ConfigError("triplets: need at least 2 pairs");
    std::set<ClusterId> parents;
    for (const auto& p : pairs_) {
      if (p.a >= parent_of_.size() || p.b >= parent_of_.size())
        throw ValidationError("pair references unknown node", std::max(p.a, p.b));
      if (parent_of_[p.a] >= 0) parents.insert(parent_of_[p.a]);
      if (parent_of_[p.b] >= 0) parents.insert(parent_of_[p.b]);
    }
    if (parents.size() < 2)
      throw ConfigError("triplets: pairs must span at least 2 parent clusters");
    for (std::size_t i = 0; i < parent_of_.size(); ++i)
      if (parent_of_[i] >= 0) pool_.push_back(static_cast<NodeId>(i));
  }

  std::vector<Triplet> next_batch() {
    if (cursor_ == batches_.size()) plan_epoch();
    const auto [begin, end] = batches_[cursor_++];
    std::vector<Triplet> out;
    out.reserve(end - begin);
    std::vector<NodeId> cand;
    for (std::size_t s = begin; s < end; ++s) {
      const auto [anchor, positive, rel] = oriented(s);
      cand.clear();
      collect_candidates(begin, end, s, cand);
      NodeId neg;
      if (parent_of_[anchor] >= 0) {
        neg = cand[rng_.uniform_index(cand.size())];
      } else {
        neg = draw_from_pool(anchor, positive);
      }
      out.push_back({anchor, positive, neg, rel});
    }
    ++emitted_batches_;
    return out;
  }

  std::size_t epoch() const noexcept { return epoch_; }
  /// Epoch plans rejected because some batch had no legal negative.
  std::size_t resamples() const noexcept { return resamples_; }
  std::size_t batches_per_epoch() const noexcept { return batches_.size(); }
  std::size_t emitted_batches() const noexcept { return emitted_batches_; }

 private:
  struct Oriented {
    NodeId anchor, positive;
    Relation relation;
  };

  Oriented oriented(std::size_t slot) const {
    const auto& p = pairs_[order_[slot]];
    return flip_[slot] ? Oriented{p.b, p.a, p.relation} : Oriented{p.a, p.b, p.relation};
  }

  // Nodes of other pairs in [begin, end) with a parent different from the
  // anchor's. One entry per slot, so a node shared by two pairs counts twice.
  void collect_candidates(std::size_t begin, std::size_t end, std::size_t self,
                          std::vector<NodeId>& cand) const {
    const auto [anchor, positive, rel] = oriented(self);
    const ClusterId pa = parent_of_[anchor];
    for (std::size_t t = begin; t < end; ++t) {
      if (t == self) continue;
      const auto& q = pairs_[order_[t]];
      for (NodeId v : {q.a, q.b}) {
        const ClusterId pv = parent_of_[v];
        if (pv < 0 || pv == pa || v == anchor || v == positive) continue;
        cand.push_back(v);
      }
    }
  }

  bool pool_has_negative(NodeId anchor, NodeId positive) const {
    const ClusterId pp = parent_of_[positive];
    return std::any_of(pool_.begin(), pool_.end(), [&](NodeId v) {
      return v != anchor && v != positive && (pp < 0 || parent_of_[v] != pp);
    });
  }

  NodeId draw_from_pool(NodeId anchor, NodeId positive) {
    const ClusterId pp = parent_of_[positive];
    auto ok = [&](NodeId v) {
      return v != anchor && v != positive && (pp < 0 || parent_of_[v] != pp);
    };
    for (int tries = 0; tries < 64; ++tries) {
      const NodeId v = pool_[rng_.uniform_index(pool_.size())];
      if (ok(v)) return v;
    }
    std::vector<NodeId> legal;
    std::copy_if(pool_.begin(), pool_.end(), std::back_inserter(legal), ok);
    return legal[rng_.uniform_index(legal.size())];
  }

  bool feasible(std::size_t begin, std::size_t end) const {
    std::vector<NodeId> cand;
    for (std::size_t s = begin; s < end; ++s) {
      const auto [anchor, positive, rel] = oriented(s);
      if (parent_of_[anchor] < 0) {
        if (!pool_has_negative(anchor, positive)) return false;
        continue;
      }
      cand.clear();
      collect_candidates(begin, end, s, cand);
      if (cand.empty()) return false;
    }
    return true;
  }

  void plan_epoch() {
    const std::size_t n = pairs_.size();
    const std::size_t bs = config_.batch_size;
    for (std::size_t attempt = 0;; ++attempt) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      rng_.shuffle(std::span<std::size_t>(order_));
      flip_.resize(n);
      for (std::size_t i = 0; i < n; ++i) flip_[i] = rng_.coin();

      batches_.clear();
      for (std::size_t b = 0; b < n; b += bs) batches_.emplace_back(b, std::min(n, b + bs));
      if (batches_.size() > 1 && batches_.back().second - batches_.back().first < 2) {
        batches_[batches_.size() - 2].second = n;
        batches_.pop_back();
      }
      const bool ok = std::all_of(batches_.begin(), batches_.end(),
                                  [&](const auto& r) { return feasible(r.first, r.second); });
      if (ok) break;
      ++resamples_;
      if (attempt + 1 >= config_.max_retries)
        throw ConfigError("triplets: no feasible batch composition after " +
                          std::to_string(config_.max_retries) + " reshuffles");
    }
    cursor_ = 0;
    ++epoch_;
  }

  std::vector<PositivePair> pairs_;
  ParentAssignment parent_of_;
  BatchConfig config_;
  Rng rng_;
  std::vector<NodeId> pool_;
  std::vector<std::size_t> order_;
  std::vector<bool> flip_;
  std::vector<std::pair<std::size_t, std::size_t>> batches_;
  std::size_t cursor_ = 0;
  std::size_t epoch_ = 0;
  std::size_t resamples_ = 0;
  std::size_t emitted_batches_ = 0;
};

// Triplets file: JSON-lines {"anchor","positive","negative","relation"}.

inline void save_triplets(const std::vector<Triplet>& triplets, const std::filesystem::path& path) {
  std::string out;
  for (const auto& t : triplets) {
    nlohmann::ordered_json j;
    j["anchor"] = t.anchor;
    j["positive"] = t.positive;
    j["negative"] = t.negative;
    j["relation"] = to_string(t.relation);
    out += j.dump() + "\n";
  }
  detail::write_file(path, out);
}

inline std::vector<Triplet> load_triplets(const std::filesystem::path& path) {
  std::vector<Triplet> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    Triplet t;
    t.anchor = jsonl_field<NodeId>(j, "anchor", line);
    t.positive = jsonl_field<NodeId>(j, "positive", line);
    t.negative = jsonl_field<NodeId>(j, "negative", line);
    try {
      t.relation = relation_from_string(jsonl_field<std::string>(j, "relation", line));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line);
    }
    out.push_back(t);
  });
  return out;
}

}  // namespace transvis
