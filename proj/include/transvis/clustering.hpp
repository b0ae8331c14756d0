#pragma once

// First clustering stage: spherical k-means over unit feature rows, then
// pruning of small clusters. Survivors are the parent clusters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "transvis/error.hpp"
#include "transvis/features_io.hpp"
#include "transvis/graph.hpp"
#include "transvis/matrix.hpp"
#include "transvis/parallel.hpp"
#include "transvis/rng.hpp"

namespace transvis {

struct KMeansConfig {
  std::size_t k = 50;
  std::size_t max_iters = 100;
  double tol = 1e-4;  // relative objective change
  std::size_t min_cluster_size = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (min_cluster_size < 1) throw ConfigError("kmeans: min_cluster_size must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("kmeans: tol must be > 0");
  }
};

/// An empty cluster re-seeded from the point farthest from its centroid.
struct ReseedEvent {
  std::size_t iteration = 0;
  std::size_t cluster = 0;
  NodeId node = 0;
};

struct KMeansResult {
  Matrix<double> centroids;           // k x d, unit rows
  std::vector<ClusterId> assignment;  // node -> cluster in [0, k)
  std::vector<double> objective;      // mean cosine distance after each assignment step
  std::vector<ReseedEvent> reseeds;
  bool converged = false;
};

namespace detail {

inline void normalize_in_place(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double norm = std::sqrt(s);
  if (norm > 0.0)
    for (double& x : v) x /= norm;
}

/// k-means++ seeding with cosine distance as the sampling weight. On unit
/// vectors squared Euclidean distance is twice the cosine distance, so this
/// is the usual D^2 rule.
inline Matrix<double> seed_centroids(const FeatureStore& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.size();
  Matrix<double> c(k, x.dim());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_index(n);
  for (std::size_t j = 0;; ++j) {
    auto row = c.row(j);
    std::copy(x.row(pick).begin(), x.row(pick).end(), row.begin());
    normalize_in_place(row);
    if (j + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], std::max(0.0, 1.0 - dot(x.row(i), std::span<const double>(row))));
      total += best[i];
    }
    if (total > 0.0) {
      double r = rng.uniform01() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (best[i] <= 0.0) continue;
        pick = i;  // last positive weight absorbs rounding leftovers
        if (r < best[i]) break;
        r -= best[i];
      }
    } else {
      pick = rng.uniform_index(n);
    }
  }
  return c;
}

}  // namespace detail

/// Lloyd iterations for spherical k-means. `store` rows must be unit norm.
/// Supplying `initial` (k x d) bypasses seeded initialization.
inline KMeansResult kmeans_fit(const FeatureStore& store, const KMeansConfig& config,
                               const std::optional<Matrix<double>>& initial = std::nullopt) {
  config.validate();
  const std::size_t n = store.size();
  const std::size_t d = store.dim();
  const std::size_t k = config.k;
  if (n < k)
    throw ConfigError("kmeans: n=" + std::to_string(n) + " is smaller than k=" +
                      std::to_string(k));

  KMeansResult res;
  if (initial) {
    if (initial->rows() != k || initial->cols() != d)
      throw ConfigError("kmeans: initial centroids must be k x d");
    res.centroids = *initial;
    for (std::size_t j = 0; j < k; ++j) detail::normalize_in_place(res.centroids.row(j));
  } else {
    Rng rng(config.seed);
    res.centroids = detail::seed_centroids(store, k, rng);
  }

  res.assignment.assign(n, kUnassigned);
  std::vector<double> dist(n, 0.0);

  auto assign = [&] {
    std::vector<std::uint8_t> changed(n, 0);
    parallel_for(n, config.workers, [&](std::size_t i) {
      const auto xi = store.row(i);
      double best = -std::numeric_limits<double>::infinity();
      ClusterId arg = 0;
      for (std::size_t j = 0; j < k; ++j) {
        const double s = dot(xi, std::span<const double>(res.centroids.row(j)));
        if (s > best) {
          best = s;
          arg = static_cast<ClusterId>(j);
        }
      }
      dist[i] = 1.0 - best;
      changed[i] = res.assignment[i] != arg;
      res.assignment[i] = arg;
    });
    double total = 0.0;
    for (double v : dist) total += v;
    res.objective.push_back(total / static_cast<double>(n));
    return std::count(changed.begin(), changed.end(), 1) > 0;
  };

  assign();
  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    // Centroid update: per-cluster sums in ascending node order.
    std::vector<std::vector<NodeId>> members(k);
    for (std::size_t i = 0; i < n; ++i)
      members[static_cast<std::size_t>(res.assignment[i])].push_back(static_cast<NodeId>(i));
    parallel_for(k, config.workers, [&](std::size_t j) {
      if (members[j].empty()) return;
      auto c = res.centroids.row(j);
      std::fill(c.begin(), c.end(), 0.0);
      for (NodeId m : members[j]) {
        const auto xm = store.row(m);
        for (std::size_t t = 0; t < d; ++t) c[t] += static_cast<double>(xm[t]);
      }
      detail::normalize_in_place(c);
    });
    for (std::size_t j = 0; j < k; ++j) {
      if (!members[j].empty()) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      auto c = res.centroids.row(j);
      const auto xf = store.row(far);
      std::copy(xf.begin(), xf.end(), c.begin());
      detail::normalize_in_place(c);
      dist[far] = 0.0;
      res.reseeds.push_back({iter, j, static_cast<NodeId>(far)});
    }

    const double before = res.objective.back();
    const bool changed = assign();
    const double after = res.objective.back();
    if (!changed) {
      res.converged = true;
      break;
    }
    const double scale = std::max(std::abs(before), std::numeric_limits<double>::min());
    if ((before - after) / scale < config.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

/// Drops clusters with fewer than `min_cluster_size` members and re-indexes
/// survivors densely in order of their original id.
inline ParentAssignment prune_clusters(const std::vector<ClusterId>& assignment,
                                       std::size_t min_cluster_size) {
  ClusterId max_id = kUnassigned;
  for (ClusterId c : assignment) max_id = std::max(max_id, c);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(max_id + 1), 0);
  for (ClusterId c : assignment)
    if (c >= 0) ++sizes[static_cast<std::size_t>(c)];
  std::vector<ClusterId> remap(sizes.size(), kUnassigned);
  ClusterId next = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    if (sizes[c] >= min_cluster_size && sizes[c] > 0) remap[c] = next++;
  ParentAssignment out(assignment.size(), kUnassigned);
  for (std::size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] >= 0) out[i] = remap[static_cast<std::size_t>(assignment[i])];
  return out;
}

inline std::size_t parent_count(const ParentAssignment& parent_of) {
  ClusterId m = kUnassigned;
  for (ClusterId c : parent_of) m = std::max(m, c);
  return static_cast<std::size_t>(m + 1);
}

// Assignments file: one {"node","parent"} record per assigned node.

inline void save_assignments(const ParentAssignment& parent_of, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < parent_of.size(); ++i) {
    if (parent_of[i] == kUnassigned) continue;
    nlohmann::ordered_json j;
    j["node"] = i;
    j["parent"] = parent_of[i];
    out += j.dump() + "\n";
  }
  detail::write_file(path, out);
}

/// Nodes absent from the file are unassigned.
inline ParentAssignment load_assignments(const std::filesystem::path& path, std::size_t n) {
  ParentAssignment out(n, kUnassigned);
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    const auto id = jsonl_field<std::uint64_t>(j, "node", line);
    if (id >= n) throw ParseError("node id " + std::to_string(id) + " out of range", line);
    const auto p = jsonl_field<ClusterId>(j, "parent", line);
    if (p < 0) throw ParseError("parent id must be non-negative", line);
    out[id] = p;
  });
  return out;
}

inline Matrix<float> to_float(const Matrix<double>& m) {
  Matrix<float> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.data().size(); ++i)
    out.data()[i] = static_cast<float>(m.data()[i]);
  return out;
}

}  // namespace transvis
