#pragma once

// Synthetic world with known categories, instances and views.
//
//   feature(c, i, v) = normalize(R_v (p_c + o_ci) + e_civ)
//
// p_c: category prototype, o_ci: instance offset, R_v: orthogonal view
// distortion (R_0 = I), e_civ: per-view noise. Views of one instance form a
// track with consecutive frame indices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "transvis/error.hpp"
#include "transvis/features_io.hpp"
#include "transvis/matrix.hpp"
#include "transvis/rng.hpp"

namespace transvis {

struct SynthConfig {
  std::size_t n_categories = 20;
  std::size_t instances_per_category = 10;
  std::size_t views_per_instance = 2;
  std::size_t d_in = 64;
  /// 1 gives mutually orthogonal prototypes; smaller values pull every
  /// prototype toward a shared direction.
  double category_separation = 1.0;
  /// Norm of the per-instance offset.
  double instance_noise = 1.0;
  /// Rotation angles of each view map scale with this (0 = identity, 1 =
  /// angles up to pi).
  double view_distortion = 0.6;
  /// Per-view noise norm as a fraction of instance_noise.
  double view_noise_scale = 0.25;
  std::uint64_t seed = 0;

  std::size_t node_count() const {
    return n_categories * instances_per_category * views_per_instance;
  }

  void validate() const {
    if (n_categories < 1 || instances_per_category < 1 || views_per_instance < 1 || d_in < 1)
      throw ConfigError("synth: counts must be >= 1");
    if (d_in < n_categories)
      throw ConfigError("synth: d_in=" + std::to_string(d_in) + " is smaller than the category count " +
                        std::to_string(n_categories));
    if (instance_noise < 0.0 || view_distortion < 0.0 || view_noise_scale < 0.0)
      throw ConfigError("synth: noise and distortion must be >= 0");
    if (category_separation < 0.0 || category_separation > 1.0)
      throw ConfigError("synth: category_separation must lie in [0, 1]");
  }
};

struct TruthRecord {
  std::uint32_t category = 0;
  std::uint32_t instance = 0;  // global instance index
  std::uint32_t view = 0;

  friend bool operator==(const TruthRecord&, const TruthRecord&) = default;
};

using GroundTruth = std::vector<TruthRecord>;

struct SynthData {
  FeatureStore features;
  NodeMeta meta;
  GroundTruth truth;
};

namespace detail {

inline std::vector<double> gaussian(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

inline void scale_to(std::vector<double>& v, double norm) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  if (s > 0.0)
    for (double& x : v) x *= norm / s;
}

/// Modified Gram-Schmidt; returns `count` orthonormal vectors of length d.
inline std::vector<std::vector<double>> random_orthonormal(Rng& rng, std::size_t count,
                                                           std::size_t d) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < count) {
    auto v = gaussian(rng, d);
    for (const auto& b : basis) {
      double p = 0.0;
      for (std::size_t t = 0; t < d; ++t) p += v[t] * b[t];
      for (std::size_t t = 0; t < d; ++t) v[t] -= p * b[t];
    }
    double s = 0.0;
    for (double x : v) s += x * x;
    if (s < 1e-20) continue;
    scale_to(v, 1.0);
    basis.push_back(std::move(v));
  }
  return basis;
}

/// R = Q diag(rot(theta_1), ..., rot(theta_{d/2}), [1]) Q^T with
/// theta_j = distortion * pi * u_j, u_j ~ U[0.5, 1], clamped to pi.
inline Matrix<double> view_rotation(Rng& rng, std::size_t d, double distortion) {
  const auto q = random_orthonormal(rng, d, d);  // rows are basis vectors
  Matrix<double> r(d, d, 0.0);
  for (std::size_t i = 0; i < d; ++i) r(i, i) = 1.0;
  for (std::size_t j = 0; j + 1 < d; j += 2) {
    const double theta = std::min(std::numbers::pi, distortion * std::numbers::pi * rng.uniform(0.5, 1.0));
    const double c = std::cos(theta), s = std::sin(theta);
    const auto& e1 = q[j];
    const auto& e2 = q[j + 1];
    // Within span{e1, e2}: e1 -> c e1 + s e2, e2 -> -s e1 + c e2.
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b)
        r(a, b) += (c - 1.0) * (e1[a] * e1[b] + e2[a] * e2[b]) + s * (e2[a] * e1[b] - e1[a] * e2[b]);
  }
  return r;
}

}  // namespace detail

/// Nodes are laid out category-major, then instance, then view.
inline SynthData generate(const SynthConfig& config) {
  config.validate();
  const std::size_t d = config.d_in;
  const std::size_t n_cat = config.n_categories;
  Rng rng(config.seed);

  // Prototypes: orthonormal directions mixed with a shared direction
  // orthogonal to all of them (absent when d == C).
  const auto basis = detail::random_orthonormal(rng, std::min(d, n_cat + 1), d);
  std::vector<std::vector<double>> protos(n_cat, std::vector<double>(d, 0.0));
  const double s = config.category_separation;
  for (std::size_t c = 0; c < n_cat; ++c) {
    for (std::size_t t = 0; t < d; ++t) {
      protos[c][t] = s * basis[c][t];
      if (basis.size() > n_cat) protos[c][t] += (1.0 - s) * basis[n_cat][t];
    }
    detail::scale_to(protos[c], 1.0);
  }

  std::vector<Matrix<double>> views;
  views.reserve(config.views_per_instance);
  for (std::size_t v = 0; v < config.views_per_instance; ++v) {
    if (v == 0 || config.view_distortion == 0.0) {
      Matrix<double> eye(d, d, 0.0);
      for (std::size_t i = 0; i < d; ++i) eye(i, i) = 1.0;
      views.push_back(std::move(eye));
      // Keep the random stream independent of distortion being zero.
      if (v != 0) detail::view_rotation(rng, d, 0.0);
    } else {
      views.push_back(detail::view_rotation(rng, d, config.view_distortion));
    }
  }

  const std::size_t n = config.node_count();
  Matrix<float> feats(n, d);
  SynthData out;
  out.meta.reserve(n);
  out.truth.reserve(n);
  std::size_t node = 0;
  char buf[48];
  for (std::size_t c = 0; c < n_cat; ++c) {
    for (std::size_t i = 0; i < config.instances_per_category; ++i) {
      const std::size_t inst = c * config.instances_per_category + i;
      auto offset = detail::gaussian(rng, d);
      detail::scale_to(offset, config.instance_noise);
      std::vector<double> base(d);
      for (std::size_t t = 0; t < d; ++t) base[t] = protos[c][t] + offset[t];
      std::snprintf(buf, sizeof buf, "video_%06zu", inst);
      const std::string video = buf;
      std::snprintf(buf, sizeof buf, "track_%06zu", inst);
      const std::string track = buf;
      for (std::size_t v = 0; v < config.views_per_instance; ++v, ++node) {
        auto noise = detail::gaussian(rng, d);
        detail::scale_to(noise, config.instance_noise * config.view_noise_scale);
        std::vector<double> x(d, 0.0);
        for (std::size_t a = 0; a < d; ++a) {
          double acc = noise[a];
          for (std::size_t b = 0; b < d; ++b) acc += views[v](a, b) * base[b];
          x[a] = acc;
        }
        detail::scale_to(x, 1.0);
        auto row = feats.row(node);
        for (std::size_t t = 0; t < d; ++t) row[t] = static_cast<float>(x[t]);
        out.meta.push_back({video, track, static_cast<std::uint32_t>(v)});
        out.truth.push_back({static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(inst),
                             static_cast<std::uint32_t>(v)});
      }
    }
  }
  out.features = FeatureStore(std::move(feats));
  return out;
}

// Ground-truth file: JSON-lines {"node","category","instance","view"}.

inline void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    nlohmann::ordered_json j;
    j["node"] = i;
    j["category"] = truth[i].category;
    j["instance"] = truth[i].instance;
    j["view"] = truth[i].view;
    out += j.dump() + "\n";
  }
  detail::write_file(path, out);
}

inline GroundTruth load_truth(const std::filesystem::path& path) {
  GroundTruth out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    if (jsonl_field<std::uint64_t>(j, "node", line) != out.size())
      throw ParseError("node records out of order", line);
    out.push_back({jsonl_field<std::uint32_t>(j, "category", line),
                   jsonl_field<std::uint32_t>(j, "instance", line),
                   jsonl_field<std::uint32_t>(j, "view", line)});
  });
  return out;
}

}  // namespace transvis
