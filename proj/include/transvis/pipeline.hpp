#pragma once

// End-to-end orchestration: configuration (presets, JSON file, overrides),
// per-stage seeds, and the stage runners behind the CLI subcommands.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "transvis/clustering.hpp"
#include "transvis/error.hpp"
#include "transvis/eval.hpp"
#include "transvis/features_io.hpp"
#include "transvis/graph.hpp"
#include "transvis/metric_learning.hpp"
#include "transvis/neighbors.hpp"
#include "transvis/rng.hpp"
#include "transvis/synth.hpp"
#include "transvis/transitivity.hpp"
#include "transvis/triplet_sampler.hpp"

namespace transvis {

inline constexpr const char* kVersion = "1.0.0";

struct ModelConfig {
  Architecture architecture = Architecture::Linear;
  std::size_t hidden = 64;
  std::size_t d_out = 1024;
};

struct EvalConfig {
  std::size_t k = 5;
  std::size_t ordering_samples = 10000;
  RetrievalProtocol protocol = RetrievalProtocol::CrossViewCrossInstance;
  bool compare_modes = true;
};

struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  SynthConfig synth;
  KMeansConfig kmeans;
  NeighborConfig neighbors;
  PairGenConfig pairs;
  SamplerMode mode = SamplerMode::Transitive;
  BatchConfig batch;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  /// Propagates the master seed (fixed offsets) and worker count into every
  /// stage config.
  void finalize() {
    synth.seed = stage_seed(seed, seed_offset::kSynth);
    kmeans.seed = stage_seed(seed, seed_offset::kKMeans);
    pairs.seed = stage_seed(seed, seed_offset::kPairs);
    batch.seed = stage_seed(seed, seed_offset::kTriplets);
    train.seed = stage_seed(seed, seed_offset::kModelInit);
    train.batch_size = batch.batch_size;
    kmeans.workers = neighbors.workers = train.workers = workers;
  }

  std::uint64_t eval_seed() const { return stage_seed(seed, seed_offset::kEval); }
};

/// Paper-scale defaults: K=5000, min cluster size 100, k=10, g=4, m=0.5,
/// lr=0.001, batch 100, 1024-d output.
inline PipelineConfig paper_preset() {
  PipelineConfig c;
  c.preset = "paper";
  c.kmeans.k = 5000;
  c.kmeans.min_cluster_size = 100;
  c.neighbors.k = 10;
  c.neighbors.g = 4;
  c.train.margin = 0.5;
  c.train.learning_rate = 0.001;
  c.batch.batch_size = 100;
  c.model.d_out = 1024;
  c.train.iterations = 200000;
  c.finalize();
  return c;
}

/// Desk-scale defaults: synthetic 20 categories x 10 instances x 2 views in
/// 64 dimensions, counts scaled down to match.
inline PipelineConfig desk_preset() {
  PipelineConfig c;
  c.preset = "desk";
  c.synth = SynthConfig{};
  c.kmeans.k = 20;
  c.kmeans.min_cluster_size = 5;
  c.neighbors.k = 10;
  c.neighbors.g = 4;
  c.batch.batch_size = 100;
  c.model.architecture = Architecture::Linear;
  c.model.d_out = 32;
  c.train.margin = 0.5;
  c.train.learning_rate = 0.5;
  c.train.iterations = 600;
  c.finalize();
  return c;
}

inline PipelineConfig preset_by_name(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset \"" + name + "\"");
}

inline std::string_view to_string(RetrievalProtocol p) {
  switch (p) {
    case RetrievalProtocol::All:
      return "all";
    case RetrievalProtocol::CrossView:
      return "cross_view";
    case RetrievalProtocol::CrossViewCrossInstance:
      return "cross_view_cross_instance";
  }
  return "";
}

inline RetrievalProtocol protocol_from_string(std::string_view s) {
  if (s == "all") return RetrievalProtocol::All;
  if (s == "cross_view") return RetrievalProtocol::CrossView;
  if (s == "cross_view_cross_instance") return RetrievalProtocol::CrossViewCrossInstance;
  throw ConfigError("unknown retrieval protocol \"" + std::string(s) + "\"");
}

inline nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["synth"] = {{"n_categories", c.synth.n_categories},
                {"instances_per_category", c.synth.instances_per_category},
                {"views_per_instance", c.synth.views_per_instance},
                {"d_in", c.synth.d_in},
                {"category_separation", c.synth.category_separation},
                {"instance_noise", c.synth.instance_noise},
                {"view_distortion", c.synth.view_distortion},
                {"view_noise_scale", c.synth.view_noise_scale}};
  j["kmeans"] = {{"k", c.kmeans.k},
                 {"max_iters", c.kmeans.max_iters},
                 {"tol", c.kmeans.tol},
                 {"min_cluster_size", c.kmeans.min_cluster_size}};
  j["neighbors"] = {{"k", c.neighbors.k},
                    {"g", c.neighbors.g},
                    {"max_memberships", c.neighbors.max_memberships}};
  j["pairs"] = {{"intra_ratio", c.pairs.intra_ratio}, {"mode", std::string(to_string(c.mode))}};
  j["batch"] = {{"batch_size", c.batch.batch_size}, {"max_retries", c.batch.max_retries}};
  j["model"] = {{"architecture", std::string(to_string(c.model.architecture))},
                {"hidden", c.model.hidden},
                {"d_out", c.model.d_out}};
  j["train"] = {{"margin", c.train.margin},
                {"learning_rate", c.train.learning_rate},
                {"iterations", c.train.iterations}};
  j["eval"] = {{"k", c.eval.k},
               {"ordering_samples", c.eval.ordering_samples},
               {"protocol", std::string(to_string(c.eval.protocol))},
               {"compare_modes", c.eval.compare_modes}};
  return j;
}

namespace detail {

template <class T>
void read_key(const nlohmann::json& obj, const char* section, const char* key, T& dst) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_unsigned())
        throw ConfigError(std::string("config: ") + section + "." + key +
                          " must be a non-negative integer");
    }
    dst = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + section + "." + key + ": " + e.what());
  }
}

inline void check_keys(const nlohmann::json& obj, const char* section,
                       std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(std::string("config: ") + section + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(std::string("config: unknown key ") + section + "." + k);
  }
}

}  // namespace detail

/// Overlays the keys present in `j` onto `c`. Unknown keys are errors.
inline void apply_config_json(PipelineConfig& c, const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read_key;
  check_keys(j, "<root>",
             {"preset", "seed", "workers", "synth", "kmeans", "neighbors", "pairs", "batch", "model",
              "train", "eval"});
  read_key(j, "", "seed", c.seed);
  read_key(j, "", "workers", c.workers);
  if (j.contains("synth")) {
    const auto& s = j["synth"];
    check_keys(s, "synth",
               {"n_categories", "instances_per_category", "views_per_instance", "d_in",
                "category_separation", "instance_noise", "view_distortion", "view_noise_scale"});
    read_key(s, "synth", "n_categories", c.synth.n_categories);
    read_key(s, "synth", "instances_per_category", c.synth.instances_per_category);
    read_key(s, "synth", "views_per_instance", c.synth.views_per_instance);
    read_key(s, "synth", "d_in", c.synth.d_in);
    read_key(s, "synth", "category_separation", c.synth.category_separation);
    read_key(s, "synth", "instance_noise", c.synth.instance_noise);
    read_key(s, "synth", "view_distortion", c.synth.view_distortion);
    read_key(s, "synth", "view_noise_scale", c.synth.view_noise_scale);
  }
  if (j.contains("kmeans")) {
    const auto& s = j["kmeans"];
    check_keys(s, "kmeans", {"k", "max_iters", "tol", "min_cluster_size"});
    read_key(s, "kmeans", "k", c.kmeans.k);
    read_key(s, "kmeans", "max_iters", c.kmeans.max_iters);
    read_key(s, "kmeans", "tol", c.kmeans.tol);
    read_key(s, "kmeans", "min_cluster_size", c.kmeans.min_cluster_size);
  }
  if (j.contains("neighbors")) {
    const auto& s = j["neighbors"];
    check_keys(s, "neighbors", {"k", "g", "max_memberships"});
    read_key(s, "neighbors", "k", c.neighbors.k);
    read_key(s, "neighbors", "g", c.neighbors.g);
    read_key(s, "neighbors", "max_memberships", c.neighbors.max_memberships);
  }
  if (j.contains("pairs")) {
    const auto& s = j["pairs"];
    check_keys(s, "pairs", {"intra_ratio", "mode"});
    read_key(s, "pairs", "intra_ratio", c.pairs.intra_ratio);
    std::string mode;
    read_key(s, "pairs", "mode", mode);
    if (!mode.empty()) c.mode = sampler_mode_from_string(mode);
  }
  if (j.contains("batch")) {
    const auto& s = j["batch"];
    check_keys(s, "batch", {"batch_size", "max_retries"});
    read_key(s, "batch", "batch_size", c.batch.batch_size);
    read_key(s, "batch", "max_retries", c.batch.max_retries);
  }
  if (j.contains("model")) {
    const auto& s = j["model"];
    check_keys(s, "model", {"architecture", "hidden", "d_out"});
    std::string arch;
    read_key(s, "model", "architecture", arch);
    if (!arch.empty()) c.model.architecture = architecture_from_string(arch);
    read_key(s, "model", "hidden", c.model.hidden);
    read_key(s, "model", "d_out", c.model.d_out);
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    check_keys(s, "train", {"margin", "learning_rate", "iterations"});
    read_key(s, "train", "margin", c.train.margin);
    read_key(s, "train", "learning_rate", c.train.learning_rate);
    read_key(s, "train", "iterations", c.train.iterations);
  }
  if (j.contains("eval")) {
    const auto& s = j["eval"];
    check_keys(s, "eval", {"k", "ordering_samples", "protocol", "compare_modes"});
    read_key(s, "eval", "k", c.eval.k);
    read_key(s, "eval", "ordering_samples", c.eval.ordering_samples);
    std::string protocol;
    read_key(s, "eval", "protocol", protocol);
    if (!protocol.empty()) c.eval.protocol = protocol_from_string(protocol);
    read_key(s, "eval", "compare_modes", c.eval.compare_modes);
  }
}

/// Preset named in the file (or `fallback_preset`), overlaid with the file.
inline PipelineConfig load_config(const std::filesystem::path& path,
                                  const std::string& fallback_preset = "desk") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  PipelineConfig c = preset_by_name(j.value("preset", fallback_preset));
  apply_config_json(c, j);
  c.finalize();
  return c;
}

/// FNV-1a over the canonical config dump.
inline std::uint64_t config_hash(const PipelineConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// In-memory stages

struct ClusterOutput {
  KMeansResult kmeans;
  ParentAssignment parents;
};

inline ClusterOutput run_clustering(const FeatureStore& unit, const PipelineConfig& c) {
  ClusterOutput out;
  out.kmeans = kmeans_fit(unit, c.kmeans);
  out.parents = prune_clusters(out.kmeans.assignment, c.kmeans.min_cluster_size);
  return out;
}

inline AffinityGraph run_graph(const FeatureStore& unit, const NodeMeta& meta,
                               const ParentAssignment& parents, const PipelineConfig& c) {
  if (meta.size() != unit.size())
    throw ValidationError("metadata has " + std::to_string(meta.size()) + " records for " +
                          std::to_string(unit.size()) + " feature rows");
  c.neighbors.validate();
  const auto knn = knn_within_cluster(unit, parents, c.neighbors);
  const auto mutual = mutual_graph(knn.lists);
  auto children = find_child_clusters(mutual, c.neighbors.g, parents, c.neighbors.max_memberships);
  return build_graph(static_cast<std::uint32_t>(unit.dim()), meta, parents, std::move(children),
                     tracks_from_meta(meta));
}

inline EmbeddingModel<float> initial_model(const PipelineConfig& c, std::size_t d_in) {
  return EmbeddingModel<float>::xavier(c.model.architecture, d_in, c.model.hidden, c.model.d_out,
                                       c.train.seed);
}

inline TrainResult<float> run_training(const FeatureStore& unit, const AffinityGraph& graph,
                                       std::vector<PositivePair> pairs, const PipelineConfig& c) {
  TripletSampler sampler(std::move(pairs), graph.parent_of(), c.batch);
  return train(initial_model(c, unit.dim()), unit, sampler, c.train);
}

/// Trains one model per sampler mode from the same initial weights and
/// scores it with precision@k under the configured protocol.
inline std::vector<ModeResult> compare_modes(const FeatureStore& unit, const AffinityGraph& graph,
                                             const GroundTruth& truth, const PipelineConfig& c) {
  std::vector<ModeResult> out;
  for (SamplerMode mode : {SamplerMode::IntraOnly, SamplerMode::InterOnly, SamplerMode::Union,
                           SamplerMode::Transitive}) {
    auto pairs = make_pair_dataset(graph, mode, c.pairs);
    ModeResult r;
    r.mode = std::string(to_string(mode));
    r.pairs = pairs.size();
    const auto trained = run_training(unit, graph, std::move(pairs), c);
    const auto emb = embed_all(trained.model, unit, c.workers);
    r.precision = retrieval_precision(emb, truth, c.eval.k, c.eval.protocol, c.workers);
    r.ordering_rate = quadruple_ordering_rate(emb, graph, c.eval.ordering_samples, c.eval_seed());
    r.final_loss = trained.trace.empty() ? 0.0 : trained.trace.back().mean_loss;
    out.push_back(r);
  }
  return out;
}

inline EvalReport run_eval(const FeatureStore& unit, const AffinityGraph& graph,
                           const GroundTruth& truth, const EmbeddingModel<float>& trained,
                           const PipelineConfig& c) {
  EvalReport r;
  r.k = c.eval.k;
  r.purity = purity(graph.child_clusters(), truth);
  r.raw_precision = retrieval_precision(unit.matrix(), truth, c.eval.k, c.eval.protocol, c.workers);
  const auto untrained = embed_all(initial_model(c, unit.dim()), unit, c.workers);
  const auto emb = embed_all(trained, unit, c.workers);
  r.untrained_precision = retrieval_precision(untrained, truth, c.eval.k, c.eval.protocol, c.workers);
  r.trained_precision = retrieval_precision(emb, truth, c.eval.k, c.eval.protocol, c.workers);
  const bool has_quads = !enumerate_quadruples(graph).empty();
  if (has_quads) {
    r.untrained_ordering_rate =
        quadruple_ordering_rate(untrained, graph, c.eval.ordering_samples, c.eval_seed());
    r.trained_ordering_rate = quadruple_ordering_rate(emb, graph, c.eval.ordering_samples, c.eval_seed());
  }
  if (c.eval.compare_modes) r.modes = compare_modes(unit, graph, truth, c);
  return r;
}

// ---------------------------------------------------------------------------
// File-backed stages. Every artifact lives in one output directory.

namespace artifact {
inline constexpr const char* kFeatures = "features.tivg";
inline constexpr const char* kMeta = "meta.jsonl";
inline constexpr const char* kTruth = "truth.jsonl";
inline constexpr const char* kCentroids = "centroids.tivg";
inline constexpr const char* kAssignments = "assignments.jsonl";
inline constexpr const char* kKMeansTrace = "kmeans_trace.csv";
inline constexpr const char* kGraph = "graph.jsonl";
inline constexpr const char* kPairs = "pairs.jsonl";
inline constexpr const char* kTriplets = "triplets.jsonl";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kLoss = "loss.csv";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kModes = "modes.csv";
}  // namespace artifact

/// Run metadata; timings make these the only non-reproducible files.
inline std::string manifest_name(const std::string& stage) { return "manifest_" + stage + ".json"; }

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"synth",   "cluster", "graph", "pairs",
                                                 "triplets", "train",  "eval"};
  return names;
}

class StageRunner {
 public:
  StageRunner(PipelineConfig config, std::filesystem::path out)
      : c_(std::move(config)), out_(std::move(out)) {
    c_.finalize();
  }

  const PipelineConfig& config() const noexcept { return c_; }

  /// Runs one stage by name; "pipeline" runs them all in order.
  void run(const std::string& name) {
    if (name == "pipeline") {
      for (const auto& s : stage_names()) run(s);
      return;
    }
    std::filesystem::create_directories(out_);
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::string> produced;
    if (name == "synth") produced = synth();
    else if (name == "cluster") produced = cluster();
    else if (name == "graph") produced = graph();
    else if (name == "pairs") produced = pairs();
    else if (name == "triplets") produced = triplets();
    else if (name == "train") produced = train_stage();
    else if (name == "eval") produced = eval();
    else throw ConfigError("unknown subcommand \"" + name + "\"");
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    write_manifest(name, produced, ms);
  }

 private:
  std::filesystem::path path(const char* name) const { return out_ / name; }

  void require(const char* name) const {
    if (!std::filesystem::exists(path(name)))
      throw ValidationError("missing input " + path(name).string());
  }

  FeatureStore unit_features() const {
    require(artifact::kFeatures);
    return l2_normalize(load_features(path(artifact::kFeatures)));
  }

  AffinityGraph load_graph_artifact() const {
    require(artifact::kGraph);
    return load_graph(path(artifact::kGraph));
  }

  std::vector<std::string> synth() {
    const auto data = generate(c_.synth);
    save_features(data.features, path(artifact::kFeatures));
    save_meta(data.meta, path(artifact::kMeta));
    save_truth(data.truth, path(artifact::kTruth));
    return {artifact::kFeatures, artifact::kMeta, artifact::kTruth};
  }

  std::vector<std::string> cluster() {
    const auto unit = unit_features();
    const auto out = run_clustering(unit, c_);
    save_matrix(to_float(out.kmeans.centroids), path(artifact::kCentroids));
    save_assignments(out.parents, path(artifact::kAssignments));
    std::string trace = "iteration,objective\n";
    for (std::size_t i = 0; i < out.kmeans.objective.size(); ++i)
      trace += std::to_string(i) + "," + format_double(out.kmeans.objective[i]) + "\n";
    detail::write_file(path(artifact::kKMeansTrace), trace);
    return {artifact::kCentroids, artifact::kAssignments, artifact::kKMeansTrace};
  }

  std::vector<std::string> graph() {
    const auto unit = unit_features();
    require(artifact::kMeta);
    require(artifact::kAssignments);
    const auto meta = load_meta(path(artifact::kMeta));
    const auto parents = load_assignments(path(artifact::kAssignments), unit.size());
    save_graph(run_graph(unit, meta, parents, c_), path(artifact::kGraph));
    return {artifact::kGraph};
  }

  std::vector<std::string> pairs() {
    const auto g = load_graph_artifact();
    save_pairs(make_pair_dataset(g, c_.mode, c_.pairs), path(artifact::kPairs));
    return {artifact::kPairs};
  }

  /// Materializes the first epoch of the stream that `train` consumes.
  std::vector<std::string> triplets() {
    const auto g = load_graph_artifact();
    require(artifact::kPairs);
    TripletSampler sampler(load_pairs(path(artifact::kPairs)), g.parent_of(), c_.batch);
    std::vector<Triplet> all;
    do {
      const auto b = sampler.next_batch();
      all.insert(all.end(), b.begin(), b.end());
    } while (sampler.emitted_batches() < sampler.batches_per_epoch());
    save_triplets(all, path(artifact::kTriplets));
    return {artifact::kTriplets};
  }

  std::vector<std::string> train_stage() {
    const auto unit = unit_features();
    const auto g = load_graph_artifact();
    require(artifact::kPairs);
    const auto res = run_training(unit, g, load_pairs(path(artifact::kPairs)), c_);
    save_checkpoint(res.model, {c_.train.seed, c_.train.iterations}, path(artifact::kModel));
    save_loss_trace(res.trace, path(artifact::kLoss));
    std::vector<std::string> files = {artifact::kModel, artifact::kLoss};
    for (const auto& t : checkpoint_tensor_names(c_.model.architecture))
      files.push_back("model_" + t + ".tivg");
    return files;
  }

  std::vector<std::string> eval() {
    const auto unit = unit_features();
    const auto g = load_graph_artifact();
    require(artifact::kTruth);
    require(artifact::kModel);
    const auto truth = load_truth(path(artifact::kTruth));
    const auto model = load_checkpoint(path(artifact::kModel));
    save_report(run_eval(unit, g, truth, model, c_), path(artifact::kReport), path(artifact::kModes));
    return {artifact::kReport, artifact::kModes};
  }

  void write_manifest(const std::string& stage, const std::vector<std::string>& produced,
                      double ms) const {
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["version"] = kVersion;
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c_)));
    j["config_hash"] = hash;
    j["seed"] = c_.seed;
    j["workers"] = c_.workers;
    j["elapsed_ms"] = ms;
    j["artifacts"] = produced;
    j["config"] = config_to_json(c_);
    detail::write_file(out_ / manifest_name(stage), j.dump(2) + "\n");
  }

  PipelineConfig c_;
  std::filesystem::path out_;
};

}  // namespace transvis
