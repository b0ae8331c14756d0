// transvis: command-line front end for the graph-mining and metric-learning
// pipeline. Every subcommand reads and writes artifacts in --out DIR.
//
// Exit codes: 0 success, 1 validation/configuration error, 2 runtime error.
// Errors are reported as one JSON line on stderr.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "transvis/transvis.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::optional<std::size_t> workers;
  std::string out = "out";
  std::string mode;
};

void report_error(const std::string& kind, const std::string& stage, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["stage"] = stage;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

transvis::PipelineConfig resolve_config(const Options& o) {
  using namespace transvis;
  nlohmann::json file = nlohmann::json::object();
  if (!o.config_path.empty()) {
    try {
      file = nlohmann::json::parse(detail::read_file(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (!file.is_object()) throw ConfigError("config: top level must be an object");
  }
  std::string preset = o.preset;
  if (preset.empty()) preset = file.value("preset", std::string("desk"));
  PipelineConfig c = preset_by_name(preset);
  apply_config_json(c, file);
  c.preset = preset;
  if (!file.contains("workers")) c.workers = default_workers();
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (!o.mode.empty()) c.mode = sampler_mode_from_string(o.mode);
  if (c.workers == 0) throw ConfigError("workers must be >= 1");
  c.finalize();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affinity-graph mining, transitive pair generation and ranking-loss training"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "Generate a synthetic dataset with ground truth"},
      {"cluster", "Spherical k-means and pruning into parent clusters"},
      {"graph", "Child clusters and the affinity graph"},
      {"pairs", "Positive pairs for the configured sampler mode"},
      {"triplets", "Materialize one epoch of training triplets"},
      {"train", "Train the embedding with the ranking loss"},
      {"eval", "Purity, retrieval precision and ordering metrics"},
      {"pipeline", "Run every stage in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--preset", o.preset, "Base preset")->check(CLI::IsMember({"paper", "desk"}));
    sub->add_option("--workers", o.workers,
                    std::string("Worker threads (default: $") + transvis::kWorkersEnv + " or 1)");
    sub->add_option("--out", o.out, "Artifact directory")->capture_default_str();
    sub->add_option("--mode", o.mode, "Sampler mode for pairs/train")
        ->check(CLI::IsMember({"intra_only", "inter_only", "union", "transitive"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error("usage", "", e.what());
    return 1;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const auto config = resolve_config(o);
    transvis::StageRunner runner(config, o.out);
    if (stage == "pipeline") {
      for (const auto& s : transvis::stage_names()) {
        std::cerr << "[transvis] " << s << std::endl;
        runner.run(s);
      }
    } else {
      std::cerr << "[transvis] " << stage << std::endl;
      runner.run(stage);
    }
  } catch (const transvis::ConfigError& e) {
    report_error("config", stage, e.what());
    return 1;
  } catch (const transvis::ValidationError& e) {
    report_error("validation", stage, e.what());
    return 1;
  } catch (const transvis::ParseError& e) {
    report_error("parse", stage, e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("runtime", stage, e.what());
    return 2;
  }
  return 0;
}
