// Command-line driver for the search / retrain / calibrate / evaluate pipeline.

#include <CLI11.hpp>
#include <iostream>

#include "canas/pipeline.hpp"

namespace {

using namespace canas;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::size_t> classes;
  bool force = false;
  bool smoke = false;
};

RunConfig load_config(const GlobalOptions& g) {
  RunConfig cfg = g.smoke ? RunConfig::smoke() : RunConfig{};
  if (!g.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(g.config_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw PipelineError("invalid_config", g.config_path + ": " + e.what());
    }
    try {
      cfg.merge_json(j);
    } catch (const std::invalid_argument& e) {
      throw PipelineError("invalid_config", e.what());
    }
  }
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.out = *g.out;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw PipelineError("invalid_config", e.what());
  }
  return cfg;
}

std::string error_code(const std::exception& e) {
  if (auto* p = dynamic_cast<const PipelineError*>(&e)) return p->code();
  if (dynamic_cast<const TrainingAborted*>(&e)) return "training_aborted";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e)) return "invalid_argument";
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return "malformed_artifact";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-aware generator search: gen-data, search, derive, retrain, calibrate, eval, stats"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "run seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_option("--classes", g.classes, "classes to calibrate (default: all)")->delimiter(',');
  app.add_flag("--force", g.force, "continue past config-hash mismatches between artifacts");
  app.add_flag("--smoke", g.smoke, "start from the small smoke preset instead of the defaults");

  std::string arch_path, checkpoint, policy_path, output;
  auto* gen = app.add_subcommand("gen-data", "write the toy dataset, train the feature classifier, store real stats");
  auto* search = app.add_subcommand("search", "train the super-network and the sampling policy");
  auto* derive = app.add_subcommand("derive", "derive per-class architectures from a policy checkpoint");
  derive->add_option("--policy", policy_path, "policy checkpoint (default <out>/search/policy.json)");
  derive->add_option("--output", output, "architecture file (default <out>/arch.json)");
  auto* retrain = app.add_subcommand("retrain", "train the derived architectures from scratch");
  retrain->add_option("--arch", arch_path, "architecture file (default <out>/arch.json)");
  auto* calib = app.add_subcommand("calibrate", "fine-tune each class on its own data");
  calib->add_option("--arch", arch_path, "architecture file (default <out>/arch.json)");
  calib->add_option("--checkpoint", checkpoint, "retrained checkpoint (default <out>/retrain/generator.json)");
  auto* eval = app.add_subcommand("eval", "FID-proxy, intra-FID-proxy, surrogate IS and FLOPs report");
  eval->add_option("--arch", arch_path, "architecture file (default <out>/arch.json)");
  eval->add_option("--checkpoint", checkpoint, "retrained checkpoint (default <out>/retrain/generator.json)");
  auto* stats = app.add_subcommand("stats", "per-position operator proportions as CSV");
  stats->add_option("--arch", arch_path, "architecture file")->required();
  stats->add_option("--output", output, "CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (stats->parsed()) {
      const std::string csv = cmd_stats(arch_path);
      if (output.empty()) {
        std::cout << csv;
      } else {
        write_text(output, csv);
      }
      return 0;
    }
    const RunConfig cfg = load_config(g);
    const RunPaths paths{cfg.out};
    if (arch_path.empty()) arch_path = paths.arch().string();
    if (checkpoint.empty()) checkpoint = paths.generator().string();

    if (gen->parsed()) {
      const auto r = cmd_gen_data(cfg);
      std::cout << "dataset: " << r.images << " images, classifier held-out accuracy " << r.classifier_accuracy << '\n';
    } else if (search->parsed()) {
      const auto r = cmd_search(cfg, g.force);
      std::cout << "search: " << cfg.schedule.search_iters << " iterations, " << r.outcome.policy_updates
                << " policy updates\n";
    } else if (derive->parsed()) {
      if (policy_path.empty()) policy_path = paths.policy().string();
      if (output.empty()) output = paths.arch().string();
      const auto f = cmd_derive(policy_path, output);
      std::cout << "derived " << f.archs.size() << " architectures -> " << output << '\n';
    } else if (retrain->parsed()) {
      cmd_retrain(cfg, arch_path, g.force);
      std::cout << "retrained -> " << paths.generator().string() << '\n';
    } else if (calib->parsed()) {
      cmd_calibrate(cfg, arch_path, checkpoint, g.classes, g.force);
      std::cout << "calibrated -> " << paths.calibrate_dir().string() << '\n';
    } else if (eval->parsed()) {
      const auto rep = cmd_eval(cfg, arch_path, checkpoint, g.force);
      std::cout << rep.table();
    }
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", error_code(e)}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
