#pragma once

#include <filesystem>
#include <iomanip>

#include "canas/config.hpp"

namespace canas {

/// Failure with a stable machine-readable code, e.g. "hash_mismatch".
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

namespace fs = std::filesystem;

/// Artifact locations inside a run directory.
struct RunPaths {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path data_dir() const { return root / "data"; }
  fs::path classifier() const { return root / "data" / "classifier.json"; }
  fs::path real_stats() const { return root / "data" / "stats.json"; }
  fs::path search_dir() const { return root / "search"; }
  fs::path policy() const { return root / "search" / "policy.json"; }
  fs::path supernet() const { return root / "search" / "supernet.json"; }
  fs::path search_metrics() const { return root / "search" / "metrics.jsonl"; }
  fs::path rewards() const { return root / "search" / "rewards.jsonl"; }
  fs::path arch() const { return root / "arch.json"; }
  fs::path retrain_dir() const { return root / "retrain"; }
  fs::path generator() const { return root / "retrain" / "generator.json"; }
  fs::path retrain_metrics() const { return root / "retrain" / "metrics.jsonl"; }
  fs::path calibrate_dir() const { return root / "calibrate"; }
  fs::path calibrated(std::size_t k) const { return root / "calibrate" / ("class_" + std::to_string(k) + ".json"); }
  fs::path eval_dir() const { return root / "eval"; }
};

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw PipelineError("missing_artifact", what + " not found: " + p.string());
}

/// Chained artifacts must come from the same configuration unless forced.
inline void check_hash(const std::string& artifact_hash, const RunConfig& cfg, const std::string& what, bool force) {
  if (artifact_hash == cfg.hash()) return;
  const std::string msg = what + " was written by config " + (artifact_hash.empty() ? "<none>" : artifact_hash) +
                          " but the current config is " + cfg.hash();
  if (!force) throw PipelineError("hash_mismatch", msg);
  warning_sink()(msg + " (continuing because of --force)");
}

inline RunPaths prepare_run(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p{cfg.out};
  fs::create_directories(p.root);
  nlohmann::json echo = cfg.to_json();
  echo["config_hash"] = cfg.hash();
  write_text(p.config(), dump_json(echo));
  return p;
}

// ---- shared loaders ----

struct RealStats {
  FeatureStats all;
  std::vector<FeatureStats> per_class;
};

inline LabeledImages load_training_data(const RunConfig& cfg, const RunPaths& p, bool force) {
  const fs::path dir = cfg.data_path.empty() ? p.data_dir() : fs::path(cfg.data_path);
  if (cfg.data_path.empty()) require_file(dir / "manifest.json", "dataset manifest (run gen-data first)");
  LoadedDataset ds = load_dataset(dir);
  if (cfg.data_path.empty()) check_hash(ds.config_hash, cfg, "dataset", force);
  if (ds.data.classes != cfg.space.classes) {
    throw PipelineError("incompatible_artifact", "dataset has " + std::to_string(ds.data.classes) +
                                                     " classes, config expects " + std::to_string(cfg.space.classes));
  }
  if (ds.data.image_size() != cfg.image_size()) {
    throw PipelineError("incompatible_artifact", "dataset images are " + std::to_string(ds.data.image_size()) +
                                                     " px, config expects " + std::to_string(cfg.image_size()));
  }
  return std::move(ds.data);
}

inline ToyClassifier load_classifier(const RunConfig& cfg, const RunPaths& p, bool force) {
  require_file(p.classifier(), "classifier (run gen-data first)");
  const auto j = read_json(p.classifier());
  check_hash(j.value("config_hash", ""), cfg, "classifier", force);
  return ToyClassifier::from_json(j);
}

inline RealStats load_real_stats(const RunConfig& cfg, const RunPaths& p, bool force) {
  require_file(p.real_stats(), "real feature stats (run gen-data first)");
  const auto j = read_json(p.real_stats());
  check_hash(j.value("config_hash", ""), cfg, "real stats", force);
  RealStats s{stats_from_json(j.at("all")), {}};
  for (const auto& c : j.at("classes")) s.per_class.push_back(stats_from_json(c));
  return s;
}

inline SuperNetwork fresh_generator(const RunConfig& cfg, std::uint64_t phase_tag) {
  Rng rng = make_rng(cfg.seed, kInitStream * 1000 + phase_tag);
  return SuperNetwork(cfg.space, rng, cfg.demod_eps);
}

inline Discriminator fresh_discriminator(const RunConfig& cfg, std::uint64_t phase_tag) {
  Rng rng = make_rng(cfg.seed, kInitStream * 1000 + phase_tag + 500);
  return Discriminator(cfg.discriminator_spec(), rng);
}

inline ArchitectureFile load_arch_checked(const RunConfig& cfg, const fs::path& path, bool force) {
  require_file(path, "architecture file");
  ArchitectureFile f = load_architectures(path);
  check_hash(f.config_hash, cfg, "architecture file", force);
  if (f.cells != cfg.space.cells || f.nodes != cfg.space.nodes || f.classes != cfg.space.classes ||
      f.operators != cfg.space.operators) {
    throw PipelineError("incompatible_artifact", "architecture file does not match the configured search space");
  }
  return f;
}

/// Loads a generator checkpoint into freshly constructed networks.
inline std::pair<SuperNetwork, Discriminator> load_models(const RunConfig& cfg, const fs::path& path, bool force) {
  require_file(path, "checkpoint");
  const auto j = read_json(path);
  const CheckpointHeader h = checkpoint_header(j);
  check_hash(h.config_hash, cfg, "checkpoint " + path.filename().string(), force);
  SuperNetwork g = fresh_generator(cfg, 0);
  Discriminator d = fresh_discriminator(cfg, 0);
  load_checkpoint(j, g, d);
  return {std::move(g), std::move(d)};
}

// ---- commands ----

struct GenDataResult {
  double classifier_accuracy = 0.0;
  std::size_t images = 0;
};

/// Writes the toy dataset (unless data.path points at an external one),
/// trains the feature classifier and stores real feature statistics.
inline GenDataResult cmd_gen_data(const RunConfig& cfg) {
  const RunPaths p = prepare_run(cfg);
  LabeledImages data;
  if (cfg.data_path.empty()) {
    save_dataset(p.data_dir(), make_toy_dataset(cfg.dataset_spec()), cfg.hash());
    data = load_dataset(p.data_dir()).data;
  } else {
    fs::create_directories(p.data_dir());
    data = load_training_data(cfg, p, false);
  }
  Rng rng = make_rng(cfg.data_seed, 0xc1f);
  ToyClassifier clf(data.classes, data.image_size(), cfg.classifier_features, rng);
  ClassifierTraining ct = cfg.classifier;
  ct.seed = cfg.data_seed;
  clf.train(data, ct);
  nlohmann::json cj = clf.to_json();
  cj["config_hash"] = cfg.hash();
  write_text(p.classifier(), dump_json(cj));

  const Tensor feats = clf.embed(data.images);
  nlohmann::json classes = nlohmann::json::array();
  Tape untracked(false);
  for (std::size_t k = 0; k < data.classes; ++k) {
    classes.push_back(stats_to_json(feature_stats(take_rows(untracked, feats, data.indices_of(k)))));
  }
  write_text(p.real_stats(), dump_json({{"config_hash", cfg.hash()},
                                        {"all", stats_to_json(feature_stats(feats))},
                                        {"classes", classes}}));
  return {clf.accuracy(), data.size()};
}

inline nlohmann::json space_json(const SearchSpaceSpec& s) {
  nlohmann::json ops = nlohmann::json::array();
  for (OperatorKind k : s.operators) ops.push_back(std::string(operator_name(k)));
  return {{"L", s.cells}, {"N", s.nodes}, {"operators", ops}, {"M", s.classes}};
}

struct SearchResult {
  SearchOutcome outcome;
  std::vector<ArchCode> derived;
};

/// Super-network training with policy learning. Writes the policy checkpoint,
/// the super-network checkpoint, per-iteration metrics and the reward log.
inline SearchResult cmd_search(const RunConfig& cfg, bool force = false) {
  const RunPaths p = prepare_run(cfg);
  const LabeledImages data = load_training_data(cfg, p, force);
  const ToyClassifier clf = load_classifier(cfg, p, force);
  fs::create_directories(p.search_dir());
  SuperNetwork g = fresh_generator(cfg, 1);
  Discriminator d = fresh_discriminator(cfg, 1);
  PolicyParams policy(cfg.space.classes, cfg.space.edge_count(), cfg.space.op_count(), cfg.policy.hyper);
  MovingBaseline baseline{0.0, cfg.policy.baseline_momentum, false};
  MetricsLog log(p.search_metrics()), rewards(p.rewards());
  LoopContext ctx{cfg.hash(), p.search_dir(), cfg.seed, &log, &rewards, false};
  SearchResult res;
  res.outcome = search_loop(cfg.schedule, cfg.policy, data, {g, d}, policy, baseline, cfg.gan_optimizer, &clf, ctx);
  write_text(p.supernet(), dump_json(checkpoint_json({cfg.hash(), cfg.schedule.search_iters, "search"}, g, d)));
  write_text(p.policy(), dump_json({{"format", "canas-policy"},
                                    {"version", 1},
                                    {"config_hash", cfg.hash()},
                                    {"iteration", cfg.schedule.search_iters},
                                    {"space", space_json(cfg.space)},
                                    {"policy", policy_to_json(policy, baseline)}}));
  res.derived = derive_architectures(policy.theta());
  return res;
}

/// Argmax architecture per class from a policy checkpoint. Needs no config.
inline ArchitectureFile cmd_derive(const fs::path& policy_path, const fs::path& out_path) {
  require_file(policy_path, "policy checkpoint");
  const auto j = read_json(policy_path);
  if (j.value("format", "") != "canas-policy") throw PipelineError("incompatible_artifact", "not a policy checkpoint");
  const auto& s = j.at("space");
  ArchitectureFile f;
  f.cells = s.at("L").get<std::size_t>();
  f.nodes = s.at("N").get<std::size_t>();
  f.classes = s.at("M").get<std::size_t>();
  for (const auto& n : s.at("operators")) f.operators.push_back(parse_operator(n.get<std::string>()));
  PolicyParams policy(f.classes, f.edge_count(), f.operators.size(), AdamHyper{});
  MovingBaseline baseline;
  policy_from_json(j.at("policy"), policy, baseline);
  f.archs = derive_architectures(policy.theta());
  f.config_hash = j.value("config_hash", "");
  f.validate();
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_architectures(out_path, f);
  }
  return f;
}

/// Trains a fresh generator and discriminator with the derived architectures.
inline void cmd_retrain(const RunConfig& cfg, const fs::path& arch_path, bool force = false) {
  const RunPaths p = prepare_run(cfg);
  const ArchitectureFile arch = load_arch_checked(cfg, arch_path, force);
  const LabeledImages data = load_training_data(cfg, p, force);
  fs::create_directories(p.retrain_dir());
  SuperNetwork g = fresh_generator(cfg, 2);
  Discriminator d = fresh_discriminator(cfg, 2);
  MetricsLog log(p.retrain_metrics());
  LoopContext ctx{cfg.hash(), p.retrain_dir(), cfg.seed, &log, nullptr, false};
  retrain_loop(cfg.schedule, arch.archs, data, {g, d}, cfg.gan_optimizer, ctx);
  write_text(p.generator(), dump_json(checkpoint_json({cfg.hash(), cfg.schedule.retrain_iters, "retrain"}, g, d)));
}

/// Per-class fine-tuning from the retrained checkpoint; one checkpoint per class.
inline void cmd_calibrate(const RunConfig& cfg, const fs::path& arch_path, const fs::path& checkpoint,
                          std::vector<std::size_t> classes, bool force = false) {
  const RunPaths p = prepare_run(cfg);
  const ArchitectureFile arch = load_arch_checked(cfg, arch_path, force);
  const LabeledImages data = load_training_data(cfg, p, force);
  if (classes.empty()) {
    classes.resize(cfg.space.classes);
    std::iota(classes.begin(), classes.end(), std::size_t{0});
  }
  for (std::size_t k : classes) {
    if (k >= cfg.space.classes) throw PipelineError("invalid_argument", "class " + std::to_string(k) + " out of range");
  }
  fs::create_directories(p.calibrate_dir());
  for (std::size_t k : classes) {
    auto [g, d] = load_models(cfg, checkpoint, force);
    MetricsLog log(p.calibrate_dir() / ("metrics_" + std::to_string(k) + ".jsonl"));
    LoopContext ctx{cfg.hash(), p.calibrate_dir(), cfg.seed, &log, nullptr, false};
    calibrate(cfg.schedule, k, arch.archs[k], data, {g, d}, cfg.calibrate_optimizer, ctx);
    nlohmann::json j = checkpoint_json({cfg.hash(), cfg.schedule.calibrate_iters, PipelinePhase{Phase::Calibrate, k}.name()}, g, d);
    j["class"] = k;
    write_text(p.calibrated(k), dump_json(j));
  }
}

struct ClassReport {
  std::size_t class_id = 0;
  double intra_fid = 0.0;
  std::optional<double> calibrated_intra_fid;
  double untrained_intra_fid = 0.0;
  FlopCount flops;
};

struct EvalReport {
  double fid = 0.0;
  double untrained_fid = 0.0;
  double inception_score = 0.0;
  std::optional<double> calibrated_fid;
  std::vector<ClassReport> classes;

  nlohmann::ordered_json to_json(const std::string& hash) const {
    nlohmann::ordered_json j;
    j["config_hash"] = hash;
    j["fid_proxy"] = fid;
    j["untrained_fid_proxy"] = untrained_fid;
    if (calibrated_fid) j["calibrated_fid_proxy"] = *calibrated_fid;
    j["inception_score"] = inception_score;
    nlohmann::ordered_json cls = nlohmann::ordered_json::array();
    for (const ClassReport& c : classes) {
      nlohmann::ordered_json r;
      r["class"] = c.class_id;
      r["intra_fid_proxy"] = c.intra_fid;
      if (c.calibrated_intra_fid) r["calibrated_intra_fid_proxy"] = *c.calibrated_intra_fid;
      r["untrained_intra_fid_proxy"] = c.untrained_intra_fid;
      r["flops"] = c.flops.total();
      r["flops_conv"] = c.flops.conv;
      r["flops_modulation"] = c.flops.modulation;
      cls.push_back(r);
    }
    j["classes"] = cls;
    return j;
  }

  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "FID-proxy (retrained): " << fid << "\nFID-proxy (untrained): " << untrained_fid << '\n';
    if (calibrated_fid) os << "FID-proxy (calibrated): " << *calibrated_fid << '\n';
    os << "surrogate IS: " << inception_score << "\n\n";
    os << std::left << std::setw(7) << "class" << std::setw(14) << "intra-FID" << std::setw(14) << "calibrated"
       << std::setw(14) << "untrained" << "MFLOPs\n";
    for (const ClassReport& c : classes) {
      os << std::setw(7) << c.class_id << std::setw(14) << c.intra_fid << std::setw(14)
         << (c.calibrated_intra_fid ? format_double(std::round(*c.calibrated_intra_fid * 1e4) / 1e4) : std::string("-"))
         << std::setw(14) << c.untrained_intra_fid << static_cast<double>(c.flops.total()) / 1e6 << '\n';
    }
    return os.str();
  }
};

/// Scores the retrained generator, per-class calibrated checkpoints when
/// present, and the untrained initialization. Every variant sees the same
/// latent draws per class.
inline EvalReport cmd_eval(const RunConfig& cfg, const fs::path& arch_path, const fs::path& checkpoint,
                           bool force = false) {
  const RunPaths p = prepare_run(cfg);
  const ArchitectureFile arch = load_arch_checked(cfg, arch_path, force);
  const ToyClassifier clf = load_classifier(cfg, p, force);
  const RealStats real = load_real_stats(cfg, p, force);
  auto [g, d] = load_models(cfg, checkpoint, force);
  const SuperNetwork untrained = fresh_generator(cfg, 2);
  const std::size_t n = cfg.eval_images_per_class, m = cfg.space.classes;

  auto images_for = [&](const SuperNetwork& net, std::size_t k) {
    Rng rng = make_rng(cfg.seed, kEvalStream * 1000 + k);
    std::vector<std::size_t> counts(m, 0);
    counts[k] = n;
    return generate_per_class(net, arch.archs, counts, rng);
  };

  EvalReport rep;
  std::vector<Tensor> trained_all, untrained_all, calibrated_all;
  bool all_calibrated = true;
  for (std::size_t k = 0; k < m; ++k) {
    ClassReport c;
    c.class_id = k;
    c.flops = g.arch_flops(arch.archs[k].ops);
    trained_all.push_back(images_for(g, k));
    untrained_all.push_back(images_for(untrained, k));
    c.intra_fid = fid_proxy(clf, real.per_class[k], trained_all.back());
    c.untrained_intra_fid = fid_proxy(clf, real.per_class[k], untrained_all.back());
    if (fs::exists(p.calibrated(k))) {
      auto [gk, dk] = load_models(cfg, p.calibrated(k), force);
      calibrated_all.push_back(images_for(gk, k));
      c.calibrated_intra_fid = fid_proxy(clf, real.per_class[k], calibrated_all.back());
    } else {
      all_calibrated = false;
      calibrated_all.push_back(trained_all.back());
    }
    rep.classes.push_back(c);
  }
  Tape untracked(false);
  const Tensor all = concat_rows(untracked, trained_all);
  rep.fid = fid_proxy(clf, real.all, all);
  rep.untrained_fid = fid_proxy(clf, real.all, concat_rows(untracked, untrained_all));
  if (all_calibrated) rep.calibrated_fid = fid_proxy(clf, real.all, concat_rows(untracked, calibrated_all));
  rep.inception_score = surrogate_inception_score(all, clf);

  fs::create_directories(p.eval_dir());
  write_text(p.eval_dir() / "report.json", rep.to_json(cfg.hash()).dump(2) + "\n");
  write_text(p.eval_dir() / "report.txt", rep.table());
  return rep;
}

/// Per-position operator proportions of an architecture file, as CSV.
inline std::string cmd_stats(const fs::path& arch_path) {
  require_file(arch_path, "architecture file");
  const ArchitectureFile f = load_architectures(arch_path);
  return arch_stats_csv(f.archs, f.operators);
}

}  // namespace canas
