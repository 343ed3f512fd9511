#pragma once

#include <filesystem>
#include <fstream>
#include <optional>

#include "canas/discriminator.hpp"
#include "canas/metrics.hpp"
#include "canas/policy.hpp"
#include "canas/supernet.hpp"

namespace canas {

/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
inline Tensor hinge_d_loss(Tape& tape, const Tensor& real_scores, const Tensor& fake_scores) {
  Tensor r = mean(tape, relu(tape, add_scalar(tape, scale(tape, real_scores, -1.0), 1.0)));
  Tensor f = mean(tape, relu(tape, add_scalar(tape, fake_scores, 1.0)));
  return add(tape, r, f);
}

/// -mean(fake).
inline Tensor hinge_g_loss(Tape& tape, const Tensor& fake_scores) { return scale(tape, mean(tape, fake_scores), -1.0); }

struct Schedule {
  std::size_t critic = 5;
  std::size_t policy = 50;
  std::size_t search_iters = 200000;
  std::size_t retrain_iters = 500000;
  std::size_t calibrate_iters = 1000;
  std::size_t batch_size = 32;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const {
    if (critic == 0) throw std::invalid_argument("schedule.critic: must be >= 1");
    if (policy == 0) throw std::invalid_argument("schedule.policy: must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("schedule.batch_size: must be >= 1");
  }
};

enum class UpdateKind { Discriminator, Generator, Policy };

inline std::string_view update_name(UpdateKind k) {
  switch (k) {
    case UpdateKind::Discriminator: return "D";
    case UpdateKind::Generator: return "G";
    case UpdateKind::Policy: return "P";
  }
  return "?";
}

struct UpdateEvent {
  std::size_t iter;
  UpdateKind kind;
  bool operator==(const UpdateEvent&) const = default;
};

/// Updates due at one iteration: D always, G when iter % critic == 0, the
/// policy when iter % policy == 0 (and the policy is being learned).
inline std::vector<UpdateKind> updates_at(const Schedule& s, std::size_t iter, bool with_policy) {
  std::vector<UpdateKind> u{UpdateKind::Discriminator};
  if (iter % s.critic == 0) u.push_back(UpdateKind::Generator);
  if (with_policy && iter % s.policy == 0) u.push_back(UpdateKind::Policy);
  return u;
}

inline std::vector<UpdateEvent> expected_events(const Schedule& s, std::size_t iters, bool with_policy) {
  std::vector<UpdateEvent> ev;
  for (std::size_t i = 0; i < iters; ++i)
    for (UpdateKind k : updates_at(s, i, with_policy)) ev.push_back({i, k});
  return ev;
}

enum class Phase { Search, Retrain, Calibrate, Evaluate };

struct PipelinePhase {
  Phase phase = Phase::Search;
  std::optional<std::size_t> class_id;  // set for Calibrate

  std::string name() const {
    switch (phase) {
      case Phase::Search: return "search";
      case Phase::Retrain: return "retrain";
      case Phase::Calibrate: return "calibrate:" + std::to_string(class_id.value_or(0));
      case Phase::Evaluate: return "evaluate";
    }
    return "?";
  }
};

/// One JSON object per line. Lines are flushed as they are written.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path) : os_(std::make_unique<std::ofstream>(path, std::ios::binary)) {
    if (!*os_) throw std::runtime_error("cannot write " + path.string());
  }

  void write(const nlohmann::ordered_json& line) {
    lines_.push_back(line.dump());
    if (os_) *os_ << lines_.back() << '\n' << std::flush;
  }

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::unique_ptr<std::ofstream> os_;
  std::vector<std::string> lines_;
};

// ---- checkpoints ----

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json params_to_json(const std::vector<std::pair<std::string, Tensor>>& params) {
  nlohmann::json j = nlohmann::json::object();
  for (auto& [name, t] : params) j[name] = tensor_to_json(t);
  return j;
}

inline void params_from_json(const std::vector<std::pair<std::string, Tensor>>& params, const nlohmann::json& j) {
  for (auto& [name, t] : params) {
    if (!j.contains(name)) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    Tensor dst = t;
    assign_from_json(dst, j.at(name), name);
  }
}

struct CheckpointHeader {
  std::string config_hash;
  std::size_t iteration = 0;
  std::string phase;
};

inline nlohmann::json checkpoint_json(const CheckpointHeader& h, const SuperNetwork& g, const Discriminator& d) {
  return {{"format", "canas-checkpoint"},
          {"version", kCheckpointVersion},
          {"config_hash", h.config_hash},
          {"iteration", h.iteration},
          {"phase", h.phase},
          {"generator", params_to_json(g.named_parameters())},
          {"discriminator", d.state_json()}};
}

inline CheckpointHeader checkpoint_header(const nlohmann::json& j) {
  if (j.value("format", "") != "canas-checkpoint") throw std::runtime_error("not a checkpoint file");
  if (j.at("version").get<int>() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  return {j.at("config_hash").get<std::string>(), j.at("iteration").get<std::size_t>(), j.at("phase").get<std::string>()};
}

inline void load_checkpoint(const nlohmann::json& j, SuperNetwork& g, Discriminator& d) {
  checkpoint_header(j);
  params_from_json(g.named_parameters(), j.at("generator"));
  d.load_state_json(j.at("discriminator"));
}

/// Raised when a loss or activation goes non-finite; a diagnostic checkpoint
/// has been written to `dump_path` when it is non-empty.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::string dump_path)
      : std::runtime_error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const { return dump_path_; }

 private:
  std::string dump_path_;
};

// ---- single updates ----

/// One power iteration, then one Adam step on the hinge loss of D.
inline double discriminator_step(Discriminator& d, Adam& opt, const Tensor& real, const Tensor& fake,
                                 std::span<const std::size_t> labels) {
  d.power_iteration();
  opt.zero_grad();
  Tape tape;
  Tensor loss = hinge_d_loss(tape, d.forward(tape, real, labels), d.forward(tape, fake, labels));
  tape.backward(loss);
  opt.step();
  return loss.item();
}

/// One Adam step of G through a frozen D; `fake` must be recorded on `tape`.
inline double generator_step(const Discriminator& d, Adam& opt, Tape& tape, const Tensor& fake,
                             std::span<const std::size_t> labels) {
  std::vector<Tensor> dparams;
  for (auto& [n, t] : d.named_parameters()) dparams.push_back(t);
  FreezeGuard frozen(dparams);
  Tensor loss = hinge_g_loss(tape, d.forward(tape, fake, labels));
  tape.backward(loss);
  opt.step();
  return loss.item();
}

/// Images for `counts[k]` samples of each class, each class through its own
/// architecture, generated class by class without recording.
inline Tensor generate_per_class(const SuperNetwork& g, std::span<const ArchCode> archs,
                                 std::span<const std::size_t> counts, Rng& rng, std::size_t chunk = 128) {
  std::vector<Tensor> parts;
  Tape untracked(false);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::size_t done = 0; done < counts[k]; done += chunk) {
      const std::size_t n = std::min(chunk, counts[k] - done);
      parts.push_back(g.generator_forward(untracked, randn({n, g.space().latent_dim}, rng), k, archs[k]));
    }
  }
  if (parts.empty()) throw std::invalid_argument("generate_per_class: nothing to generate");
  return parts.size() == 1 ? parts.front() : concat_rows(untracked, parts);
}

struct PolicyOptions {
  std::size_t samples = 4;  // m
  double baseline_momentum = 0.9;
  bool embedded = true;
  std::size_t reward_images = 256;
  AdamHyper hyper{3.5e-4, 0.9, 0.999, 1e-8};
};

/// Surrogate inception score of reward_images generated across all classes
/// (split evenly) with the given joint action.
inline double policy_reward(const SuperNetwork& g, const std::vector<ArchCode>& archs, const ToyClassifier& clf,
                            std::size_t reward_images, Rng& rng) {
  const std::size_t m = archs.size();
  std::vector<std::size_t> counts(m, std::max<std::size_t>(1, reward_images / m));
  return surrogate_inception_score(generate_per_class(g, archs, counts, rng), clf);
}

/// m sampled joint actions, baseline update, one REINFORCE step. Returns the
/// mean reward of the samples.
inline double policy_step(PolicyParams& policy, MovingBaseline& baseline, std::size_t m,
                          const std::function<double(const std::vector<ArchCode>&)>& reward, Rng& rng) {
  std::vector<RewardSample> samples;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    RewardSample s;
    s.archs = sample_archs(policy, rng);
    s.log_prob = arch_log_prob(policy, s.archs);
    s.reward = reward(s.archs);
    total += s.reward;
    samples.push_back(std::move(s));
  }
  const double mean_reward = total / static_cast<double>(m);
  update_baseline(baseline, mean_reward);
  reinforce_update(policy, samples, baseline);
  return mean_reward;
}

// ---- loops ----

/// Seeds of the independent random streams a run draws from.
enum Stream : std::uint64_t {
  kInitStream = 1,
  kDataStream = 2,
  kArchStream = 3,
  kNoiseStream = 4,
  kPolicyStream = 5,
  kRewardStream = 6,
  kEvalStream = 7,
};

struct LoopContext {
  std::string config_hash;
  std::filesystem::path out_dir;  // checkpoints and diagnostics; empty disables writing
  std::uint64_t seed = 0;
  MetricsLog* log = nullptr;
  MetricsLog* reward_log = nullptr;
  bool dry_run = false;  // walk the schedule and log events without computing updates
};

struct GanModels {
  SuperNetwork& generator;
  Discriminator& discriminator;
};

inline std::string write_checkpoint(const LoopContext& ctx, const std::string& file, const nlohmann::json& j) {
  if (ctx.out_dir.empty()) return {};
  std::filesystem::create_directories(ctx.out_dir);
  const auto path = (ctx.out_dir / file).string();
  write_text(path, dump_json(j));
  return path;
}

template <class Step>
void guarded(const LoopContext& ctx, std::size_t iter, const std::string& phase, const GanModels& m, Step&& step) {
  try {
    step();
  } catch (const NumericError& e) {
    const auto dump = write_checkpoint(ctx, "diagnostic_" + phase + "_" + std::to_string(iter) + ".json",
                                       checkpoint_json({ctx.config_hash, iter, phase}, m.generator, m.discriminator));
    throw TrainingAborted(phase + " aborted at iteration " + std::to_string(iter) + ": " + e.what(), dump);
  }
}

inline nlohmann::ordered_json event_line(std::size_t iter, const std::string& phase, const std::vector<UpdateKind>& due) {
  nlohmann::ordered_json line;
  line["iter"] = iter;
  line["phase"] = phase;
  std::string ev;
  for (UpdateKind k : due) ev += update_name(k);
  line["updates"] = ev;
  return line;
}

struct SearchOutcome {
  std::vector<UpdateEvent> events;
  std::size_t policy_updates = 0;
};

/// Weight-sharing search with fair sampling and (by default) embedded policy
/// learning. Every iteration trains D on a fairly replicated real batch and
/// fakes from the matching architectures, every critic-th iteration trains G,
/// every policy-th iteration takes a REINFORCE step rewarded by the surrogate
/// inception score.
inline SearchOutcome search_loop(const Schedule& schedule, const PolicyOptions& popt, const LabeledImages& data,
                                 GanModels m, PolicyParams& policy, MovingBaseline& baseline, const AdamHyper& gan_hyper,
                                 const ToyClassifier* classifier, const LoopContext& ctx) {
  schedule.validate();
  SuperNetwork& g = m.generator;
  Discriminator& d = m.discriminator;
  const SearchSpaceSpec& space = g.space();
  if (data.classes != space.classes) throw DimensionError("search: dataset class count != space.classes");
  if (!ctx.dry_run && classifier == nullptr) throw std::invalid_argument("search: classifier required for the reward");
  Adam g_opt(g.parameters(), gan_hyper), d_opt(d.parameters(), gan_hyper);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  BatchSampler sampler(all, make_rng(ctx.seed, kDataStream));
  Rng arch_rng = make_rng(ctx.seed, kArchStream), z_rng = make_rng(ctx.seed, kNoiseStream);
  Rng policy_rng = make_rng(ctx.seed, kPolicyStream), reward_rng = make_rng(ctx.seed, kRewardStream);
  SearchOutcome out;

  auto reward_fn = [&](const std::vector<ArchCode>& archs) {
    return policy_reward(g, archs, *classifier, popt.reward_images, reward_rng);
  };
  auto do_policy = [&](std::size_t iter, nlohmann::ordered_json& line) {
    const double r = policy_step(policy, baseline, popt.samples, reward_fn, policy_rng);
    ++out.policy_updates;
    line["reward"] = r;
    line["baseline"] = baseline.value;
    if (ctx.reward_log) {
      nlohmann::ordered_json rl;
      rl["iter"] = iter;
      rl["mean_reward"] = r;
      rl["baseline"] = baseline.value;
      ctx.reward_log->write(rl);
    }
  };

  for (std::size_t iter = 0; iter < schedule.search_iters; ++iter) {
    const auto due = updates_at(schedule, iter, popt.embedded);
    for (UpdateKind k : due) out.events.push_back({iter, k});
    auto line = event_line(iter, "search", due);
    if (!ctx.dry_run) {
      guarded(ctx, iter, "search", m, [&] {
        const LabeledImages batch = data.subset(sampler.next(schedule.batch_size));
        const auto fair = fair_sample_round(space.op_count(), space.edge_count(), arch_rng);
        const ReplicatedBatch rep = replicate_for_fairness(batch.images, batch.labels, fair);
        const std::size_t n = rep.labels.size();
        Tensor fake;
        {
          Tape untracked(false);
          fake = g.mixed_forward(untracked, randn({n, space.latent_dim}, z_rng), rep.labels, rep.rows);
        }
        line["d_loss"] = discriminator_step(d, d_opt, rep.data, fake, rep.labels);
        if (iter % schedule.critic == 0) {
          g_opt.zero_grad();
          Tape tape;
          Tensor gen = g.mixed_forward(tape, randn({n, space.latent_dim}, z_rng), rep.labels, rep.rows);
          line["g_loss"] = generator_step(d, g_opt, tape, gen, rep.labels);
        }
        if (popt.embedded && iter % schedule.policy == 0) do_policy(iter, line);
      });
    }
    if (ctx.log) ctx.log->write(line);
    if (!ctx.dry_run && schedule.checkpoint_every && (iter + 1) % schedule.checkpoint_every == 0) {
      write_checkpoint(ctx, "supernet.json", checkpoint_json({ctx.config_hash, iter + 1, "search"}, g, d));
    }
  }

  // post-hoc variant: the policy is learned on the converged super-network
  if (!popt.embedded && !ctx.dry_run) {
    const std::size_t updates = (schedule.search_iters + schedule.policy - 1) / schedule.policy;
    for (std::size_t u = 0; u < updates; ++u) {
      const std::size_t iter = schedule.search_iters + u;
      out.events.push_back({iter, UpdateKind::Policy});
      nlohmann::ordered_json line = event_line(iter, "search-policy", {UpdateKind::Policy});
      guarded(ctx, iter, "search", m, [&] { do_policy(iter, line); });
      if (ctx.log) ctx.log->write(line);
    }
  }
  return out;
}

/// Trains freshly initialized G and D with every sample routed through its
/// class's fixed architecture (mixed-architecture batches, no policy).
inline void retrain_loop(const Schedule& schedule, const std::vector<ArchCode>& archs, const LabeledImages& data,
                         GanModels m, const AdamHyper& gan_hyper, const LoopContext& ctx) {
  schedule.validate();
  SuperNetwork& g = m.generator;
  Discriminator& d = m.discriminator;
  const SearchSpaceSpec& space = g.space();
  if (archs.size() != space.classes) throw std::invalid_argument("retrain: one architecture per class required");
  for (const ArchCode& a : archs) validate_arch(a, space);
  Adam g_opt(g.parameters(), gan_hyper), d_opt(d.parameters(), gan_hyper);
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  BatchSampler sampler(all, make_rng(ctx.seed, kDataStream));
  Rng z_rng = make_rng(ctx.seed, kNoiseStream);

  for (std::size_t iter = 0; iter < schedule.retrain_iters; ++iter) {
    const auto due = updates_at(schedule, iter, false);
    auto line = event_line(iter, "retrain", due);
    if (!ctx.dry_run) {
      guarded(ctx, iter, "retrain", m, [&] {
        const LabeledImages batch = data.subset(sampler.next(schedule.batch_size));
        std::vector<ArchRow> rows;
        for (std::size_t y : batch.labels) rows.push_back(archs[y].ops);
        const std::size_t n = batch.size();
        Tensor fake;
        {
          Tape untracked(false);
          fake = g.mixed_forward(untracked, randn({n, space.latent_dim}, z_rng), batch.labels, rows);
        }
        line["d_loss"] = discriminator_step(d, d_opt, batch.images, fake, batch.labels);
        if (iter % schedule.critic == 0) {
          g_opt.zero_grad();
          Tape tape;
          Tensor gen = g.mixed_forward(tape, randn({n, space.latent_dim}, z_rng), batch.labels, rows);
          line["g_loss"] = generator_step(d, g_opt, tape, gen, batch.labels);
        }
      });
    }
    if (ctx.log) ctx.log->write(line);
    if (!ctx.dry_run && schedule.checkpoint_every && (iter + 1) % schedule.checkpoint_every == 0) {
      write_checkpoint(ctx, "generator.json", checkpoint_json({ctx.config_hash, iter + 1, "retrain"}, g, d));
    }
  }
}

/// Fine-tunes G and D (in place, fresh Adam state) on class k only, with
/// class k's architecture.
inline void calibrate(const Schedule& schedule, std::size_t k, const ArchCode& arch, const LabeledImages& data,
                      GanModels m, const AdamHyper& gan_hyper, const LoopContext& ctx) {
  schedule.validate();
  SuperNetwork& g = m.generator;
  Discriminator& d = m.discriminator;
  validate_arch(arch, g.space());
  if (arch.class_id != k) throw std::invalid_argument("calibrate: architecture belongs to another class");
  auto pool = data.indices_of(k);
  if (pool.empty()) throw std::invalid_argument("calibrate: class " + std::to_string(k) + " has no data");
  if (schedule.calibrate_iters == 0) return;
  Adam g_opt(g.parameters(), gan_hyper), d_opt(d.parameters(), gan_hyper);
  BatchSampler sampler(std::move(pool), make_rng(ctx.seed, kDataStream + 100 * (k + 1)));
  Rng z_rng = make_rng(ctx.seed, kNoiseStream + 100 * (k + 1));
  const std::string phase = PipelinePhase{Phase::Calibrate, k}.name();

  for (std::size_t iter = 0; iter < schedule.calibrate_iters; ++iter) {
    const auto due = updates_at(schedule, iter, false);
    auto line = event_line(iter, phase, due);
    if (!ctx.dry_run) {
      guarded(ctx, iter, "calibrate_" + std::to_string(k), m, [&] {
        const LabeledImages batch = data.subset(sampler.next(schedule.batch_size));
        const std::size_t n = batch.size();
        Tensor fake;
        {
          Tape untracked(false);
          fake = g.generator_forward(untracked, randn({n, g.space().latent_dim}, z_rng), k, arch);
        }
        line["d_loss"] = discriminator_step(d, d_opt, batch.images, fake, batch.labels);
        if (iter % schedule.critic == 0) {
          g_opt.zero_grad();
          Tape tape;
          Tensor gen = g.generator_forward(tape, randn({n, g.space().latent_dim}, z_rng), k, arch);
          line["g_loss"] = generator_step(d, g_opt, tape, gen, batch.labels);
        }
      });
    }
    if (ctx.log) ctx.log->write(line);
  }
}

}  // namespace canas
