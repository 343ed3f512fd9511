#pragma once

#include "canas/adam.hpp"
#include "canas/search_space.hpp"

namespace canas {

/// Per-class, per-edge operator scores theta [M, E, |O|]; softmax over the
/// last axis is the sampling distribution. Owns its Adam state.
class PolicyParams {
 public:
  PolicyParams(std::size_t classes, std::size_t edges, std::size_t op_count, AdamHyper hyper)
      : theta_(make_parameter(Tensor({classes, edges, op_count}, 0.0))), optimizer_({theta_}, hyper) {}

  PolicyParams(const PolicyParams&) = delete;
  PolicyParams& operator=(const PolicyParams&) = delete;
  PolicyParams(PolicyParams&&) = default;
  PolicyParams& operator=(PolicyParams&&) = default;

  std::size_t classes() const { return theta_.dim(0); }
  std::size_t edges() const { return theta_.dim(1); }
  std::size_t op_count() const { return theta_.dim(2); }

  Tensor& theta() { return theta_; }
  const Tensor& theta() const { return theta_; }
  Adam& optimizer() { return optimizer_; }
  const Adam& optimizer() const { return optimizer_; }

  std::span<const double> scores(std::size_t k, std::size_t e) const {
    return theta_.values().subspan((k * edges() + e) * op_count(), op_count());
  }

  std::vector<double> probabilities(std::size_t k, std::size_t e) const {
    auto row = scores(k, e);
    const double mx = *std::max_element(row.begin(), row.end());
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t o = 0; o < row.size(); ++o) z += (p[o] = std::exp(row[o] - mx));
    for (double& v : p) v /= z;
    return p;
  }

  double log_probability(std::size_t k, std::size_t e, OpIndex o) const {
    auto row = scores(k, e);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    return row[o] - mx - std::log(z);
  }

 private:
  Tensor theta_;
  Adam optimizer_;
};

/// Moving-average reward baseline r.
struct MovingBaseline {
  double value = 0.0;
  double momentum = 0.9;
  bool initialized = false;
};

/// One sampled joint action (an architecture per class) and its reward.
struct RewardSample {
  std::vector<ArchCode> archs;
  double reward = 0.0;
  double log_prob = 0.0;
};

/// First call sets r to the observation; afterwards r <- g*r + (1-g)*mean_reward.
inline void update_baseline(MovingBaseline& b, double mean_reward) {
  if (!std::isfinite(mean_reward)) throw NumericError("update_baseline: non-finite reward");
  if (!b.initialized) {
    b.value = mean_reward;
    b.initialized = true;
  } else {
    b.value = b.momentum * b.value + (1.0 - b.momentum) * mean_reward;
  }
}

inline void validate_joint_action(const PolicyParams& policy, const std::vector<ArchCode>& archs) {
  if (archs.size() != policy.classes()) throw std::invalid_argument("policy: one architecture per class required");
  for (std::size_t k = 0; k < archs.size(); ++k) {
    if (archs[k].class_id != k) throw std::invalid_argument("policy: architectures must be ordered by class");
    validate_row(archs[k].ops, policy.edges(), policy.op_count());
  }
}

/// Samples every edge of every class independently from softmax(theta[k,e,:]).
inline std::vector<ArchCode> sample_archs(const PolicyParams& policy, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ArchCode> out(policy.classes());
  for (std::size_t k = 0; k < policy.classes(); ++k) {
    out[k].class_id = k;
    out[k].ops.resize(policy.edges());
    for (std::size_t e = 0; e < policy.edges(); ++e) {
      const auto p = policy.probabilities(k, e);
      const double u = unit(rng);
      double cdf = 0.0;
      OpIndex pick = static_cast<OpIndex>(p.size() - 1);
      for (std::size_t o = 0; o < p.size(); ++o) {
        cdf += p[o];
        if (u < cdf) {
          pick = static_cast<OpIndex>(o);
          break;
        }
      }
      out[k].ops[e] = pick;
    }
  }
  return out;
}

/// log Prob(A) = sum over classes and edges of log softmax(theta)[chosen].
inline double arch_log_prob(const PolicyParams& policy, const std::vector<ArchCode>& archs) {
  validate_joint_action(policy, archs);
  double lp = 0.0;
  for (std::size_t k = 0; k < archs.size(); ++k)
    for (std::size_t e = 0; e < policy.edges(); ++e) lp += policy.log_probability(k, e, archs[k].ops[e]);
  return lp;
}

/// d log Prob(A) / d theta, laid out like theta: onehot(chosen) - softmax(row).
inline std::vector<double> log_prob_gradient(const PolicyParams& policy, const std::vector<ArchCode>& archs) {
  validate_joint_action(policy, archs);
  const std::size_t ops = policy.op_count();
  std::vector<double> g(policy.theta().numel(), 0.0);
  for (std::size_t k = 0; k < archs.size(); ++k)
    for (std::size_t e = 0; e < policy.edges(); ++e) {
      const auto p = policy.probabilities(k, e);
      double* row = g.data() + (k * policy.edges() + e) * ops;
      for (std::size_t o = 0; o < ops; ++o) row[o] = (o == archs[k].ops[e] ? 1.0 : 0.0) - p[o];
    }
  return g;
}

/// Ascent direction (1/m) * sum_k (R(a_k) - r) * grad log pi(a_k).
inline std::vector<double> reinforce_gradient(const PolicyParams& policy, std::span<const RewardSample> samples,
                                              const MovingBaseline& baseline) {
  if (samples.empty()) throw std::invalid_argument("reinforce: empty sample set");
  std::vector<double> total(policy.theta().numel(), 0.0);
  const double m = static_cast<double>(samples.size());
  for (const RewardSample& s : samples) {
    if (!std::isfinite(s.reward)) throw NumericError("reinforce: non-finite reward");
    const double adv = s.reward - baseline.value;
    const auto g = log_prob_gradient(policy, s.archs);
    for (std::size_t i = 0; i < g.size(); ++i) total[i] += adv * g[i] / m;
  }
  return total;
}

/// One Adam step that increases the expected reward. Returns the raw ascent gradient.
inline std::vector<double> reinforce_update(PolicyParams& policy, std::span<const RewardSample> samples,
                                            const MovingBaseline& baseline) {
  auto g = reinforce_gradient(policy, samples, baseline);
  auto dst = policy.theta().ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = -g[i];
  policy.optimizer().step();
  policy.theta().zero_grad();
  return g;
}

/// |O| architecture rows in which every edge carries a random permutation of
/// the operator indices, so each operator appears exactly once per edge.
inline std::vector<ArchRow> fair_sample_round(std::size_t op_count, std::size_t edges, Rng& rng) {
  if (op_count == 0) throw std::invalid_argument("fair_sample_round: no operators");
  std::vector<ArchRow> rows(op_count, ArchRow(edges));
  ArchRow perm(op_count);
  for (std::size_t e = 0; e < edges; ++e) {
    std::iota(perm.begin(), perm.end(), OpIndex{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t r = 0; r < op_count; ++r) rows[r][e] = perm[r];
  }
  return rows;
}

inline nlohmann::json policy_to_json(const PolicyParams& policy, const MovingBaseline& baseline) {
  const AdamState& st = policy.optimizer().states()[0];
  return {{"shape", policy.theta().shape()},
          {"theta", std::vector<double>(policy.theta().values().begin(), policy.theta().values().end())},
          {"baseline", {{"value", baseline.value}, {"momentum", baseline.momentum}, {"initialized", baseline.initialized}}},
          {"adam", {{"t", st.t}, {"m", st.m}, {"v", st.v}}}};
}

inline void policy_from_json(const nlohmann::json& j, PolicyParams& policy, MovingBaseline& baseline) {
  const Shape shape = j.at("shape").get<Shape>();
  if (shape != policy.theta().shape()) {
    throw DimensionError("policy checkpoint: theta shape " + shape_str(shape) + " != " +
                         shape_str(policy.theta().shape()));
  }
  const auto theta = j.at("theta").get<std::vector<double>>();
  if (theta.size() != policy.theta().numel()) throw DimensionError("policy checkpoint: theta length");
  check_finite("policy checkpoint", theta);
  std::copy(theta.begin(), theta.end(), policy.theta().values().begin());
  const auto& b = j.at("baseline");
  baseline.value = b.at("value").get<double>();
  baseline.momentum = b.at("momentum").get<double>();
  baseline.initialized = b.at("initialized").get<bool>();
  AdamState& st = policy.optimizer().states()[0];
  st.t = j.at("adam").at("t").get<std::uint64_t>();
  st.m = j.at("adam").at("m").get<std::vector<double>>();
  st.v = j.at("adam").at("v").get<std::vector<double>>();
}

}  // namespace canas
