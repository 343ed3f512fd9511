#include <gtest/gtest.h>

#include <numbers>

#include "bandit.hpp"
#include "canas/policy.hpp"

using namespace canas;

namespace {

void set_random_theta(PolicyParams& p, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : p.theta().values()) v = n(rng);
}

// Every code of a single-class policy, in lexicographic order.
std::vector<std::vector<ArchCode>> all_codes(std::size_t edges, std::size_t ops) {
  std::vector<std::vector<ArchCode>> out;
  ArchRow row(edges, 0);
  while (true) {
    out.push_back({{0, row}});
    std::size_t i = 0;
    while (i < edges && ++row[i] == ops) row[i++] = 0;
    if (i == edges) break;
  }
  return out;
}

}  // namespace

TEST(Policy, RowsAreNormalizedAndPositive) {
  Rng rng(1);
  PolicyParams p(3, 5, 4, {});
  set_random_theta(p, rng, 5.0);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t e = 0; e < 5; ++e) {
      const auto pr = p.probabilities(k, e);
      double s = 0.0;
      for (double v : pr) {
        EXPECT_GT(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Policy, UniformSamplingFrequency) {
  PolicyParams p(1, 1, 2, {});
  Rng rng(2);
  int ones = 0;
  for (int i = 0; i < 10000; ++i) ones += sample_archs(p, rng)[0].ops[0];
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.02);
}

TEST(Policy, SaturatedRowAlmostSurelyPicksMax) {
  PolicyParams p(1, 1, 2, {});
  p.theta().values()[1] = 20.0;
  EXPECT_GT(p.probabilities(0, 0)[1], 1.0 - 1e-8);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_archs(p, rng)[0].ops[0], 1u);
}

TEST(Policy, JointProbabilityIsProductOfEdges) {
  Rng rng(4);
  PolicyParams p(1, 3, 2, {});
  set_random_theta(p, rng);
  double total = 0.0;
  for (const auto& code : all_codes(3, 2)) {
    double prod = 1.0;
    for (std::size_t e = 0; e < 3; ++e) prod *= p.probabilities(0, e)[code[0].ops[e]];
    EXPECT_NEAR(std::exp(arch_log_prob(p, code)), prod, 1e-15);
    total += prod;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Policy, NormalizationExhaustiveProperty) {
  for (std::size_t edges : {1u, 4u, 9u, 12u})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      PolicyParams p(1, edges, 2, {});
      set_random_theta(p, rng, 2.0);
      double total = 0.0;
      for (const auto& code : all_codes(edges, 2)) total += std::exp(arch_log_prob(p, code));
      EXPECT_NEAR(total, 1.0, 1e-9) << "E=" << edges;
    }
  Rng rng(9);
  PolicyParams p3(1, 6, 3, {});
  set_random_theta(p3, rng, 2.0);
  double total = 0.0;
  for (const auto& code : all_codes(6, 3)) total += std::exp(arch_log_prob(p3, code));
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Policy, LogProbClosedForms) {
  PolicyParams p(1, 9, 2, {});
  const std::vector<ArchCode> a{{0, ArchRow(9, 1)}};
  EXPECT_NEAR(arch_log_prob(p, a), -9.0 * std::numbers::ln2, 1e-12);
  for (std::size_t e = 0; e < 9; ++e) p.theta().values()[e * 2 + 1] = 40.0;
  EXPECT_NEAR(arch_log_prob(p, a), 0.0, 1e-12);
}

TEST(Policy, LogProbValidation) {
  PolicyParams p(2, 3, 2, {});
  EXPECT_THROW(arch_log_prob(p, {{0, ArchRow(3, 0)}}), std::invalid_argument);
  EXPECT_THROW(arch_log_prob(p, {{1, ArchRow(3, 0)}, {0, ArchRow(3, 0)}}), std::invalid_argument);
  EXPECT_THROW(arch_log_prob(p, {{0, ArchRow(3, 0)}, {1, ArchRow(3, 2)}}), std::out_of_range);
}

TEST(Reinforce, BaselineEqualRewardsLeaveThetaUnchanged) {
  Rng rng(5);
  PolicyParams p(2, 3, 2, {});
  set_random_theta(p, rng);
  const std::vector<double> before(p.theta().values().begin(), p.theta().values().end());
  MovingBaseline b{0.7, 0.9, true};
  std::vector<RewardSample> s;
  for (int i = 0; i < 4; ++i) s.push_back({sample_archs(p, rng), 0.7, 0.0});
  for (double g : reinforce_update(p, s, b)) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(std::vector<double>(p.theta().values().begin(), p.theta().values().end()), before);
}

TEST(Reinforce, SingleEdgeClosedForm) {
  PolicyParams p(1, 1, 2, {});
  MovingBaseline b{0.0, 0.9, true};
  const std::vector<RewardSample> s{{{{0, {0}}}, 1.0, 0.0}};
  const auto g = reinforce_update(p, s, b);
  EXPECT_DOUBLE_EQ(g[0], 0.5);
  EXPECT_DOUBLE_EQ(g[1], -0.5);
  EXPECT_GT(p.theta()[0], p.theta()[1]);
}

TEST(Reinforce, ScoreHasZeroMeanProperty) {
  Rng rng(6);
  PolicyParams p(2, 3, 3, {});
  set_random_theta(p, rng);
  const std::size_t n = 50000, d = p.theta().numel();
  std::vector<double> mean(d, 0.0), sq(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = log_prob_gradient(p, sample_archs(p, rng));
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] += g[j];
      sq[j] += g[j] * g[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double m = mean[j] / n, var = sq[j] / n - m * m;
    EXPECT_LE(std::abs(m), 3.0 * std::sqrt(var / n) + 1e-12) << j;
  }
}

TEST(Reinforce, ExpectedGradientIsBaselineInvariant) {
  // Exact expectation over all codes: the shift term multiplies E[grad log pi] = 0.
  Rng rng(7);
  PolicyParams p(1, 4, 2, {});
  set_random_theta(p, rng);
  const auto codes = all_codes(4, 2);
  std::vector<double> reward;
  for (std::size_t i = 0; i < codes.size(); ++i) reward.push_back(std::sin(static_cast<double>(i)));
  auto expected = [&](double shift) {
    std::vector<double> e(p.theta().numel(), 0.0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
      const double pr = std::exp(arch_log_prob(p, codes[i]));
      const std::vector<RewardSample> one{{codes[i], reward[i] + shift, 0.0}};
      const auto g = reinforce_gradient(p, one, MovingBaseline{0.0, 0.9, true});
      for (std::size_t j = 0; j < e.size(); ++j) e[j] += pr * g[j];
    }
    return e;
  };
  const auto a = expected(0.0), b = expected(3.7);
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

TEST(Reinforce, AdvantageScalingScalesGradientExactly) {
  Rng rng(8);
  PolicyParams p(2, 3, 2, {});
  set_random_theta(p, rng);
  std::vector<RewardSample> s, scaled;
  const MovingBaseline b{0.25, 0.9, true};
  for (int i = 0; i < 4; ++i) {
    auto a = sample_archs(p, rng);
    const double r = 0.1 * i;
    s.push_back({a, r, 0.0});
    scaled.push_back({a, b.value + 4.0 * (r - b.value), 0.0});
  }
  const auto g = reinforce_gradient(p, s, b), g4 = reinforce_gradient(p, scaled, b);
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_NEAR(g4[j], 4.0 * g[j], 1e-15);
}

TEST(Reinforce, RejectsEmptyAndNonFinite) {
  PolicyParams p(1, 1, 2, {});
  MovingBaseline b;
  EXPECT_THROW(reinforce_gradient(p, std::vector<RewardSample>{}, b), std::invalid_argument);
  const std::vector<RewardSample> s{{{{0, {0}}}, std::nan(""), 0.0}};
  EXPECT_THROW(reinforce_gradient(p, s, b), NumericError);
  EXPECT_THROW(update_baseline(b, INFINITY), NumericError);
}

TEST(Reinforce, PlantedBanditRecovery) {
  int good = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = canas::testing::planted_bandit(100 + seed, 10, 9, 2, 2000);
    if (r.recovered >= 0.95) ++good;
  }
  EXPECT_EQ(good, 3);
}

TEST(Baseline, ConstantRewardsExact) {
  MovingBaseline b;
  for (int i = 0; i < 5; ++i) {
    update_baseline(b, 2.5);
    EXPECT_EQ(b.value, 2.5);
  }
}

TEST(Baseline, ZeroMomentumTracksLatest) {
  MovingBaseline b{0.0, 0.0, false};
  for (double r : {1.0, -3.0, 0.5}) {
    update_baseline(b, r);
    EXPECT_EQ(b.value, r);
  }
}

TEST(Baseline, MomentumClosedForm) {
  MovingBaseline b{0.0, 0.9, false};
  update_baseline(b, 1.0);
  update_baseline(b, 0.0);
  EXPECT_DOUBLE_EQ(b.value, 0.9);
}

TEST(Baseline, ConvexCombinationProperty) {
  Rng rng(10);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  MovingBaseline b;
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 0; i < 200; ++i) {
    const double r = u(rng);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
    update_baseline(b, r);
    EXPECT_GE(b.value, lo);
    EXPECT_LE(b.value, hi);
  }
}

TEST(Fairness, TwoOperatorsAreComplementary) {
  Rng rng(11);
  const auto rows = fair_sample_round(2, 3, rng);
  ASSERT_EQ(rows.size(), 2u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(rows[0][e] + rows[1][e], 1u);
}

TEST(Fairness, ExactExposureCounts) {
  Rng rng(12);
  for (std::size_t ops = 1; ops <= 4; ++ops) {
    const std::size_t edges = 9, rounds = 37;
    std::vector<std::size_t> count(edges * ops, 0);
    for (std::size_t r = 0; r < rounds; ++r) {
      const auto rows = fair_sample_round(ops, edges, rng);
      ASSERT_EQ(rows.size(), ops);
      for (std::size_t e = 0; e < edges; ++e) {
        std::vector<OpIndex> seen;
        for (const auto& row : rows) seen.push_back(row[e]);
        std::sort(seen.begin(), seen.end());
        for (std::size_t o = 0; o < ops; ++o) EXPECT_EQ(seen[o], o);
        for (const auto& row : rows) ++count[e * ops + row[e]];
      }
    }
    for (std::size_t c : count) EXPECT_EQ(c, rounds);
  }
  EXPECT_THROW(fair_sample_round(0, 3, rng), std::invalid_argument);
}

TEST(Policy, CheckpointRoundTrip) {
  Rng rng(13);
  PolicyParams p(2, 3, 2, {});
  MovingBaseline b;
  update_baseline(b, 0.4);
  const std::vector<RewardSample> s{{sample_archs(p, rng), 1.0, 0.0}};
  reinforce_update(p, s, b);
  const auto j = policy_to_json(p, b);
  PolicyParams q(2, 3, 2, {});
  MovingBaseline c;
  policy_from_json(nlohmann::json::parse(j.dump()), q, c);
  EXPECT_EQ(policy_to_json(q, c).dump(), j.dump());
  PolicyParams wrong(3, 3, 2, {});
  EXPECT_THROW(policy_from_json(j, wrong, c), DimensionError);
}
