// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "blockpg/algo.hpp"
#include "blockpg/error.hpp"

namespace ad = blockpg::ad;
namespace algo = blockpg::algo;
namespace model = blockpg::model;

TEST(DecayWeights, BestGridCell) {
  const auto b = algo::decay_weights(5, 0.06, 0.8);
  ASSERT_EQ(b.weights.size(), 5u);
  EXPECT_NEAR(b.weights[1], 0.06, 1e-15);
  EXPECT_NEAR(b.weights[2], 0.048, 1e-15);
  EXPECT_NEAR(b.weights[3], 0.0384, 1e-15);
  EXPECT_NEAR(b.weights[4], 0.03072, 1e-15);
  EXPECT_NEAR(b.weights[0], 0.82288, 1e-15);
  EXPECT_NEAR(std::accumulate(b.weights.begin(), b.weights.end(), 0.0), 1.0, 1e-12);
  EXPECT_NEAR(b.mtp_mass(), 0.17712, 1e-15);
}

TEST(DecayWeights, DegenerateAndFlatSchedules) {
  EXPECT_EQ(algo::decay_weights(1, 0.06, 0.8).weights, std::vector<double>{1.0});
  const auto flat = algo::decay_weights(5, 0.04, 1.0);
  for (std::size_t k = 1; k < 5; ++k) EXPECT_NEAR(flat.weights[k], 0.04, 1e-15);
  EXPECT_NEAR(flat.weights[0], 0.84, 1e-15);
}

TEST(DecayWeights, RejectsMassAboveOne) {
  EXPECT_THROW(algo::decay_weights(5, 0.5, 1.0), blockpg::ConfigError);
}

TEST(DecayWeights, BlendForMassHitsTarget) {
  for (double mass : {0.0, 0.1, 0.2, 0.4}) {
    const auto b = algo::blend_for_mass(5, mass, 0.8);
    EXPECT_NEAR(b.mtp_mass(), mass, 1e-12);
    EXPECT_NEAR(b.weights[0], 1.0 - mass, 1e-12);
  }
}

TEST(DecayWeights, TruncationRenormalizes) {
  const auto b = algo::decay_weights(3, 0.2, 0.5);
  const auto t = b.truncated(2);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(t[0] + t[1], 1.0, 1e-15);
  EXPECT_NEAR(t[1] / t[0], b.weights[1] / b.weights[0], 1e-15);
  EXPECT_EQ(b.truncated(1), std::vector<double>{1.0});
}

TEST(TokenRatios, ExponentiatesDifferences) {
  model::LogProbMatrix next{2, 2, {-1.0, -0.3, -0.7, 0.0}};
  model::LogProbMatrix old{2, 2, {-1.5, -0.3, -0.7, 0.0}};
  const auto r = algo::token_ratios(next, old);
  EXPECT_NEAR(r.at(0, 1), std::exp(0.5), 1e-15);
  EXPECT_NEAR(r.at(0, 1), 1.64872, 1e-5);
  EXPECT_EQ(r.at(0, 2), 1.0);
  EXPECT_EQ(r.at(1, 1), 1.0);
  EXPECT_FALSE(r.available(1, 2));
  EXPECT_EQ(r.at(1, 2), 0.0);
  model::LogProbMatrix other{3, 2, std::vector<double>(6, 0.0)};
  EXPECT_THROW(algo::token_ratios(next, other), blockpg::InputError);
}

TEST(ProductRatio, Examples) {
  EXPECT_DOUBLE_EQ(algo::product_ratio(std::vector<double>{2.0, 0.5}), 1.0);
  EXPECT_NEAR(algo::product_ratio(std::vector<double>{1.1, 1.1, 1.1}), 1.331, 1e-12);
  EXPECT_EQ(algo::product_ratio(std::vector<double>{1.0, 1.0, 1.0}), 1.0);
}

TEST(BlendedRatio, Examples) {
  EXPECT_EQ(algo::blended_ratio(std::vector<double>{1.37, 0.6, 2.0}, algo::decay_weights(3, 0.0, 0.5)), 1.37);
  algo::BlendSpec half{2, 0.5, 1.0, {0.5, 0.5}};
  EXPECT_NEAR(algo::blended_ratio(std::vector<double>{2.0, 0.5}, half), 1.0, 1e-15);
  algo::BlendSpec b82{2, 0.2, 1.0, {0.8, 0.2}};
  EXPECT_NEAR(algo::blended_ratio(std::vector<double>{1.0, std::exp(1.0)}, b82), std::exp(0.2), 1e-15);
  EXPECT_NEAR(algo::blended_ratio(std::vector<double>{1.0, std::exp(1.0)}, b82), 1.22140, 1e-5);
}

TEST(BlendedRatio, NonPositiveRatioIsDomainError) {
  EXPECT_THROW(algo::blended_ratio(std::vector<double>{1.0, 0.0}, algo::decay_weights(2, 0.2, 1.0)),
               blockpg::NumericDomainError);
}

TEST(BlendedRatio, UniformWeightsGiveGeometricMean) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (std::size_t K = 2; K <= 6; ++K) {
    const auto b = algo::decay_weights(K, 1.0 / static_cast<double>(K), 1.0);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> r(K);
      for (auto& x : r) x = u(rng);
      const double expect = std::pow(algo::product_ratio(r), 1.0 / static_cast<double>(K));
      EXPECT_NEAR(algo::blended_ratio(r, b), expect, 1e-12 * expect);
    }
  }
}

TEST(BlendedRatio, TruncatedPositionKeepsOnPolicyFixedPoint) {
  const auto b = algo::decay_weights(5, 0.06, 0.8);
  EXPECT_EQ(algo::blended_ratio(std::vector<double>{1.0, 1.0}, b), 1.0);
}

TEST(BlendedRatio, LogVarianceBelowProductForIndependentOffsets) {
  // Independent per-offset log-ratios: Var(sum beta_n x_n) < Var(sum x_n).
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.2);
  const auto b = algo::decay_weights(5, 0.06, 0.8);
  constexpr std::size_t kDraws = 100000;
  std::vector<double> blend(kDraws);
  std::vector<double> prod(kDraws);
  for (std::size_t i = 0; i < kDraws; ++i) {
    std::vector<double> r(5);
    for (auto& x : r) x = std::exp(n(rng));
    blend[i] = std::log(algo::blended_ratio(r, b));
    prod[i] = std::log(algo::product_ratio(r));
  }
  const auto stats = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double m2 = 0.0;
    double m4 = 0.0;
    for (double x : v) {
      m2 += (x - m) * (x - m);
      m4 += std::pow(x - m, 4);
    }
    m2 /= static_cast<double>(v.size());
    m4 /= static_cast<double>(v.size());
    return std::pair{m2, std::sqrt((m4 - m2 * m2) / static_cast<double>(v.size()))};
  };
  const auto [vb, sb] = stats(blend);
  const auto [vp, sp] = stats(prod);
  EXPECT_LT(vb + 5.0 * std::hypot(sb, sp), vp);
}

TEST(Gae, UndiscountedMonteCarlo) {
  const std::vector<double> rewards{0, 0, 1};
  const std::vector<double> values{0, 0, 0, 0};
  const auto a = algo::gae_advantages(rewards, values, 1.0, 1.0);
  EXPECT_EQ(a.values, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(a.kind, algo::AdvantageKind::kGae);
}

TEST(Gae, SingleStepTdError) {
  const std::vector<double> rewards{2.0};
  const std::vector<double> values{1.0, 0.0};
  EXPECT_DOUBLE_EQ(algo::gae_advantages(rewards, values, 0.9, 0.95).values[0], 1.0);
}

TEST(Gae, ZeroLambdaIsTdError) {
  const std::vector<double> rewards{0.5, -1.0, 2.0};
  const std::vector<double> values{0.3, 0.7, -0.2, 0.4};
  const auto a = algo::gae_advantages(rewards, values, 0.9, 0.0);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(a.values[t], rewards[t] + 0.9 * values[t + 1] - values[t]);
}

TEST(Gae, WrongValueCountIsInputError) {
  const std::vector<double> rewards{1.0, 2.0};
  const std::vector<double> values{0.0, 0.0};
  EXPECT_THROW(algo::gae_advantages(rewards, values, 1.0, 1.0), blockpg::InputError);
}

TEST(KStep, OneStepIsTdError) {
  const std::vector<double> rewards{0.5, -1.0, 2.0};
  const std::vector<double> values{0.3, 0.7, -0.2, 0.4};
  const auto a = algo::kstep_advantage(rewards, values, 0.9, 1);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(a.values[t], rewards[t] + 0.9 * values[t + 1] - values[t]);
}

TEST(KStep, TruncatesAtTerminal) {
  const std::vector<double> rewards{1.0, 2.0, 3.0};
  const std::vector<double> values{0.5, 0.25, 0.125, 0.0};
  const auto g = algo::kstep_returns(rewards, values, 0.5, 2);
  EXPECT_DOUBLE_EQ(g[0], 1.0 + 0.5 * 2.0 + 0.25 * 0.125);
  EXPECT_DOUBLE_EQ(g[1], 2.0 + 0.5 * 3.0);
  EXPECT_DOUBLE_EQ(g[2], 3.0);
  const auto a = algo::kstep_advantage(rewards, values, 0.5, 2);
  EXPECT_DOUBLE_EQ(a.values[0], g[0] - 0.5);
}

TEST(KStep, ConstantValueErrorGivesSignedBias) {
  // V_hat = V + eps everywhere: A_hat - A_true = gamma^K eps - eps.
  const std::vector<double> rewards{0.2, 0.4, 0.1, 0.3, 0.5, 0.0, 0.7, 0.1};
  std::vector<double> values{1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2};
  const double eps = 0.05;
  std::vector<double> shifted = values;
  for (auto& v : shifted) v += eps;
  const double gamma = 0.9;
  for (std::size_t K = 1; K <= 3; ++K) {
    const auto clean = algo::kstep_advantage(rewards, values, gamma, K);
    const auto noisy = algo::kstep_advantage(rewards, shifted, gamma, K);
    for (std::size_t t = 0; t + K <= rewards.size(); ++t) {
      const double err = noisy.values[t] - clean.values[t];
      EXPECT_NEAR(err, std::pow(gamma, K) * eps - eps, 1e-15);
      EXPECT_LE(std::abs(err), (1.0 + std::pow(gamma, K)) * eps);
    }
  }
}

TEST(GroupRelative, Examples) {
  const auto a = algo::group_relative_advantage(std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(a.values[0], 1.0, 1e-7);
  EXPECT_NEAR(a.values[1], -1.0, 1e-7);
  for (double x : algo::group_relative_advantage(std::vector<double>{0.4, 0.4, 0.4}).values) EXPECT_NEAR(x, 0.0, 1e-7);
  const auto b = algo::group_relative_advantage(std::vector<double>{1, 1, 0, 0});
  const std::vector<double> expect{1, 1, -1, -1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b.values[i], expect[i], 1e-7);
  EXPECT_THROW(algo::group_relative_advantage(std::vector<double>{1.0}), blockpg::ConfigError);
}

TEST(GroupRelative, CenteredWithUnitVariance) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> r(9);
  for (auto& x : r) x = u(rng);
  const auto a = algo::group_relative_advantage(r).values;
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / 9.0;
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  EXPECT_NEAR(mean * 9.0, 0.0, 1e-9);
  EXPECT_NEAR(var / 9.0, 1.0, 1e-6);
}

TEST(MonteCarlo, DiscountedRewardToGo) {
  const auto g = algo::discounted_returns(std::vector<double>{1.0, 0.0, 2.0}, 0.5);
  EXPECT_EQ(g, (std::vector<double>{1.5, 1.0, 2.0}));
}

TEST(ClippedSurrogate, Examples) {
  const algo::ClipSpec clip;
  EXPECT_NEAR(algo::clipped_surrogate(std::vector<double>{1, 1, 1}, std::vector<double>{0.5, -1.0, 2.0}, clip, 3.0),
              0.5, 1e-15);
  EXPECT_DOUBLE_EQ(algo::clipped_surrogate(std::vector<double>{1.5}, std::vector<double>{1.0}, clip, 1.0), 1.2);
  EXPECT_DOUBLE_EQ(algo::clipped_surrogate(std::vector<double>{0.5}, std::vector<double>{-1.0}, clip, 1.0), -0.8);
}

TEST(ClippedSurrogate, GraphMatchesValueAndZeroesClippedGradient) {
  const algo::ClipSpec clip;
  const std::vector<double> adv{1.0, -1.0, 1.0, -1.0};
  ad::Bindings b{{"r", ad::Tensor::vector({1.5, 0.5, 1.1, 0.9})}};
  const auto out = ad::value_and_gradients(
      [&](ad::Tape& t) { return algo::surrogate_graph(t, t.leaf("r"), adv, clip, 4.0); }, b);
  EXPECT_NEAR(out.value.item(),
              algo::clipped_surrogate(std::vector<double>{1.5, 0.5, 1.1, 0.9}, adv, clip, 4.0), 1e-15);
  const auto& g = out.gradients.at("r");
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 0.25);
  EXPECT_EQ(g[3], -0.25);
}

TEST(ClipSpec, Validation) {
  EXPECT_THROW((algo::ClipSpec{1.0, 0.2}.validate()), blockpg::ConfigError);
  EXPECT_THROW((algo::ClipSpec{-0.1, 0.2}.validate()), blockpg::ConfigError);
  EXPECT_NO_THROW((algo::ClipSpec{0.2, 0.28}.validate()));
}

TEST(WarmupLoss, Examples) {
  const std::vector<double> alphas{0.3, 0.15};
  const double lv = -std::log(10.0);
  std::vector<model::LogProbMatrix> uniform{{4, 3, {lv, lv, lv, lv, lv, lv, lv, lv, 0, lv, 0, 0}}};
  EXPECT_NEAR(algo::mtp_warmup_loss(uniform, alphas), 0.45 * std::log(10.0), 1e-14);
  EXPECT_NEAR(algo::mtp_warmup_loss(uniform, alphas), 1.03616, 1e-5);
  std::vector<model::LogProbMatrix> perfect{{4, 3, std::vector<double>(12, 0.0)}};
  EXPECT_EQ(algo::mtp_warmup_loss(perfect, alphas), 0.0);
  EXPECT_EQ(algo::mtp_warmup_loss(uniform, std::vector<double>{0.0, 0.0}), 0.0);
}

TEST(WarmupLoss, DefaultAlphasDecay) {
  const auto a = algo::default_alphas(5);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_DOUBLE_EQ(a[0], 0.3);
  EXPECT_DOUBLE_EQ(a[1], 0.15);
  EXPECT_DOUBLE_EQ(a[2], 0.075);
  EXPECT_DOUBLE_EQ(a[3], 0.0375);
}

TEST(Diagnostics, ClipFraction) {
  const algo::ClipSpec clip;
  EXPECT_NEAR(algo::clip_fraction(std::vector<double>{1.3, 1.0, 0.7}, clip), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(algo::clip_fraction(std::vector<double>{0.9, 1.1, 1.0}, clip), 0.0);
  EXPECT_EQ(algo::clip_fraction(std::vector<double>{clip.hi(), clip.lo()}, clip), 0.0);
}

TEST(Diagnostics, RatioVariance) {
  EXPECT_EQ(algo::ratio_variance(std::vector<double>{1.2, 1.2, 1.2}), 0.0);
  EXPECT_DOUBLE_EQ(algo::ratio_variance(std::vector<double>{1.0, 3.0}), 1.0);
  EXPECT_EQ(algo::ratio_variance(std::vector<double>{2.0}), 0.0);
}

TEST(Diagnostics, TokenRank) {
  EXPECT_EQ(algo::token_rank(std::vector<double>{0.1, 0.6, 0.3}, 1), 1u);
  EXPECT_EQ(algo::token_rank(std::vector<double>(5, 0.2), 3), 4u);
  EXPECT_EQ(algo::token_rank(std::vector<double>{0.5, 0.3, 0.2}, 1), 2u);
  EXPECT_THROW(algo::token_rank(std::vector<double>{0.5, 0.5}, 2), blockpg::InputError);
}
