// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "blockpg/error.hpp"
#include "blockpg/trainer.hpp"

namespace model = blockpg::model;
namespace trainer = blockpg::trainer;

namespace {

trainer::TrainConfig tiny_config(std::size_t K = 3) {
  trainer::TrainConfig c;
  c.task.block_len = 3;
  c.task.vocab = 6;
  c.model.d_model = 8;
  c.model.K = K;
  c.rollout_batch = 8;
  c.minibatch = 4;
  c.epochs = 1;
  c.updates = 4;
  c.warmup_steps = 5;
  c.warmup_batch = 4;
  c.warmup_corpus_size = 16;
  c.seed = 21;
  return c;
}

bool same_group(const model::PolicyParameters& a, const model::PolicyParameters& b, model::ParamGroup group) {
  for (const auto& [name, t] : a.tensors()) {
    if (model::group_of(name) == group && !(t == b.at(name))) return false;
  }
  return true;
}

std::vector<std::size_t> all_indices(const trainer::RolloutBatch& batch) {
  std::vector<std::size_t> idx(batch.trajectories.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TEST(TrainConfig, DefaultsValidate) { EXPECT_NO_THROW(trainer::TrainConfig{}.validate()); }

TEST(TrainConfig, RejectsNonPositiveCountsAndRates) {
  auto c = tiny_config();
  c.actor_lr = 0.0;
  EXPECT_THROW(c.validate(), blockpg::ConfigError);
  c = tiny_config();
  c.minibatch = 0;
  EXPECT_THROW(c.validate(), blockpg::ConfigError);
  c = tiny_config();
  c.beta2 = 0.6;
  c.decay = 1.0;
  EXPECT_THROW(c.validate(), blockpg::ConfigError);
}

TEST(Warmup, ZeroStepsLeavesParametersUnchanged) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto before = tr.params();
  const auto corpus = trainer::stage1_corpus(tr.config(), tr.task(), tr.params());
  tr.warmup(corpus, 0);
  EXPECT_EQ(tr.params(), before);
}

TEST(Warmup, UpdatesOnlyMtpParameters) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto before = tr.params();
  const auto corpus = trainer::stage1_corpus(tr.config(), tr.task(), tr.params());
  const auto result = tr.warmup(corpus, 10);
  EXPECT_EQ(result.loss_trace.size(), 10u);
  EXPECT_TRUE(same_group(before, tr.params(), model::ParamGroup::kBackbone));
  EXPECT_TRUE(same_group(before, tr.params(), model::ParamGroup::kValue));
  EXPECT_FALSE(same_group(before, tr.params(), model::ParamGroup::kMtp));
}

TEST(Warmup, SingleOffsetModelIsSkippedWithWarning) {
  auto c = tiny_config(1);
  c.objective = trainer::Objective::kPpo;
  trainer::Trainer tr(c, 1);
  const auto before = tr.params();
  const auto corpus = trainer::demonstration_corpus(tr.task(), 8, 1);
  const auto result = tr.warmup(corpus, 10);
  EXPECT_TRUE(result.skipped);
  EXPECT_FALSE(result.warning.empty());
  EXPECT_EQ(tr.params(), before);
}

TEST(Warmup, CountingCorpusLossFalls) {
  auto c = tiny_config(4);
  c.warmup_corpus = "counting";
  c.warmup_corpus_size = 64;
  c.warmup_batch = 16;
  trainer::Trainer tr(c, 1);
  const auto corpus = trainer::stage1_corpus(c, tr.task(), tr.params());
  const double before = trainer::corpus_warmup_loss(tr.params(), corpus, c.alphas());
  tr.warmup(corpus, 150);
  EXPECT_LT(trainer::corpus_warmup_loss(tr.params(), corpus, c.alphas()), 0.5 * before);
}

TEST(Rollouts, OneTrajectoryPerPromptAndSeeded) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto snap = model::snapshot(tr.params());
  const auto a = tr.collect_rollouts(snap, 0);
  const auto b = tr.collect_rollouts(snap, 0);
  ASSERT_EQ(a.trajectories.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a.trajectories[i].prompt, b.trajectories[i].prompt);
    EXPECT_EQ(a.trajectories[i].completion, b.trajectories[i].completion);
    EXPECT_EQ(a.trajectories[i].old_log_probs, b.trajectories[i].old_log_probs);
    EXPECT_EQ(a.trajectories[i].group, i);
  }
}

TEST(Rollouts, StoredLogProbsReproduceFromSnapshot) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto snap = model::snapshot(tr.params());
  const auto batch = tr.collect_rollouts(snap, 3);
  for (const auto& t : batch.trajectories) {
    const auto again = model::forward_mtp_chain(snap.params(), t.tokens(), t.prompt.size(), 3);
    ASSERT_EQ(again.values.size(), t.old_log_probs.values.size());
    for (std::size_t i = 0; i < again.values.size(); ++i) {
      EXPECT_NEAR(again.values[i], t.old_log_probs.values[i], 1e-12);
    }
  }
}

TEST(Rollouts, ThreadCountDoesNotChangeBatch) {
  trainer::Trainer one(tiny_config(), 1);
  trainer::Trainer many(tiny_config(), 3);
  const auto snap = model::snapshot(one.params());
  const auto a = one.collect_rollouts(snap, 2);
  const auto b = many.collect_rollouts(snap, 2);
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    EXPECT_EQ(a.trajectories[i].completion, b.trajectories[i].completion);
    EXPECT_EQ(a.trajectories[i].old_log_probs, b.trajectories[i].old_log_probs);
  }
}

TEST(TrainStep, FirstStepIsOnPolicy) {
  trainer::Trainer tr(tiny_config(), 1);
  auto batch = tr.collect_rollouts(model::snapshot(tr.params()), 0);
  tr.compute_advantages(batch);
  const auto rec = tr.train_step(batch, all_indices(batch));
  EXPECT_EQ(rec.clip_fraction, 0.0);
  EXPECT_LE(rec.ratio_variance, 1e-24);
  EXPECT_EQ(rec.update, 1u);
}

TEST(TrainStep, ZeroAdvantagesLeavePolicyUnchangedUnderSgd) {
  auto c = tiny_config();
  c.optimizer = trainer::OptimizerKind::kSgd;
  trainer::Trainer tr(c, 1);
  auto batch = tr.collect_rollouts(model::snapshot(tr.params()), 0);
  tr.compute_advantages(batch);
  for (auto& t : batch.trajectories) std::fill(t.advantages.begin(), t.advantages.end(), 0.0);
  const auto before = tr.params();
  const auto rec = tr.train_step(batch, all_indices(batch));
  EXPECT_EQ(rec.grad_norm, 0.0);
  EXPECT_TRUE(same_group(before, tr.params(), model::ParamGroup::kBackbone));
  EXPECT_TRUE(same_group(before, tr.params(), model::ParamGroup::kMtp));
}

TEST(TrainStep, FrozenBackboneStaysBitIdentical) {
  auto c = tiny_config();
  c.freeze_backbone = true;
  trainer::Trainer tr(c, 1);
  auto batch = tr.collect_rollouts(model::snapshot(tr.params()), 0);
  tr.compute_advantages(batch);
  const auto before = tr.params();
  tr.train_step(batch, all_indices(batch));
  tr.train_step(batch, all_indices(batch));
  EXPECT_TRUE(same_group(before, tr.params(), model::ParamGroup::kBackbone));
  EXPECT_FALSE(same_group(before, tr.params(), model::ParamGroup::kMtp));
}

TEST(TrainStep, MissingAdvantagesAreInputError) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto batch = tr.collect_rollouts(model::snapshot(tr.params()), 0);
  EXPECT_THROW(tr.train_step(batch, all_indices(batch)), blockpg::InputError);
}

TEST(Train, ZeroUpdatesReturnWarmStartedParameters) {
  auto c = tiny_config();
  c.updates = 0;
  trainer::Trainer tr(c, 1);
  const auto corpus = trainer::stage1_corpus(c, tr.task(), tr.params());
  tr.warmup(corpus, c.warmup_steps);
  const auto warmed = tr.params();
  const auto result = tr.train();
  EXPECT_TRUE(result.trace.empty());
  EXPECT_EQ(result.params, warmed);
}

TEST(Train, SameSeedSameTrace) {
  trainer::Trainer a(tiny_config(), 1);
  trainer::Trainer b(tiny_config(), 2);
  const auto ra = a.train();
  const auto rb = b.train();
  ASSERT_EQ(ra.trace.size(), 4u);
  EXPECT_EQ(ra.trace, rb.trace);
  EXPECT_EQ(ra.params, rb.params);
}

TEST(Train, UpdateIndicesIncrease) {
  trainer::Trainer tr(tiny_config(), 1);
  const auto result = tr.train();
  for (std::size_t i = 0; i < result.trace.size(); ++i) EXPECT_EQ(result.trace[i].update, i + 1);
}

TEST(Train, MassZeroMpoMatchesPpo) {
  auto mpo = tiny_config();
  mpo.beta2 = 0.0;
  auto ppo = mpo;
  ppo.objective = trainer::Objective::kPpo;
  const auto a = trainer::Trainer(mpo, 1).train();
  const auto b = trainer::Trainer(ppo, 1).train();
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_NEAR(a.trace[i].ratio_variance, b.trace[i].ratio_variance, 1e-12);
    EXPECT_NEAR(a.trace[i].clip_fraction, b.trace[i].clip_fraction, 1e-12);
    EXPECT_NEAR(a.trace[i].mean_reward, b.trace[i].mean_reward, 1e-12);
    EXPECT_NEAR(a.trace[i].objective, b.trace[i].objective, 1e-12);
    EXPECT_NEAR(a.trace[i].grad_norm, b.trace[i].grad_norm, 1e-12);
  }
}

TEST(Train, KOneMpoMatchesPpo) {
  auto mpo = tiny_config(1);
  mpo.ratio = blockpg::algo::RatioKind::kToken;
  auto ppo = mpo;
  ppo.objective = trainer::Objective::kPpo;
  const auto a = trainer::Trainer(mpo, 1).train();
  const auto b = trainer::Trainer(ppo, 1).train();
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_NEAR(a.trace[i].objective, b.trace[i].objective, 1e-12);
    EXPECT_NEAR(a.trace[i].ratio_variance, b.trace[i].ratio_variance, 1e-12);
  }
}

TEST(Train, GroupRelativeObjectiveRuns) {
  auto c = tiny_config();
  c.objective = trainer::Objective::kGrpo;
  c.group_size = 4;
  const auto result = trainer::Trainer(c, 1).train();
  EXPECT_EQ(result.trace.size(), 4u);
  for (const auto& r : result.trace) EXPECT_TRUE(std::isfinite(r.objective));
}

TEST(Threads, BudgetReadsRequestOrEnvironment) {
  ASSERT_EQ(setenv("BLOCKPG_THREADS", "2", 1), 0);
  EXPECT_EQ(trainer::thread_budget(0), 2u);
  EXPECT_EQ(trainer::thread_budget(3), 2u);
  EXPECT_EQ(trainer::thread_budget(1), 1u);
  unsetenv("BLOCKPG_THREADS");
  EXPECT_GE(trainer::thread_budget(0), 1u);
}
