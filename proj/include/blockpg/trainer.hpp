// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Two-stage pipeline: MTP warm-up with the backbone frozen, then clipped
// policy-gradient fine-tuning with per-rollout theta_old snapshots.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blockpg/algo.hpp"
#include "blockpg/envs.hpp"
#include "blockpg/model.hpp"

namespace blockpg::trainer {

enum class Objective { kPpo, kMpo, kGrpo };
enum class OptimizerKind { kSgd, kAdam };

std::string to_string(Objective o);
Objective parse_objective(const std::string& text);
std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& text);
algo::RatioKind parse_ratio(const std::string& text);

struct TaskConfig {
  std::string name = "block_copy";
  std::size_t vocab = 7;
  std::size_t block_len = 4;
  std::size_t chain_length = 2;
  std::size_t modulus = 4;
  bool operator==(const TaskConfig&) const = default;
};

std::unique_ptr<envs::SequenceTask> make_task(const TaskConfig& config);

struct TrainConfig {
  TaskConfig task;
  // vocab_size is taken from the task.
  model::ModelConfig model = [] {
    model::ModelConfig m;
    m.K = 5;
    return m;
  }();
  std::uint64_t seed = 0;

  Objective objective = Objective::kMpo;
  algo::RatioKind ratio = algo::RatioKind::kBlend;
  double beta2 = 0.06;
  double decay = 0.8;
  algo::ClipSpec clip;

  double gamma = 1.0;
  double lambda_gae = 0.95;
  algo::AdvantageKind advantage = algo::AdvantageKind::kGae;
  std::size_t group_size = 1;
  // Off by default: once every reward is 1 a per-batch standardization
  // amplifies critic noise into a full-size update.
  bool normalize_advantages = false;

  OptimizerKind optimizer = OptimizerKind::kAdam;
  double actor_lr = 3e-3;
  double critic_lr = 3e-2;
  // 0 disables gradient-norm clipping of the actor step.
  double max_grad_norm = 0.0;

  std::size_t rollout_batch = 64;
  std::size_t minibatch = 16;
  std::size_t epochs = 2;
  std::size_t updates = 2000;
  double temperature = 1.0;
  double entropy_coef = 0.0;
  bool freeze_backbone = false;

  // Stage 1.
  std::size_t warmup_steps = 300;
  double warmup_lr = 1e-2;
  std::size_t warmup_batch = 16;
  double alpha_base = 0.3;
  double alpha_decay = 0.5;

  // Stage 1 corpus: sequences sampled from the initial policy ("policy"), task
  // demonstrations ("demonstration"), or arithmetic-progression sequences
  // ("counting").
  std::string warmup_corpus = "policy";
  std::size_t warmup_corpus_size = 512;
  // Whether Stage 2 steps also move the MTP modules.
  bool train_mtp = true;

  // Start from a checkpoint instead of a fresh seeded model; skips Stage 1.
  std::string init_checkpoint;

  // Model config with the task's vocabulary filled in.
  model::ModelConfig resolved_model() const;
  algo::BlendSpec blend() const;
  // The ratio the objective actually uses: token-level for PPO and GRPO.
  algo::RatioKind effective_ratio() const;
  algo::AdvantageKind effective_advantage() const;
  std::vector<double> alphas() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct SequenceExample {
  std::vector<model::Token> tokens;
  std::size_t prompt_len = 1;
};

struct Trajectory {
  std::vector<model::Token> prompt;
  std::vector<model::Token> completion;
  model::LogProbMatrix old_log_probs;
  double reward = 0.0;
  std::vector<double> values;      // V(s_0)..V(s_{T-1}) under theta_old
  std::vector<double> advantages;  // per position
  std::vector<double> returns;     // discounted reward-to-go, critic targets
  std::size_t group = 0;
  // Per offset 2..K: summed 1-based rank of the realized token under the MTP
  // head, and the number of scored cells.
  std::vector<double> rank_sum;
  std::vector<std::size_t> rank_cells;

  std::vector<model::Token> tokens() const;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::uint64_t snapshot_id = 0;
  double mean_reward() const;
};

struct MetricsRecord {
  std::size_t update = 0;
  double ratio_variance = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double mean_reward = 0.0;
  std::vector<double> token_rank;  // offsets 2..K
  double objective = 0.0;
  bool operator==(const MetricsRecord&) const = default;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}
  // Descends `grads` for every parameter accepted by `selected`.
  void step(ad::Bindings& params, const ad::Gradients& grads,
            const std::function<bool(const std::string&)>& selected);

 private:
  struct Moments {
    ad::Tensor m;
    ad::Tensor v;
    std::size_t t = 0;
  };
  OptimizerKind kind_;
  double lr_;
  std::map<std::string, Moments, std::less<>> state_;
};

struct WarmupResult {
  std::vector<double> loss_trace;
  bool skipped = false;
  std::string warning;
};

// Mean warm-up loss over a corpus under the current MTP modules.
double corpus_warmup_loss(const model::PolicyParameters& params, std::span<const SequenceExample> corpus,
                          std::span<const double> alphas);

// Demonstration sequences (prompt + correct completion) drawn from the task.
std::vector<SequenceExample> demonstration_corpus(const envs::SequenceTask& task, std::size_t count,
                                                  std::uint64_t seed);

// Completions sampled from the backbone at temperature 1 on task prompts.
std::vector<SequenceExample> policy_corpus(const envs::SequenceTask& task, const model::PolicyParameters& params,
                                           std::size_t count, std::uint64_t seed);

// The Stage 1 corpus selected by config.warmup_corpus.
std::vector<SequenceExample> stage1_corpus(const TrainConfig& config, const envs::SequenceTask& task,
                                           const model::PolicyParameters& params);

struct TrainResult {
  model::PolicyParameters params;
  WarmupResult warmup;
  std::vector<MetricsRecord> trace;
};

class Trainer {
 public:
  // threads == 0 reads BLOCKPG_THREADS (default 1).
  explicit Trainer(TrainConfig config, std::size_t threads = 0);
  Trainer(TrainConfig config, model::PolicyParameters params, std::size_t threads = 0);

  const TrainConfig& config() const noexcept { return config_; }
  const envs::SequenceTask& task() const noexcept { return *task_; }
  const model::PolicyParameters& params() const noexcept { return params_; }
  model::PolicyParameters& params() noexcept { return params_; }

  // Stage 1: updates only MTP parameters. A K = 1 model is a no-op with a
  // warning.
  WarmupResult warmup(std::span<const SequenceExample> corpus, std::size_t steps);

  RolloutBatch collect_rollouts(const model::Snapshot& old, std::uint64_t rollout_index) const;
  void compute_advantages(RolloutBatch& batch) const;

  // One optimizer step on the given trajectories of `batch`.
  MetricsRecord train_step(const RolloutBatch& batch, std::span<const std::size_t> indices);

  // Stage 1 (unless skipped or already run through warmup()) then the Stage 2
  // loop until `updates` steps.
  TrainResult train(const std::function<void(const MetricsRecord&)>& on_record = {});

 private:
  std::size_t score_depth() const;

  TrainConfig config_;
  std::unique_ptr<envs::SequenceTask> task_;
  model::PolicyParameters params_;
  std::size_t threads_;
  Optimizer actor_;
  Optimizer critic_;
  std::size_t update_ = 0;
  bool warmed_up_ = false;
};

std::size_t thread_budget(std::size_t requested);

// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace blockpg::trainer
