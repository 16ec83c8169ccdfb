// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <thread>

#include "blockpg/error.hpp"
#include "blockpg/trainer.hpp"

namespace blockpg::trainer {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::kPpo: return "ppo";
    case Objective::kMpo: return "mpo";
    case Objective::kGrpo: return "grpo";
  }
  return "?";
}

Objective parse_objective(const std::string& text) {
  if (text == "ppo") return Objective::kPpo;
  if (text == "mpo") return Objective::kMpo;
  if (text == "grpo") return Objective::kGrpo;
  throw ConfigError("unknown objective '" + text + "' (expected ppo, mpo or grpo)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + text + "' (expected adam or sgd)");
}

algo::RatioKind parse_ratio(const std::string& text) {
  if (text == "blend") return algo::RatioKind::kBlend;
  if (text == "product") return algo::RatioKind::kProduct;
  if (text == "token") return algo::RatioKind::kToken;
  throw ConfigError("unknown ratio '" + text + "' (expected blend, product or token)");
}

std::unique_ptr<envs::SequenceTask> make_task(const TaskConfig& config) {
  if (config.name == "block_copy") return envs::block_copy_task(config.block_len, config.vocab);
  if (config.name == "modular_chain") {
    return envs::modular_chain_task(config.chain_length, config.modulus, config.vocab);
  }
  throw ConfigError("unknown task '" + config.name + "' (expected block_copy or modular_chain)");
}

model::ModelConfig TrainConfig::resolved_model() const {
  model::ModelConfig m = model;
  m.vocab_size = make_task(task)->vocab_size();
  return m;
}

algo::BlendSpec TrainConfig::blend() const { return algo::decay_weights(model.K, beta2, decay); }

algo::RatioKind TrainConfig::effective_ratio() const {
  return objective == Objective::kMpo ? ratio : algo::RatioKind::kToken;
}

algo::AdvantageKind TrainConfig::effective_advantage() const {
  return objective == Objective::kGrpo ? algo::AdvantageKind::kGroupRelative : advantage;
}

std::vector<double> TrainConfig::alphas() const { return algo::default_alphas(model.K, alpha_base, alpha_decay); }

void TrainConfig::validate() const {
  const auto t = make_task(task);
  const auto m = resolved_model();
  m.validate();
  if (m.max_seq_len < t->max_prompt() + t->max_completion()) {
    throw ConfigError("model.max_seq_len " + std::to_string(m.max_seq_len) + " is shorter than the longest episode (" +
                      std::to_string(t->max_prompt() + t->max_completion()) + " tokens)");
  }
  clip.validate();
  (void)blend();
  if (objective == Objective::kMpo && ratio != algo::RatioKind::kToken && model.K < 2) {
    throw ConfigError("objective mpo with a block ratio needs model.K >= 2");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(lambda_gae >= 0.0 && lambda_gae <= 1.0)) throw ConfigError("gae lambda must lie in [0, 1]");
  if (effective_advantage() == algo::AdvantageKind::kGroupRelative && group_size < 2) {
    throw ConfigError("group-relative advantages need group_size >= 2");
  }
  if (group_size == 0 || rollout_batch % group_size != 0) {
    throw ConfigError("rollout_batch must be a positive multiple of group_size");
  }
  if (rollout_batch == 0 || minibatch == 0 || minibatch > rollout_batch) {
    throw ConfigError("minibatch must lie in [1, rollout_batch]");
  }
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0) || !(warmup_lr > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (max_grad_norm < 0.0) throw ConfigError("max_grad_norm must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (entropy_coef < 0.0) throw ConfigError("entropy_coef must be non-negative");
  if (warmup_steps > 0 && warmup_batch == 0) throw ConfigError("warmup_batch must be at least 1");
  if (warmup_corpus != "policy" && warmup_corpus != "demonstration" && warmup_corpus != "counting") {
    throw ConfigError("warmup corpus must be 'policy', 'demonstration' or 'counting', got '" + warmup_corpus + "'");
  }
  if (warmup_steps > 0 && warmup_corpus_size == 0) throw ConfigError("warmup corpus size must be at least 1");
  if (alpha_base < 0.0 || alpha_decay < 0.0) throw ConfigError("warm-up weights must be non-negative");
}

std::size_t thread_budget(std::size_t requested) {
  std::size_t cap = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BLOCKPG_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) cap = static_cast<std::size_t>(v);
  }
  return requested == 0 ? cap : std::min(requested, cap);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace blockpg::trainer
