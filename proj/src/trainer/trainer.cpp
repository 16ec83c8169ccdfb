// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/trainer.hpp"

namespace blockpg::trainer {

namespace {

// Independent stream per (seed, purpose, a, b); the same key always yields the
// same stream regardless of which thread draws from it.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose,
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kPromptStream = 0x70726f6d;
constexpr std::uint32_t kSampleStream = 0x73616d70;
constexpr std::uint32_t kShuffleStream = 0x73687566;
constexpr std::uint32_t kWarmupStream = 0x7761726d;
constexpr std::uint32_t kCorpusStream = 0x636f7270;

void add_into(ad::Gradients& total, const ad::Gradients& part) {
  for (const auto& [name, g] : part) {
    auto it = total.find(name);
    if (it == total.end()) {
      total.emplace(name, g);
      continue;
    }
    auto dst = it->second.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with the platform-independent uniform draw.
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(model::uniform01(rng) * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  return idx;
}

model::PolicyParameters initial_params(const TrainConfig& config) {
  config.validate();
  if (config.init_checkpoint.empty()) return model::PolicyParameters::initialize(config.resolved_model(), config.seed);
  auto params = model::load_checkpoint(config.init_checkpoint);
  if (!(params.config() == config.resolved_model())) {
    throw ConfigError("checkpoint '" + config.init_checkpoint + "' was built for a different model configuration");
  }
  return params;
}

}  // namespace

std::vector<model::Token> Trajectory::tokens() const {
  std::vector<model::Token> all(prompt);
  all.insert(all.end(), completion.begin(), completion.end());
  return all;
}

double RolloutBatch::mean_reward() const {
  if (trajectories.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : trajectories) s += t.reward;
  return s / static_cast<double>(trajectories.size());
}

void Optimizer::step(ad::Bindings& params, const ad::Gradients& grads,
                     const std::function<bool(const std::string&)>& selected) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  for (const auto& [name, g] : grads) {
    if (!selected(name)) continue;
    auto it = params.find(name);
    if (it == params.end()) throw InputError("optimizer: gradient for unknown parameter '" + name + "'");
    auto p = it->second.values();
    auto gv = g.values();
    if (p.size() != gv.size()) throw ShapeError("optimizer: gradient shape mismatch for '" + name + "'");
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * gv[i];
      continue;
    }
    auto& st = state_[name];
    if (st.t == 0) {
      st.m = ad::Tensor(p.size());
      st.v = ad::Tensor(p.size());
    }
    ++st.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * gv[i];
      st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * gv[i] * gv[i];
      p[i] -= lr_ * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + kEps);
    }
  }
}

double corpus_warmup_loss(const model::PolicyParameters& params, std::span<const SequenceExample> corpus,
                          std::span<const double> alphas) {
  std::vector<model::LogProbMatrix> predicted;
  predicted.reserve(corpus.size());
  for (const auto& ex : corpus) {
    predicted.push_back(model::forward_mtp_chain(params, ex.tokens, ex.prompt_len, params.config().K));
  }
  return algo::mtp_warmup_loss(predicted, alphas);
}

std::vector<SequenceExample> demonstration_corpus(const envs::SequenceTask& task, std::size_t count,
                                                  std::uint64_t seed) {
  auto rng = stream(seed, kCorpusStream);
  std::vector<SequenceExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SequenceExample ex;
    ex.tokens = task.sample_prompt(rng);
    ex.prompt_len = ex.tokens.size();
    const auto demo = task.demonstration(ex.tokens);
    ex.tokens.insert(ex.tokens.end(), demo.begin(), demo.end());
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SequenceExample> policy_corpus(const envs::SequenceTask& task, const model::PolicyParameters& params,
                                           std::size_t count, std::uint64_t seed) {
  auto rng = stream(seed, kCorpusStream);
  std::vector<SequenceExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SequenceExample ex;
    ex.tokens = task.sample_prompt(rng);
    ex.prompt_len = ex.tokens.size();
    const auto completion = model::sample_completion(params, ex.tokens, task.max_completion(), 1.0, rng, task.terminal());
    ex.tokens.insert(ex.tokens.end(), completion.begin(), completion.end());
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<SequenceExample> stage1_corpus(const TrainConfig& config, const envs::SequenceTask& task,
                                           const model::PolicyParameters& params) {
  if (config.warmup_corpus == "policy") return policy_corpus(task, params, config.warmup_corpus_size, config.seed);
  if (config.warmup_corpus == "demonstration") {
    return demonstration_corpus(task, config.warmup_corpus_size, config.seed);
  }
  const std::size_t length = task.max_prompt() + task.max_completion();
  std::vector<SequenceExample> corpus;
  for (auto& seq : envs::counting_corpus(config.warmup_corpus_size, length, task.vocab_size(), config.seed)) {
    corpus.push_back({std::move(seq), 1});
  }
  return corpus;
}

Trainer::Trainer(TrainConfig config, std::size_t threads)
    : Trainer(config, initial_params(config), threads) {}

Trainer::Trainer(TrainConfig config, model::PolicyParameters params, std::size_t threads)
    : config_(std::move(config)),
      task_(make_task(config_.task)),
      params_(std::move(params)),
      threads_(thread_budget(threads)),
      actor_(config_.optimizer, config_.actor_lr),
      critic_(config_.optimizer, config_.critic_lr) {
  config_.validate();
  if (!(params_.config() == config_.resolved_model())) {
    throw ConfigError("trainer: parameters do not match the configured model");
  }
}

std::size_t Trainer::score_depth() const {
  const bool block_ratio = config_.effective_ratio() != algo::RatioKind::kToken;
  const bool multi_value = config_.model.value_mode == model::ValueMode::kMultiToken;
  return block_ratio || multi_value ? config_.model.K : 1;
}

WarmupResult Trainer::warmup(std::span<const SequenceExample> corpus, std::size_t steps) {
  WarmupResult result;
  const std::size_t K = config_.model.K;
  if (K < 2) {
    result.skipped = true;
    result.warning = "warm-up skipped: a K = 1 model has no MTP modules";
    return result;
  }
  if (steps == 0) return result;
  if (corpus.empty()) throw InputError("warm-up: empty corpus");
  const auto alphas = config_.alphas();
  Optimizer opt(OptimizerKind::kAdam, config_.warmup_lr);
  auto rng = stream(config_.seed, kWarmupStream);
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  const std::size_t batch = std::min(config_.warmup_batch, corpus.size());
  const auto is_mtp = [](const std::string& n) { return model::group_of(n) == model::ParamGroup::kMtp; };

  for (std::size_t step = 0; step < steps; ++step) {
    std::vector<std::size_t> picked;
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == order.size()) {
        order = shuffled(corpus.size(), rng);
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }
    std::vector<std::size_t> cells(K - 1, 0);
    for (std::size_t i : picked) {
      const std::size_t T = corpus[i].tokens.size() - corpus[i].prompt_len;
      for (std::size_t k = 2; k <= K; ++k) cells[k - 2] += T >= k ? T - k + 1 : 0;
    }
    std::vector<ad::Gradients> grads(picked.size());
    std::vector<double> losses(picked.size());
    parallel_for(picked.size(), threads_, [&](std::size_t j) {
      const auto& ex = corpus[picked[j]];
      ad::Tape tape(&params_.tensors());
      auto scored = model::score_sequence(tape, params_.config(), ex.tokens, ex.prompt_len, K);
      auto loss = algo::mtp_warmup_loss_graph(tape, scored, alphas, cells);
      losses[j] = tape.value(loss).item();
      grads[j] = tape.backward(loss);
    });
    ad::Gradients total;
    double loss = 0.0;
    for (std::size_t j = 0; j < picked.size(); ++j) {
      add_into(total, grads[j]);
      loss += losses[j];
    }
    if (!std::isfinite(loss)) throw NumericDomainError("warm-up step " + std::to_string(step) + ": non-finite loss");
    result.loss_trace.push_back(loss);
    opt.step(params_.tensors(), total, is_mtp);
  }
  warmed_up_ = true;
  return result;
}

RolloutBatch Trainer::collect_rollouts(const model::Snapshot& old, std::uint64_t rollout_index) const {
  const auto& theta = old.params();
  const auto& mc = theta.config();
  const std::size_t B = config_.rollout_batch, G = config_.group_size, K = mc.K;
  RolloutBatch batch;
  batch.snapshot_id = rollout_index;
  batch.trajectories.resize(B);

  parallel_for(B, threads_, [&](std::size_t e) {
    Trajectory& tr = batch.trajectories[e];
    tr.group = e / G;
    auto prompt_rng = stream(config_.seed, kPromptStream, rollout_index, tr.group);
    tr.prompt = task_->sample_prompt(prompt_rng);
    auto sample_rng = stream(config_.seed, kSampleStream, rollout_index, e);
    tr.completion = model::sample_completion(theta, tr.prompt, task_->max_completion(), config_.temperature,
                                             sample_rng, task_->terminal());
    tr.reward = task_->reward(tr.prompt, tr.completion);

    const auto tokens = tr.tokens();
    const std::size_t P = tr.prompt.size(), T = tr.completion.size();
    ad::Tape tape(&theta.tensors());
    auto scored = model::score_sequence(tape, mc, tokens, P, K);
    tr.old_log_probs = model::to_matrix(tape, scored, K);
    auto v = tape.value(model::estimate_value(tape, mc, scored, mc.value_mode)).values();
    tr.values.assign(v.begin(), v.end());

    tr.rank_sum.assign(K > 1 ? K - 1 : 0, 0.0);
    tr.rank_cells.assign(K > 1 ? K - 1 : 0, 0);
    for (std::size_t n = 2; n <= K; ++n) {
      const ad::Tensor& lp = tape.value(scored.pass.log_probs[n - 1]);
      for (std::size_t t = 0; t + n <= T; ++t) {
        const std::size_t g = P - 1 + t;
        const auto row = lp.values().subspan(g * lp.cols(), lp.cols());
        tr.rank_sum[n - 2] += static_cast<double>(algo::token_rank(row, tokens[g + n]));
        ++tr.rank_cells[n - 2];
      }
    }
  });
  return batch;
}

void Trainer::compute_advantages(RolloutBatch& batch) const {
  const auto kind = config_.effective_advantage();
  const double gamma = config_.gamma;

  std::vector<double> group_adv;
  if (kind == algo::AdvantageKind::kGroupRelative) {
    const std::size_t G = config_.group_size;
    group_adv.resize(batch.trajectories.size());
    for (std::size_t start = 0; start < batch.trajectories.size(); start += G) {
      std::vector<double> rewards;
      for (std::size_t i = start; i < start + G; ++i) rewards.push_back(batch.trajectories[i].reward);
      const auto a = algo::group_relative_advantage(rewards).values;
      std::copy(a.begin(), a.end(), group_adv.begin() + static_cast<std::ptrdiff_t>(start));
    }
  }

  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    Trajectory& tr = batch.trajectories[i];
    const std::size_t T = tr.completion.size();
    std::vector<double> rewards(T, 0.0);
    rewards[T - 1] = tr.reward;
    std::vector<double> values(tr.values);
    values.push_back(0.0);
    tr.returns = algo::discounted_returns(rewards, gamma);
    switch (kind) {
      case algo::AdvantageKind::kGae:
        tr.advantages = algo::gae_advantages(rewards, values, gamma, config_.lambda_gae).values;
        break;
      case algo::AdvantageKind::kKStep:
        tr.advantages = algo::kstep_advantage(rewards, values, gamma, config_.model.K).values;
        break;
      case algo::AdvantageKind::kMonteCarlo:
        tr.advantages = algo::monte_carlo_advantage(rewards, gamma).values;
        break;
      case algo::AdvantageKind::kGroupRelative:
        tr.advantages.assign(T, group_adv[i]);
        break;
    }
  }

  if (config_.normalize_advantages && kind != algo::AdvantageKind::kGroupRelative) {
    double s = 0.0, n = 0.0;
    for (const auto& tr : batch.trajectories)
      for (double a : tr.advantages) s += a, n += 1.0;
    const double mean = s / n;
    double var = 0.0;
    for (const auto& tr : batch.trajectories)
      for (double a : tr.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n);
    for (auto& tr : batch.trajectories)
      for (double& a : tr.advantages) a = (a - mean) / (sd + 1e-8);
  }
}

MetricsRecord Trainer::train_step(const RolloutBatch& batch, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InputError("train_step: empty minibatch");
  const auto& mc = params_.config();
  const std::size_t depth = score_depth();
  const auto kind = config_.effective_ratio();
  const auto blend = config_.blend();

  double N = 0.0;
  for (std::size_t i : indices) {
    if (i >= batch.trajectories.size()) throw InputError("train_step: trajectory index out of range");
    N += static_cast<double>(batch.trajectories[i].completion.size());
  }

  struct Part {
    ad::Gradients grads;
    std::vector<double> ratios;
    double objective = 0.0;
    double loss = 0.0;
  };
  std::vector<Part> parts(indices.size());

  parallel_for(indices.size(), threads_, [&](std::size_t j) {
    const Trajectory& tr = batch.trajectories[indices[j]];
    if (tr.advantages.size() != tr.completion.size() || tr.returns.size() != tr.completion.size()) {
      throw InputError("train_step: advantages were not computed for the batch");
    }
    const auto tokens = tr.tokens();
    ad::Tape tape(&params_.tensors());
    auto scored = model::score_sequence(tape, mc, tokens, tr.prompt.size(), depth);
    ad::Var R = config_.objective == Objective::kMpo
                    ? algo::ratio_graph(tape, scored, tr.old_log_probs, kind, blend)
                    : algo::ppo_ratio_graph(tape, scored, tr.old_log_probs);
    ad::Var J = algo::surrogate_graph(tape, R, tr.advantages, config_.clip, N);

    ad::Var V = model::estimate_value(tape, mc, scored, mc.value_mode);
    ad::Var diff = ad::sub(V, tape.constant(ad::Tensor::vector(tr.returns)));
    ad::Var loss = ad::sub(ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / N), J);

    if (config_.entropy_coef > 0.0) {
      std::vector<std::uint32_t> rows(tr.completion.size());
      for (std::size_t t = 0; t < rows.size(); ++t) rows[t] = static_cast<std::uint32_t>(tr.prompt.size() - 1 + t);
      ad::Var L = ad::take_rows(scored.pass.log_probs[0], rows);
      ad::Var neg_entropy = ad::sum(ad::mul(ad::exp(L), L));
      loss = ad::add(loss, ad::scale(neg_entropy, config_.entropy_coef / N));
    }

    Part& part = parts[j];
    auto rv = tape.value(R).values();
    part.ratios.assign(rv.begin(), rv.end());
    part.objective = tape.value(J).item();
    part.loss = tape.value(loss).item();
    if (std::isfinite(part.loss)) part.grads = tape.backward(loss);
  });

  ++update_;
  ad::Gradients total;
  MetricsRecord rec;
  rec.update = update_;
  std::vector<double> ratios;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (!std::isfinite(parts[j].loss)) {
      const auto [lo, hi] = std::minmax_element(parts[j].ratios.begin(), parts[j].ratios.end());
      std::ostringstream msg;
      msg << "update " << update_ << ": non-finite loss on trajectory " << indices[j] << " (ratio range ["
          << (parts[j].ratios.empty() ? 0.0 : *lo) << ", " << (parts[j].ratios.empty() ? 0.0 : *hi) << "])";
      throw NumericDomainError(msg.str());
    }
    add_into(total, parts[j].grads);
    ratios.insert(ratios.end(), parts[j].ratios.begin(), parts[j].ratios.end());
    rec.objective += parts[j].objective;
  }

  const bool freeze = config_.freeze_backbone, train_mtp = config_.train_mtp;
  const auto actor_selected = [freeze, train_mtp](const std::string& n) {
    const auto g = model::group_of(n);
    return (g == model::ParamGroup::kMtp && train_mtp) || (g == model::ParamGroup::kBackbone && !freeze);
  };
  double sq = 0.0;
  for (const auto& [name, g] : total) {
    if (!actor_selected(name)) continue;
    for (double v : g.values()) sq += v * v;
  }
  rec.grad_norm = std::sqrt(sq);
  if (!std::isfinite(rec.grad_norm)) {
    throw NumericDomainError("update " + std::to_string(update_) + ": non-finite gradient norm");
  }
  if (config_.max_grad_norm > 0.0 && rec.grad_norm > config_.max_grad_norm) {
    const double s = config_.max_grad_norm / rec.grad_norm;
    for (auto& [name, g] : total)
      if (actor_selected(name))
        for (double& v : g.values()) v *= s;
  }
  actor_.step(params_.tensors(), total, actor_selected);
  critic_.step(params_.tensors(), total,
               [](const std::string& n) { return model::group_of(n) == model::ParamGroup::kValue; });

  rec.ratio_variance = algo::ratio_variance(ratios);
  rec.clip_fraction = algo::clip_fraction(ratios, config_.clip);
  rec.mean_reward = batch.mean_reward();
  const std::size_t K = mc.K;
  rec.token_rank.assign(K > 1 ? K - 1 : 0, 0.0);
  for (std::size_t n = 0; n + 1 < K; ++n) {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i : indices) {
      s += batch.trajectories[i].rank_sum[n];
      c += batch.trajectories[i].rank_cells[n];
    }
    rec.token_rank[n] = c > 0 ? s / static_cast<double>(c) : 0.0;
  }
  return rec;
}

TrainResult Trainer::train(const std::function<void(const MetricsRecord&)>& on_record) {
  TrainResult result;
  if (config_.init_checkpoint.empty() && config_.warmup_steps > 0 && !warmed_up_) {
    const auto corpus = stage1_corpus(config_, *task_, params_);
    result.warmup = warmup(corpus, config_.warmup_steps);
  }
  auto rng = stream(config_.seed, kShuffleStream);
  for (std::uint64_t rollout = 0; update_ < config_.updates; ++rollout) {
    const auto old = model::snapshot(params_);
    auto batch = collect_rollouts(old, rollout);
    compute_advantages(batch);
    for (std::size_t epoch = 0; epoch < config_.epochs && update_ < config_.updates; ++epoch) {
      const auto order = shuffled(batch.trajectories.size(), rng);
      for (std::size_t start = 0; start < order.size() && update_ < config_.updates; start += config_.minibatch) {
        const std::size_t end = std::min(order.size(), start + config_.minibatch);
        auto rec = train_step(batch, std::span<const std::size_t>(order).subspan(start, end - start));
        if (on_record) on_record(rec);
        result.trace.push_back(std::move(rec));
      }
    }
  }
  result.params = params_;
  return result;
}

}  // namespace blockpg::trainer
