// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

namespace blockpg::harness {

namespace {

constexpr double kGradTolerance = 1e-5;
constexpr double kGradStep = 1e-5;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

CheckResult result(std::string name, double tolerance, double measured, std::string detail = {}) {
  return {std::move(name), tolerance, measured, measured <= tolerance, std::move(detail)};
}

// A model small enough for exhaustive finite differences (about 1100
// parameters at K = 3).
model::ModelConfig small_model(std::size_t K, model::ValueMode mode = model::ValueMode::kSingleHead) {
  model::ModelConfig c;
  c.vocab_size = 7;
  c.d_model = 6;
  c.ffn_width = 6;
  c.context_layers = 1;
  c.K = K;
  c.value_mode = mode;
  c.max_seq_len = 10;
  c.init_scale = 0.5;
  return c;
}

std::vector<model::Token> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::vector<model::Token> t(n);
  for (auto& x : t) x = static_cast<model::Token>(model::uniform01(rng) * static_cast<double>(vocab));
  return t;
}

double normal(std::mt19937_64& rng) {
  const double u1 = std::max(model::uniform01(rng), 1e-300), u2 = model::uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// theta_old: the same parameters with Gaussian noise, so ratios spread well
// past the clip band.
model::PolicyParameters perturbed(const model::PolicyParameters& p, double scale, std::mt19937_64& rng) {
  auto q = p;
  for (auto& [name, t] : q.tensors())
    for (double& v : t.values()) v += scale * normal(rng);
  return q;
}

struct Episode {
  std::vector<model::Token> tokens;
  std::size_t prompt_len = 0;
  model::LogProbMatrix old;
  std::vector<double> advantages;
  std::vector<double> returns;
};

std::vector<Episode> random_episodes(const model::PolicyParameters& old, std::size_t count, std::size_t K,
                                     std::mt19937_64& rng) {
  const auto& c = old.config();
  std::vector<Episode> out;
  for (std::size_t i = 0; i < count; ++i) {
    Episode e;
    e.prompt_len = 1 + static_cast<std::size_t>(model::uniform01(rng) * 3.0);
    const std::size_t T = 1 + static_cast<std::size_t>(model::uniform01(rng) * static_cast<double>(c.max_seq_len - e.prompt_len));
    e.tokens = random_tokens(e.prompt_len + T, c.vocab_size, rng);
    e.old = model::forward_mtp_chain(old, e.tokens, e.prompt_len, K);
    for (std::size_t t = 0; t < T; ++t) {
      e.advantages.push_back(normal(rng));
      e.returns.push_back(normal(rng));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t total_positions(const std::vector<Episode>& eps) {
  std::size_t n = 0;
  for (const auto& e : eps) n += e.advantages.size();
  return n;
}

// Sum of clipped surrogates over the episodes, normalized by total positions.
ad::Var surrogate_objective(ad::Tape& tape, const model::ModelConfig& c, const std::vector<Episode>& eps,
                            algo::RatioKind kind, const algo::BlendSpec& blend, const algo::ClipSpec& clip,
                            bool token_route) {
  const double N = static_cast<double>(total_positions(eps));
  ad::Var total = tape.scalar(0.0);
  for (const auto& e : eps) {
    const std::size_t depth = token_route ? 1 : std::min(blend.K, e.advantages.size());
    auto scored = model::score_sequence(tape, c, e.tokens, e.prompt_len, std::max<std::size_t>(1, depth));
    ad::Var ratio = token_route ? algo::ppo_ratio_graph(tape, scored, e.old)
                                : algo::ratio_graph(tape, scored, e.old, kind, blend);
    total = ad::add(total, algo::surrogate_graph(tape, ratio, e.advantages, clip, N));
  }
  return total;
}

double max_abs_diff(const ad::Gradients& a, const ad::Gradients& b) {
  double worst = 0.0;
  for (const auto& [name, ga] : a) {
    const auto it = b.find(name);
    const auto va = ga.values();
    for (std::size_t i = 0; i < va.size(); ++i) {
      const double vb = it == b.end() ? 0.0 : it->second.values()[i];
      worst = std::max(worst, std::abs(va[i] - vb));
    }
  }
  for (const auto& [name, gb] : b) {
    if (a.count(name)) continue;
    for (double v : gb.values()) worst = std::max(worst, std::abs(v));
  }
  return worst;
}

std::vector<double> injected_values(const std::vector<double>& V, double eps, std::mt19937_64& rng) {
  std::vector<double> out(V.size());
  for (std::size_t s = 0; s < V.size(); ++s) out[s] = V[s] + eps * (2.0 * model::uniform01(rng) - 1.0);
  return out;
}

envs::TabularMDP oracle_mdp(std::size_t index, std::mt19937_64& rng, std::size_t horizon = 0) {
  static constexpr double kGammas[] = {0.5, 0.9, 0.99};
  const std::size_t states = 2 + static_cast<std::size_t>(model::uniform01(rng) * 19.0);  // 2..20
  const std::size_t actions = 2 + static_cast<std::size_t>(model::uniform01(rng) * 2.0);  // 2..3
  return envs::random_mdp(states, actions, 2, kGammas[index % 3], horizon, rng);
}

// Applies fn(path, K) to every K-step path from every start state.
template <typename F>
void for_each_path(const envs::TabularMDP& mdp, const envs::TabularPolicy& pi, std::size_t K, F&& fn) {
  for (std::size_t s = 0; s < mdp.states; ++s) {
    const auto dist = envs::enumerate_returns(mdp, pi, s, K);
    for (const auto& path : dist.paths) fn(path);
  }
}

double kstep_estimate(const envs::TrajectoryPath& path, const std::vector<double>& V, double gamma, std::size_t K) {
  std::vector<double> values;
  for (std::size_t s : path.states) values.push_back(V[s]);
  return algo::kstep_advantage(path.rewards, values, gamma, K).values[0];
}

}  // namespace

CheckResult check_ppo_reduction(std::size_t batches, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const algo::ClipSpec clip;
  double worst = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t count = 1 + static_cast<std::size_t>(model::uniform01(rng) * 4.0);
    // Mass-zero blend on a K = 3 model, and the plain K = 1 model.
    for (std::size_t K : {std::size_t{3}, std::size_t{1}}) {
      const auto c = small_model(K);
      const auto params = model::PolicyParameters::initialize(c, seed * 1000 + b);
      const auto old = perturbed(params, 0.2, rng);
      const auto eps = random_episodes(old, count, K, rng);
      const auto blend = algo::decay_weights(K, 0.0, 0.8);
      const auto mpo = ad::value_and_gradients(
          [&](ad::Tape& t) { return surrogate_objective(t, c, eps, algo::RatioKind::kBlend, blend, clip, false); },
          params.tensors());
      const auto ppo = ad::value_and_gradients(
          [&](ad::Tape& t) { return surrogate_objective(t, c, eps, algo::RatioKind::kToken, blend, clip, true); },
          params.tensors());
      worst = std::max(worst, std::abs(mpo.value.item() - ppo.value.item()));
      worst = std::max(worst, max_abs_diff(mpo.gradients, ppo.gradients));
    }
  }
  return result("ppo_reduction", 1e-12, worst,
                std::to_string(batches) + " batches; K=1 and beta mass 0 against the token-level route");
}

CheckResult check_geometric_mean(std::size_t tuples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < tuples; ++i) {
    const std::size_t K = 2 + i % 5;
    const auto blend = algo::decay_weights(K, 1.0 / static_cast<double>(K), 1.0);
    std::vector<double> r(K);
    for (double& v : r) v = std::exp(std::log(4.0) * (2.0 * model::uniform01(rng) - 1.0));
    const double blended = algo::blended_ratio(r, blend);
    const double geo = std::pow(algo::product_ratio(r), 1.0 / static_cast<double>(K));
    worst = std::max(worst, std::abs(blended - geo) / std::max(1.0, std::abs(geo)));
  }
  return result("geometric_mean_identity", 1e-12, worst, std::to_string(tuples) + " tuples, K in 2..6");
}

CheckResult check_blend_constraints() {
  double worst = 0.0;
  std::string detail;
  for (std::size_t K = 1; K <= 6; ++K)
    for (double beta2 : {0.0, 0.02, 0.04, 0.06, 0.08})
      for (double decay : {0.5, 0.8, 0.9, 1.0}) {
        const auto b = algo::decay_weights(K, beta2, decay);
        double sum = 0.0;
        for (double w : b.weights) sum += w;
        worst = std::max(worst, std::abs(sum - 1.0));
        double expect = beta2;
        for (std::size_t k = 2; k <= K; ++k, expect *= decay) {
          worst = std::max(worst, std::abs(b.weights[k - 1] - expect));
        }
      }
  bool rejected = false;
  try {
    (void)algo::decay_weights(5, 0.5, 1.0);
  } catch (const ConfigError&) {
    rejected = true;
  }
  if (!rejected) {
    worst = INFINITY;
    detail = "K=5, beta2=0.5, decay=1 (mass 2) was accepted";
  } else {
    detail = "weights sum to 1; K=5, beta2=0.5, decay=1 (mass 2) rejected";
  }
  return result("blend_constraints", 1e-12, worst, detail);
}

std::string to_string(GradObjective objective) {
  switch (objective) {
    case GradObjective::kPpo: return "ppo";
    case GradObjective::kMpoBlend: return "mpo_blend";
    case GradObjective::kMpoProduct: return "mpo_product";
    case GradObjective::kWarmup: return "warmup";
    case GradObjective::kCritic: return "critic";
  }
  return "?";
}

CheckResult check_gradient(GradObjective objective, std::uint64_t seed, bool corrupt_clip_gradient) {
  std::mt19937_64 rng(seed + 17);
  constexpr std::size_t K = 3;
  const bool critic = objective == GradObjective::kCritic;
  const auto c = small_model(K, critic ? model::ValueMode::kMultiToken : model::ValueMode::kSingleHead);
  const auto params = model::PolicyParameters::initialize(c, seed + 3);
  const auto old = perturbed(params, 0.4, rng);
  const auto eps = random_episodes(old, 3, K, rng);
  const algo::ClipSpec clip;
  const auto blend = algo::decay_weights(K, 0.2, 0.8);
  ad::TapeOptions options;
  options.corrupt_clip_gradient = corrupt_clip_gradient;

  ad::GraphFn graph;
  ad::Bindings bindings = params.tensors();
  switch (objective) {
    case GradObjective::kPpo:
      graph = [&](ad::Tape& t) { return surrogate_objective(t, c, eps, algo::RatioKind::kToken, blend, clip, true); };
      break;
    case GradObjective::kMpoBlend:
      graph = [&](ad::Tape& t) { return surrogate_objective(t, c, eps, algo::RatioKind::kBlend, blend, clip, false); };
      break;
    case GradObjective::kMpoProduct:
      graph = [&](ad::Tape& t) {
        return surrogate_objective(t, c, eps, algo::RatioKind::kProduct, blend, clip, false);
      };
      break;
    case GradObjective::kWarmup: {
      const auto alphas = algo::default_alphas(K);
      graph = [&, alphas](ad::Tape& t) {
        std::vector<std::size_t> cells(K - 1, 0);
        for (const auto& e : eps) {
          const std::size_t T = e.advantages.size();
          for (std::size_t k = 2; k <= K; ++k) cells[k - 2] += T >= k ? T - k + 1 : 0;
        }
        ad::Var total = t.scalar(0.0);
        for (const auto& e : eps) {
          auto scored = model::score_sequence(t, c, e.tokens, e.prompt_len, K);
          total = ad::add(total, algo::mtp_warmup_loss_graph(t, scored, alphas, cells));
        }
        return total;
      };
      break;
    }
    case GradObjective::kCritic: {
      // The value heads read detached hidden states, so the critic loss is a
      // function of the value parameters alone; the hidden states enter as
      // constants computed under the full parameter set.
      std::vector<std::vector<ad::Tensor>> hidden;
      for (const auto& e : eps) {
        ad::Tape inner(&params.tensors());
        auto pass = model::forward(inner, c, e.tokens, K);
        std::vector<ad::Tensor> h;
        for (auto v : pass.hidden) h.push_back(inner.value(v));
        hidden.push_back(std::move(h));
      }
      bindings.clear();
      for (const auto& [name, t] : params.tensors())
        if (model::group_of(name) == model::ParamGroup::kValue) bindings[name] = t;
      graph = [&, hidden](ad::Tape& t) {
        ad::Var total = t.scalar(0.0);
        const double N = static_cast<double>(total_positions(eps));
        for (std::size_t i = 0; i < eps.size(); ++i) {
          model::ScoredSequence scored;
          for (const auto& h : hidden[i]) scored.pass.hidden.push_back(t.constant(h));
          scored.prompt_len = eps[i].prompt_len;
          scored.completion_len = eps[i].advantages.size();
          ad::Var v = model::estimate_value(t, c, scored, model::ValueMode::kMultiToken);
          ad::Var diff = ad::sub(v, t.constant(ad::Tensor::vector(eps[i].returns)));
          total = ad::add(total, ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / N));
        }
        return total;
      };
      break;
    }
  }
  if (!critic && params.parameter_count() > 2000) throw InputError("gradient check model exceeds 2000 parameters");
  const auto report = ad::grad_check(graph, bindings, kGradStep, kGradTolerance, options);
  std::size_t checked = 0;
  for (const auto& [name, t] : bindings) checked += t.size();
  return result("gradient_" + to_string(objective), kGradTolerance, report.max_relative_error,
                std::to_string(checked) + " parameters checked; worst leaf " + report.worst_leaf);
}

CheckResult check_bias_bound(std::size_t mdps, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 101);
  std::vector<double> worst_by_k(6, 0.0);
  for (std::size_t m = 0; m < mdps; ++m) {
    const auto mdp = oracle_mdp(m, rng);
    const auto pi = envs::random_policy(mdp.states, mdp.actions, rng);
    const auto eval = envs::value_iteration(mdp, pi);
    const double eps_v = 0.01 + 0.5 * model::uniform01(rng);
    const auto V_hat = injected_values(eval.V, eps_v, rng);
    for (std::size_t K = 1; K <= 5; ++K) {
      const double bound = (1.0 + std::pow(mdp.gamma, static_cast<double>(K))) * eps_v;
      for_each_path(mdp, pi, K, [&](const envs::TrajectoryPath& path) {
        const double err = std::abs(kstep_estimate(path, V_hat, mdp.gamma, K) - kstep_estimate(path, eval.V, mdp.gamma, K));
        worst_by_k[K] = std::max(worst_by_k[K], err / bound);
      });
    }
  }
  std::ostringstream detail;
  detail << "max |A_K - A_true_K| / ((1+gamma^K) eps_V):";
  double worst = 0.0;
  for (std::size_t K = 1; K <= 5; ++K) {
    detail << " K=" << K << ":" << sci(worst_by_k[K]);
    worst = std::max(worst, worst_by_k[K]);
  }
  return result("bias_bound", 1.0, worst, detail.str());
}

CheckResult check_bootstrap_component(std::size_t mdps, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 202);
  double worst = -INFINITY;
  for (std::size_t m = 0; m < mdps; ++m) {
    const auto mdp = oracle_mdp(m, rng);
    const auto pi = envs::random_policy(mdp.states, mdp.actions, rng);
    const auto eval = envs::value_iteration(mdp, pi);
    const double eps_v = 0.01 + 0.5 * model::uniform01(rng);
    const auto V_hat = injected_values(eval.V, eps_v, rng);
    for (std::size_t K = 1; K <= 5; ++K) {
      const double bound = std::pow(mdp.gamma, static_cast<double>(K)) * eps_v;
      for_each_path(mdp, pi, K, [&](const envs::TrajectoryPath& path) {
        std::vector<double> vh, vt;
        for (std::size_t s : path.states) vh.push_back(V_hat[s]), vt.push_back(eval.V[s]);
        const double g_hat = algo::kstep_returns(path.rewards, vh, mdp.gamma, K)[0];
        const double g_true = algo::kstep_returns(path.rewards, vt, mdp.gamma, K)[0];
        worst = std::max(worst, std::abs(g_hat - g_true) - bound);
      });
    }
  }
  return result("bootstrap_component", 1e-10, worst, "max |G_K(V_hat) - G_K(V)| - gamma^K eps_V");
}

CheckResult check_unbiasedness(std::size_t mdps, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 303);
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t m = 0; m < mdps; ++m) {
    const auto mdp = oracle_mdp(m, rng);
    const auto pi = envs::random_policy(mdp.states, mdp.actions, rng);
    const auto eval = envs::value_iteration(mdp, pi);
    for (std::size_t K = 1; K <= 5; ++K)
      for (std::size_t s = 0; s < mdp.states; ++s)
        for (std::size_t a = 0; a < mdp.actions; ++a) {
          const auto dist = envs::enumerate_returns(mdp, pi, s, K, a);
          double mean = 0.0;
          for (const auto& path : dist.paths) mean += path.probability * kstep_estimate(path, eval.V, mdp.gamma, K);
          worst = std::max(worst, std::abs(mean - eval.A[s * mdp.actions + a]));
          ++cases;
        }
  }
  return result("unbiasedness_oracle", 1e-10, worst,
                std::to_string(cases) + " (state, action, K) cases with V_hat = V_pi");
}

CheckResult check_oracle_agreement(std::size_t mdps, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 404);
  double worst = 0.0;
  for (std::size_t m = 0; m < mdps; ++m) {
    const std::size_t horizon = 1 + m % 5;
    const auto mdp = oracle_mdp(m, rng, horizon);
    const auto pi = envs::random_policy(mdp.states, mdp.actions, rng);
    const auto eval = envs::value_iteration(mdp, pi);
    for (std::size_t s = 0; s < mdp.states; ++s) {
      const auto dist = envs::enumerate_returns(mdp, pi, s, horizon);
      worst = std::max(worst, std::abs(dist.expected_return() - eval.V[s]));
      worst = std::max(worst, std::abs(dist.total_probability() - 1.0));
    }
  }
  return result("oracle_agreement", 1e-10, worst, "enumerated expected return against backward induction");
}

CheckResult check_init_mtp(std::uint64_t seed) {
  model::ModelConfig c;
  c.vocab_size = 7;
  c.d_model = 8;
  c.context_layers = 2;
  c.K = 3;
  c.max_seq_len = 12;
  const auto params = model::PolicyParameters::initialize(c, seed);
  std::size_t mismatches = 0;
  std::string detail;

  // Tensor copies.
  const std::string last = "block" + std::to_string(c.context_layers - 1);
  for (std::size_t k = 2; k <= c.K; ++k) {
    const std::string prefix = "mtp" + std::to_string(k);
    for (const auto& [name, t] : params.tensors()) {
      if (name.rfind(last + ".", 0) == 0 && !(params.at(prefix + ".block" + name.substr(last.size())) == t)) {
        ++mismatches;
      }
    }
    if (!(params.at(prefix + ".head.w") == params.at("lm_head.w"))) ++mismatches;
    if (!(params.at(prefix + ".head.b") == params.at("lm_head.b"))) ++mismatches;
  }

  // h^2 equals the last block applied once more to h^1: a backbone with the
  // last block duplicated must reproduce it bit for bit.
  std::mt19937_64 rng(seed + 5);
  const auto tokens = random_tokens(9, c.vocab_size, rng);
  ad::Tape tape(&params.tensors());
  const auto pass = model::forward(tape, c, tokens, 2);
  auto deeper_config = c;
  deeper_config.context_layers = c.context_layers + 1;
  deeper_config.K = 1;
  ad::Bindings deeper;
  for (const auto& [name, t] : params.tensors())
    if (model::group_of(name) == model::ParamGroup::kBackbone) deeper[name] = t;
  const std::string extra = "block" + std::to_string(c.context_layers);
  for (const auto& [name, t] : params.tensors())
    if (name.rfind(last + ".", 0) == 0) deeper[extra + name.substr(last.size())] = t;
  const model::PolicyParameters deeper_params(deeper_config, deeper);
  const auto out = model::forward_backbone(deeper_params, tokens);
  if (!(tape.value(pass.hidden[1]) == out.hidden)) ++mismatches, detail += "h2 differs from L_copy(h1); ";
  if (!(tape.value(pass.log_probs[1]) == out.log_probs)) ++mismatches, detail += "MTP head differs; ";

  // All-zero parameters give the uniform distribution at every depth.
  auto zero = params;
  for (auto& [name, t] : zero.tensors())
    for (double& v : t.values()) v = 0.0;
  const auto m = model::forward_mtp_chain(zero, tokens, 3, c.K);
  const double uniform = -std::log(static_cast<double>(c.vocab_size));
  for (std::size_t t = 0; t < m.positions; ++t)
    for (std::size_t n = 1; n <= m.offsets; ++n)
      if (m.available(t, n) && m.at(t, n) != uniform) ++mismatches;
  if (detail.empty()) detail = "block/head copies, h2 = L_copy(h1), zero parameters give -ln V";
  return result("init_mtp_exact", 0.0, static_cast<double>(mismatches), detail);
}

namespace {

trainer::TrainConfig warmup_config(std::uint64_t seed) {
  trainer::TrainConfig tc;
  tc.seed = seed;
  tc.model.K = 5;
  tc.warmup_corpus = "counting";
  tc.warmup_corpus_size = 256;
  return tc;
}

}  // namespace

CheckResult check_warmup_reduction(std::size_t steps, std::uint64_t seed) {
  const auto tc = warmup_config(seed);
  trainer::Trainer tr(tc, 1);
  const auto corpus = trainer::stage1_corpus(tc, tr.task(), tr.params());
  const auto alphas = tc.alphas();
  const double before = trainer::corpus_warmup_loss(tr.params(), corpus, alphas);
  tr.warmup(corpus, steps);
  const double after = trainer::corpus_warmup_loss(tr.params(), corpus, alphas);
  return result("warmup_loss_reduction", 0.5, after / before,
                "L_MTP " + sci(before) + " -> " + sci(after) + " after " + std::to_string(steps) +
                    " steps on the counting corpus (ratio must be <= 0.5)");
}

CheckResult check_warmup_freeze(std::size_t steps, std::uint64_t seed) {
  const auto tc = warmup_config(seed);
  trainer::Trainer tr(tc, 1);
  const auto corpus = trainer::stage1_corpus(tc, tr.task(), tr.params());
  const auto before = tr.params();
  std::size_t changed = 0, mtp_moved = 0;
  for (std::size_t i = 0; i < steps; ++i) {
    tr.warmup(corpus, 1);
    for (const auto& [name, t] : before.tensors()) {
      const bool same = t == tr.params().at(name);
      if (model::group_of(name) != model::ParamGroup::kMtp && !same) ++changed;
    }
  }
  for (const auto& [name, t] : before.tensors())
    if (model::group_of(name) == model::ParamGroup::kMtp && !(t == tr.params().at(name))) ++mtp_moved;
  std::string detail = "backbone and value tensors bit-identical after every step";
  if (mtp_moved == 0) {
    ++changed;
    detail = "MTP parameters did not move";
  }
  return result("warmup_freeze", 0.0, static_cast<double>(changed), detail);
}

CheckResult check_on_policy_start(std::uint64_t seed) {
  trainer::TrainConfig tc;
  tc.seed = seed;
  tc.model.K = 3;
  tc.rollout_batch = 8;
  tc.minibatch = 8;
  trainer::Trainer tr(tc, 1);
  const auto snap = model::snapshot(tr.params());
  auto batch = tr.collect_rollouts(snap, 0);
  tr.compute_advantages(batch);
  double worst = 0.0;
  for (const auto& t : batch.trajectories) {
    const auto again = model::forward_mtp_chain(snap.params(), t.tokens(), t.prompt.size(), tc.model.K);
    for (std::size_t i = 0; i < again.values.size(); ++i)
      worst = std::max(worst, std::abs(again.values[i] - t.old_log_probs.values[i]));
  }
  std::vector<std::size_t> all(batch.trajectories.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto rec = tr.train_step(batch, all);
  worst = std::max({worst, rec.clip_fraction, rec.ratio_variance});
  return result("on_policy_first_step", 1e-12, worst,
                "stored log-probs reproduce from the snapshot; first step has ratio 1 and clip fraction 0");
}

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
  const auto seed = options.seed;
  std::vector<CheckResult> checks;
  for (auto obj : {GradObjective::kPpo, GradObjective::kMpoBlend, GradObjective::kMpoProduct, GradObjective::kWarmup,
                   GradObjective::kCritic}) {
    checks.push_back(check_gradient(obj, seed, options.corrupt_clip_gradient));
  }
  checks.push_back(check_ppo_reduction(100, seed));
  checks.push_back(check_geometric_mean(10000, seed));
  checks.push_back(check_blend_constraints());
  checks.push_back(check_bias_bound(20, seed));
  checks.push_back(check_bootstrap_component(20, seed));
  checks.push_back(check_unbiasedness(20, seed));
  checks.push_back(check_oracle_agreement(20, seed));
  checks.push_back(check_init_mtp(seed));
  checks.push_back(check_warmup_freeze(20, seed));
  checks.push_back(check_on_policy_start(seed));
  return checks;
}

void print_checks(std::ostream& out, std::span<const CheckResult> checks) {
  std::size_t failed = 0;
  for (const auto& c : checks) {
    char line[128];
    std::snprintf(line, sizeof line, "%-4s %-24s measured %-11s tolerance %-10s ", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), sci(c.measured).c_str(), sci(c.tolerance).c_str());
    out << line << c.detail << "\n";
    if (!c.pass) ++failed;
  }
  out << (failed == 0 ? "all " + std::to_string(checks.size()) + " checks passed"
                      : std::to_string(failed) + " of " + std::to_string(checks.size()) + " checks failed")
      << "\n";
}

}  // namespace blockpg::harness
