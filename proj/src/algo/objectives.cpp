// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "blockpg/algo.hpp"
#include "blockpg/error.hpp"

namespace blockpg::algo {

std::string to_string(RatioKind kind) {
  switch (kind) {
    case RatioKind::kToken: return "token";
    case RatioKind::kBlend: return "blend";
    case RatioKind::kProduct: return "product";
  }
  return "?";
}

double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         const ClipSpec& clip, double normalizer) {
  if (ratios.size() != advantages.size()) throw ShapeError("clipped_surrogate: ratio/advantage count mismatch");
  if (!(normalizer > 0.0)) throw InputError("clipped_surrogate: normalizer must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double r = ratios[i], a = advantages[i];
    s += std::min(r * a, std::clamp(r, clip.lo(), clip.hi()) * a);
  }
  return s / normalizer;
}

namespace {

std::vector<double> old_column(const model::LogProbMatrix& old, std::size_t n) {
  std::vector<double> col;
  for (std::size_t t = 0; t + n <= old.positions; ++t) col.push_back(old.at(t, n));
  return col;
}

void check_old(const model::ScoredSequence& scored, const model::LogProbMatrix& old) {
  if (old.positions != scored.completion_len) {
    throw InputError("ratio: stored log-probabilities cover " + std::to_string(old.positions) +
                     " positions, sequence has " + std::to_string(scored.completion_len));
  }
}

}  // namespace

ad::Var ppo_ratio_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                        const model::LogProbMatrix& old) {
  check_old(scored, old);
  if (scored.columns.empty()) throw InputError("ratio: empty completion");
  return ad::exp(ad::sub(scored.columns[0], tape.constant(ad::Tensor::vector(old_column(old, 1)))));
}

ad::Var ratio_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                    const model::LogProbMatrix& old, RatioKind kind, const BlendSpec& blend) {
  if (kind == RatioKind::kToken) return ppo_ratio_graph(tape, scored, old);
  check_old(scored, old);
  const std::size_t T = scored.completion_len;
  if (T == 0) throw InputError("ratio: empty completion");
  const std::size_t K = blend.K;
  if (std::min(K, T) > scored.columns.size() || K > old.offsets) {
    throw ConfigError("ratio: block size " + std::to_string(K) + " exceeds the scored offsets");
  }
  const std::size_t offsets = std::min(K, T);

  // Effective weight of offset n at position t, after truncation at the end.
  std::vector<std::vector<double>> weight_at(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t available = std::min(K, T - t);
    weight_at[t] = kind == RatioKind::kProduct ? std::vector<double>(available, 1.0) : blend.truncated(available);
  }

  ad::Var log_ratio;
  for (std::size_t n = 1; n <= offsets; ++n) {
    const std::size_t cells = T - n + 1;
    std::vector<double> w(cells);
    for (std::size_t t = 0; t < cells; ++t) w[t] = weight_at[t][n - 1];
    ad::Var diff = ad::sub(scored.columns[n - 1], tape.constant(ad::Tensor::vector(old_column(old, n))));
    ad::Var term = ad::mul(diff, tape.constant(ad::Tensor::vector(std::move(w))));
    if (n > 1) term = ad::concat(term, tape.constant(ad::Tensor(n - 1)), 0);
    log_ratio = n == 1 ? term : ad::add(log_ratio, term);
  }
  return ad::exp(log_ratio);
}

ad::Var surrogate_graph(ad::Tape& tape, ad::Var ratios, std::span<const double> advantages,
                        const ClipSpec& clip, double normalizer) {
  if (tape.value(ratios).size() != advantages.size()) {
    throw ShapeError("surrogate: " + std::to_string(tape.value(ratios).size()) + " ratios vs " +
                     std::to_string(advantages.size()) + " advantages");
  }
  if (!(normalizer > 0.0)) throw InputError("surrogate: normalizer must be positive");
  ad::Var adv = tape.constant(ad::Tensor::vector({advantages.begin(), advantages.end()}));
  ad::Var unclipped = ad::mul(ratios, adv);
  ad::Var clipped = ad::mul(ad::clip(ratios, clip.lo(), clip.hi()), adv);
  return ad::scale(ad::sum(ad::minimum(unclipped, clipped)), 1.0 / normalizer);
}

std::vector<double> default_alphas(std::size_t K, double base, double decay) {
  std::vector<double> a;
  double w = base;
  for (std::size_t k = 2; k <= K; ++k) {
    a.push_back(w);
    w *= decay;
  }
  return a;
}

double mtp_warmup_loss(std::span<const model::LogProbMatrix> predicted, std::span<const double> alphas) {
  double loss = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] < 0.0) throw ConfigError("warm-up weights must be non-negative");
    const std::size_t k = i + 2;
    double total = 0.0;
    std::size_t cells = 0;
    for (const auto& m : predicted) {
      if (k > m.offsets) continue;
      for (std::size_t t = 0; t + k <= m.positions; ++t) {
        total += m.at(t, k);
        ++cells;
      }
    }
    if (cells > 0) loss -= alphas[i] * total / static_cast<double>(cells);
  }
  return loss;
}

ad::Var mtp_warmup_loss_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                              std::span<const double> alphas, std::span<const std::size_t> cells) {
  ad::Var loss = tape.scalar(0.0);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] < 0.0) throw ConfigError("warm-up weights must be non-negative");
    const std::size_t k = i + 2;
    if (k > scored.columns.size() || i >= cells.size() || cells[i] == 0) continue;
    loss = ad::add(loss, ad::scale(ad::sum(scored.columns[k - 1]), -alphas[i] / static_cast<double>(cells[i])));
  }
  return loss;
}

}  // namespace blockpg::algo
