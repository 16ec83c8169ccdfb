// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Estimators and objectives: per-offset token ratios, product and blended
// block ratios, advantage estimators, the clipped surrogate, the MTP warm-up
// loss, and training diagnostics. Value-level functions are pure; the graph
// builders record onto an autodiff tape.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "blockpg/autodiff.hpp"
#include "blockpg/model.hpp"

namespace blockpg::algo {

// beta_1..beta_K with beta_k = beta2 * decay^(k-2) for k >= 2 and beta_1
// absorbing the remainder.
struct BlendSpec {
  std::size_t K = 1;
  double beta2 = 0.0;
  double decay = 0.0;
  std::vector<double> weights{1.0};

  double mtp_mass() const;
  // Weights restricted to the first `available` offsets and renormalized to
  // sum to 1. If the restricted mass is zero the first offset takes weight 1.
  std::vector<double> truncated(std::size_t available) const;
};

BlendSpec decay_weights(std::size_t K, double beta2, double decay);
// beta2 chosen so that beta_2 + ... + beta_K equals `mass`.
BlendSpec blend_for_mass(std::size_t K, double mass, double decay);

struct ClipSpec {
  double eps_low = 0.2;
  double eps_high = 0.2;
  void validate() const;
  double lo() const { return 1.0 - eps_low; }
  double hi() const { return 1.0 + eps_high; }
  bool operator==(const ClipSpec&) const = default;
};

// r(t, n) = exp(new(t, n) - old(t, n)); masked cells stay 0 and unavailable.
model::LogProbMatrix token_ratios(const model::LogProbMatrix& next, const model::LogProbMatrix& old);

// Ratios of the available offsets at one position, offset 1 first.
double product_ratio(std::span<const double> ratios);
double blended_ratio(std::span<const double> ratios, const BlendSpec& blend);

// ---------------------------------------------------------------------------
// Advantages

enum class AdvantageKind { kGae, kKStep, kGroupRelative, kMonteCarlo };
std::string to_string(AdvantageKind kind);
AdvantageKind parse_advantage_kind(const std::string& text);

struct AdvantageEstimate {
  AdvantageKind kind = AdvantageKind::kGae;
  double gamma = 1.0;
  double lambda = 1.0;
  std::size_t K = 1;
  std::vector<double> values;
};

// `values` has T + 1 entries: V(s_0)..V(s_{T-1}) and the bootstrap V(s_T),
// which is 0 at a true terminal.
AdvantageEstimate gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                 double gamma, double lambda);

// G_t = sum_{k<K} gamma^k r_{t+k} + gamma^K V(s_{t+K}); when t + K passes T
// the sum stops at T and the bootstrap is gamma^(T-t) V(s_T).
AdvantageEstimate kstep_advantage(std::span<const double> rewards, std::span<const double> values,
                                  double gamma, std::size_t K);

// K-step return on its own (the bootstrapped target behind kstep_advantage).
std::vector<double> kstep_returns(std::span<const double> rewards, std::span<const double> values,
                                  double gamma, std::size_t K);

// (r_i - mean) / (population std + 1e-8), one entry per group member.
AdvantageEstimate group_relative_advantage(std::span<const double> rewards);

// Discounted reward-to-go.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);
AdvantageEstimate monte_carlo_advantage(std::span<const double> rewards, double gamma);

// ---------------------------------------------------------------------------
// Objectives

// (1 / normalizer) * sum_t min(R_t A_t, clip(R_t, 1 - eps_low, 1 + eps_high) A_t)
double clipped_surrogate(std::span<const double> ratios, std::span<const double> advantages,
                         const ClipSpec& clip, double normalizer);

enum class RatioKind { kToken, kBlend, kProduct };
std::string to_string(RatioKind kind);

// Per-position ratio R_t for one scored sequence against its stored
// old-policy log-probabilities. kToken is the plain next-token ratio and reads
// only the offset-1 column.
ad::Var ratio_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                    const model::LogProbMatrix& old, RatioKind kind, const BlendSpec& blend);

// Separate token-level route: exp(new_1 - old_1) built without any blend
// machinery. Used as the reference the blended objective must reduce to.
ad::Var ppo_ratio_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                        const model::LogProbMatrix& old);

// Sum over positions of min(R A, clip(R) A), scaled by 1 / normalizer.
ad::Var surrogate_graph(ad::Tape& tape, ad::Var ratios, std::span<const double> advantages,
                        const ClipSpec& clip, double normalizer);

// Default warm-up weights alpha_k = 0.3 * 0.5^(k-2) for k = 2..K, returned as
// alphas[k - 2].
std::vector<double> default_alphas(std::size_t K, double base = 0.3, double decay = 0.5);

// -sum_{k>=2} alpha_k * mean over available cells of log p at offset k.
double mtp_warmup_loss(std::span<const model::LogProbMatrix> predicted, std::span<const double> alphas);

// Graph form for one sequence; `cells[k - 2]` is the batch-wide count of
// available offset-k cells used for averaging.
ad::Var mtp_warmup_loss_graph(ad::Tape& tape, const model::ScoredSequence& scored,
                              std::span<const double> alphas, std::span<const std::size_t> cells);

// ---------------------------------------------------------------------------
// Diagnostics

// Share of ratios outside the closed band [1 - eps_low, 1 + eps_high].
double clip_fraction(std::span<const double> ratios, const ClipSpec& clip);
// Population variance; 0 for fewer than two values.
double ratio_variance(std::span<const double> ratios);
// 1-based rank of `token` in a distribution row (log-probs or probs), ties
// broken by ascending id.
std::size_t token_rank(std::span<const double> row, std::size_t token);

}  // namespace blockpg::algo
