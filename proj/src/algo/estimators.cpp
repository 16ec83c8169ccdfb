// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockpg/algo.hpp"
#include "blockpg/error.hpp"

namespace blockpg::algo {

double BlendSpec::mtp_mass() const {
  double m = 0.0;
  for (std::size_t k = 1; k < weights.size(); ++k) m += weights[k];
  return m;
}

std::vector<double> BlendSpec::truncated(std::size_t available) const {
  available = std::min(available, weights.size());
  std::vector<double> w(weights.begin(), weights.begin() + static_cast<std::ptrdiff_t>(available));
  if (available == weights.size()) return w;
  double total = 0.0;
  for (double v : w) total += v;
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 0.0);
    if (!w.empty()) w[0] = 1.0;
    return w;
  }
  for (double& v : w) v /= total;
  return w;
}

BlendSpec decay_weights(std::size_t K, double beta2, double decay) {
  if (K == 0) throw ConfigError("blend: K must be at least 1");
  if (beta2 < 0.0 || beta2 > 1.0) throw ConfigError("blend: beta2 must lie in [0, 1]");
  if (decay < 0.0 || decay > 1.0) throw ConfigError("blend: decay must lie in [0, 1]");
  BlendSpec spec;
  spec.K = K;
  spec.beta2 = beta2;
  spec.decay = decay;
  spec.weights.assign(K, 0.0);
  double mass = 0.0;
  double w = beta2;
  for (std::size_t k = 2; k <= K; ++k) {
    spec.weights[k - 1] = w;
    mass += w;
    w *= decay;
  }
  if (mass > 1.0 + 1e-12) {
    throw ConfigError("blend: MTP mass " + std::to_string(mass) + " exceeds 1 (K=" + std::to_string(K) +
                      ", beta2=" + std::to_string(beta2) + ", decay=" + std::to_string(decay) + ")");
  }
  spec.weights[0] = std::max(0.0, 1.0 - mass);
  return spec;
}

BlendSpec blend_for_mass(std::size_t K, double mass, double decay) {
  if (K < 2) {
    if (mass != 0.0) throw ConfigError("blend: K = 1 has no MTP mass to assign");
    return decay_weights(1, 0.0, decay);
  }
  double geometric = 0.0, p = 1.0;
  for (std::size_t k = 2; k <= K; ++k) {
    geometric += p;
    p *= decay;
  }
  return decay_weights(K, mass / geometric, decay);
}

void ClipSpec::validate() const {
  if (eps_low < 0.0 || eps_high < 0.0) throw ConfigError("clip: epsilons must be non-negative");
  if (!(1.0 - eps_low > 0.0)) throw ConfigError("clip: 1 - eps_low must be positive");
}

model::LogProbMatrix token_ratios(const model::LogProbMatrix& next, const model::LogProbMatrix& old) {
  if (next.positions != old.positions || next.offsets != old.offsets ||
      next.values.size() != old.values.size()) {
    throw InputError("token_ratios: log-probability matrices differ in shape");
  }
  model::LogProbMatrix r = next;
  for (std::size_t t = 0; t < r.positions; ++t)
    for (std::size_t n = 1; n <= r.offsets; ++n)
      r.at(t, n) = r.available(t, n) ? std::exp(next.at(t, n) - old.at(t, n)) : 0.0;
  return r;
}

double product_ratio(std::span<const double> ratios) {
  if (ratios.empty()) throw InputError("product_ratio: no available offsets");
  double p = 1.0;
  for (double r : ratios) p *= r;
  return p;
}

double blended_ratio(std::span<const double> ratios, const BlendSpec& blend) {
  if (ratios.empty()) throw InputError("blended_ratio: no available offsets");
  const auto w = blend.truncated(ratios.size());
  double s = 0.0;
  for (std::size_t n = 0; n < w.size(); ++n) {
    if (!(ratios[n] > 0.0)) {
      throw NumericDomainError("blended_ratio: ratio at offset " + std::to_string(n + 1) + " is not positive");
    }
    s += w[n] * std::log(ratios[n]);
  }
  return std::exp(s);
}

std::string to_string(AdvantageKind kind) {
  switch (kind) {
    case AdvantageKind::kGae: return "gae";
    case AdvantageKind::kKStep: return "kstep";
    case AdvantageKind::kGroupRelative: return "group";
    case AdvantageKind::kMonteCarlo: return "mc";
  }
  return "?";
}

AdvantageKind parse_advantage_kind(const std::string& text) {
  if (text == "gae") return AdvantageKind::kGae;
  if (text == "kstep") return AdvantageKind::kKStep;
  if (text == "group") return AdvantageKind::kGroupRelative;
  if (text == "mc") return AdvantageKind::kMonteCarlo;
  throw ConfigError("unknown advantage estimator '" + text + "' (expected gae, kstep, group or mc)");
}

namespace {

void check_values(std::span<const double> rewards, std::span<const double> values) {
  if (values.size() != rewards.size() + 1) {
    throw InputError("advantage: expected " + std::to_string(rewards.size() + 1) + " values (one per state plus bootstrap), got " +
                     std::to_string(values.size()));
  }
}

}  // namespace

AdvantageEstimate gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                 double gamma, double lambda) {
  check_values(rewards, values);
  const std::size_t T = rewards.size();
  AdvantageEstimate est{AdvantageKind::kGae, gamma, lambda, 1, std::vector<double>(T)};
  double running = 0.0;
  for (std::size_t i = T; i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    running = delta + gamma * lambda * running;
    est.values[i] = running;
  }
  return est;
}

std::vector<double> kstep_returns(std::span<const double> rewards, std::span<const double> values,
                                  double gamma, std::size_t K) {
  check_values(rewards, values);
  if (K == 0) throw ConfigError("kstep: K must be at least 1");
  const std::size_t T = rewards.size();
  std::vector<double> G(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t end = std::min(t + K, T);
    double g = 0.0, discount = 1.0;
    for (std::size_t i = t; i < end; ++i) {
      g += discount * rewards[i];
      discount *= gamma;
    }
    G[t] = g + discount * values[end];
  }
  return G;
}

AdvantageEstimate kstep_advantage(std::span<const double> rewards, std::span<const double> values,
                                  double gamma, std::size_t K) {
  auto G = kstep_returns(rewards, values, gamma, K);
  for (std::size_t t = 0; t < G.size(); ++t) G[t] -= values[t];
  return {AdvantageKind::kKStep, gamma, 0.0, K, std::move(G)};
}

AdvantageEstimate group_relative_advantage(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ConfigError("group-relative advantage needs a group of at least 2");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double stddev = std::sqrt(var / n);
  AdvantageEstimate est{AdvantageKind::kGroupRelative, 1.0, 0.0, 1, {}};
  for (double r : rewards) est.values.push_back((r - mean) / (stddev + 1e-8));
  return est;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> G(rewards.size());
  double running = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + gamma * running;
    G[i] = running;
  }
  return G;
}

AdvantageEstimate monte_carlo_advantage(std::span<const double> rewards, double gamma) {
  return {AdvantageKind::kMonteCarlo, gamma, 1.0, 1, discounted_returns(rewards, gamma)};
}

double clip_fraction(std::span<const double> ratios, const ClipSpec& clip) {
  if (ratios.empty()) return 0.0;
  std::size_t out = 0;
  for (double r : ratios)
    if (r < clip.lo() || r > clip.hi()) ++out;
  return static_cast<double>(out) / static_cast<double>(ratios.size());
}

double ratio_variance(std::span<const double> ratios) {
  if (ratios.size() < 2) return 0.0;
  const double n = static_cast<double>(ratios.size());
  const double mean = std::accumulate(ratios.begin(), ratios.end(), 0.0) / n;
  double v = 0.0;
  for (double r : ratios) v += (r - mean) * (r - mean);
  return v / n;
}

std::size_t token_rank(std::span<const double> row, std::size_t token) {
  if (token >= row.size()) throw InputError("token_rank: token outside the distribution row");
  const double p = row[token];
  std::size_t rank = 1;
  for (std::size_t v = 0; v < row.size(); ++v) {
    if (row[v] > p || (row[v] == p && v < token)) ++rank;
  }
  return rank;
}

}  // namespace blockpg::algo
