// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic token tasks with terminal, block-structured rewards, and a small
// tabular MDP that serves as an exact oracle for advantage estimators.

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "blockpg/model.hpp"

namespace blockpg::envs {

using model::Token;

// Reserved vocabulary. Digit value d is token kFirstDigit + d.
inline constexpr Token kPad = 0;
inline constexpr Token kSep = 1;
inline constexpr Token kEos = 2;
inline constexpr Token kFirstDigit = 3;
inline constexpr std::size_t kReservedTokens = 3;

inline Token digit_token(std::size_t value) { return static_cast<Token>(kFirstDigit + value); }

class SequenceTask {
 public:
  virtual ~SequenceTask() = default;
  virtual std::string name() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_completion() const = 0;
  virtual std::size_t max_prompt() const = 0;
  Token terminal() const { return kEos; }
  virtual std::vector<Token> sample_prompt(std::mt19937_64& rng) const = 0;
  // Pure function of its arguments, in [0, 1].
  virtual double reward(std::span<const Token> prompt, std::span<const Token> completion) const = 0;
  // A completion earning reward 1. Used as the warm-up corpus.
  virtual std::vector<Token> demonstration(std::span<const Token> prompt) const = 0;
};

// Prompt: block_len random digits then SEP. Reward: length of the completion
// prefix that reproduces the block, divided by block_len.
std::unique_ptr<SequenceTask> block_copy_task(std::size_t block_len, std::size_t vocab);

// Prompt: `length` digits in [0, m) then SEP. Reward 1 iff the last non-EOS
// completion token is the digit (sum mod m); earlier tokens are scratch.
std::unique_ptr<SequenceTask> modular_chain_task(std::size_t length, std::size_t modulus,
                                                 std::size_t vocab);

// Arithmetic-progression sequences (next digit = previous + 1 mod digits);
// every offset is predictable from the last token, so MTP warm-up has a clear
// target. Returned sequences are whole; score them with prompt length 1.
std::vector<std::vector<Token>> counting_corpus(std::size_t count, std::size_t length,
                                                std::size_t vocab, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tabular MDP

struct TabularMDP {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<double> transition;  // [s][a][s']
  std::vector<double> reward;      // [s][a]
  double gamma = 0.9;
  // 0: infinite-horizon discounted (gamma < 1). H > 0: H-step episodes.
  std::size_t horizon = 0;

  double p(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * actions + a) * states + next];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * actions + a]; }
  void validate() const;
};

struct TabularPolicy {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<double> probs;  // [s][a]
  double operator()(std::size_t s, std::size_t a) const { return probs[s * actions + a]; }
};

struct PolicyEvaluation {
  std::vector<double> V;  // [s]
  std::vector<double> Q;  // [s][a]
  std::vector<double> A;  // [s][a], Q - V
  double residual = 0.0;  // sup-norm Bellman residual of V (0 for backward induction)
};

// Exact policy evaluation: linear solve plus one refinement step for
// infinite-horizon MDPs, backward induction for finite horizons (values at
// time 0).
PolicyEvaluation value_iteration(const TabularMDP& mdp, const TabularPolicy& policy);

struct TrajectoryPath {
  std::vector<std::size_t> states;   // horizon + 1 entries
  std::vector<std::size_t> actions;  // horizon entries
  std::vector<double> rewards;       // horizon entries
  double probability = 0.0;
  double discounted_return = 0.0;
};

struct ReturnDistribution {
  std::vector<TrajectoryPath> paths;
  double expected_return() const;
  double total_probability() const;
};

inline constexpr std::size_t kEnumerationLimit = 1'000'000;

// Every positive-probability path of `horizon` steps from `start`, optionally
// with the first action fixed. Throws ResourceError past `limit` paths.
ReturnDistribution enumerate_returns(const TabularMDP& mdp, const TabularPolicy& policy,
                                     std::size_t start, std::size_t horizon,
                                     std::optional<std::size_t> first_action = std::nullopt,
                                     std::size_t limit = kEnumerationLimit);

// Random MDP where each (s, a) moves to `successors` distinct states.
TabularMDP random_mdp(std::size_t states, std::size_t actions, std::size_t successors, double gamma,
                      std::size_t horizon, std::mt19937_64& rng);
TabularPolicy random_policy(std::size_t states, std::size_t actions, std::mt19937_64& rng);

// Plain-text table format:
//   # comment lines
//   blockpg-mdp 1
//   states <S>
//   actions <A>
//   gamma <g>
//   horizon <H>
//   reward        followed by S rows of A values
//   transition    followed by S*A rows of S values, row index s*A + a
std::string format_mdp(const TabularMDP& mdp);
TabularMDP parse_mdp(const std::string& text);
void save_mdp(const std::string& path, const TabularMDP& mdp);
TabularMDP load_mdp(const std::string& path);

}  // namespace blockpg::envs
