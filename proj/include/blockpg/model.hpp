// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Tiny autoregressive softmax policy with a chain of multi-token prediction
// (MTP) modules and value heads.
//
// Depth 1 is the backbone: embeddings plus learned positions, causal
// self-attention blocks, and the LM head. Depth n >= 2 is MTP module n:
//
//   h^n = block_n(concat(h^{n-1}, Emb(x[g + n - 1])) * proj_n)
//
// over the whole sequence, scored by head_n. Row g of depth n predicts the
// token at g + n. Attention is causal at every depth, so row g of depth n only
// sees tokens 0..g+n-1.
//
// Blocks are pre-norm and every head (LM, MTP, value) reads RMS-normalized
// hidden states, so logits stay bounded by the head weights however the
// residual stream grows along the chain. The norms carry no parameters.

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "blockpg/autodiff.hpp"

namespace blockpg::model {

using Token = std::uint32_t;

enum class ValueMode { kSingleHead, kMultiToken };

struct ModelConfig {
  std::size_t vocab_size = 8;
  std::size_t d_model = 16;
  std::size_t context_layers = 1;
  // Hidden width of each block's feed-forward layer; 0 means 2 * d_model.
  std::size_t ffn_width = 0;
  // Number of jointly scored offsets; K - 1 MTP modules.
  std::size_t K = 1;
  ValueMode value_mode = ValueMode::kSingleHead;
  bool share_mtp_heads = false;
  // Longest prompt + completion the position table covers.
  std::size_t max_seq_len = 32;
  double init_scale = 0.08;

  std::size_t ffn() const { return ffn_width == 0 ? 2 * d_model : ffn_width; }
  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string to_string(ValueMode mode);
ValueMode parse_value_mode(const std::string& text);

// All learnable tensors, keyed by name. Names are stable and double as tape
// leaf names:
//   emb, pos, block<i>.{wq,wk,wv,wo,ff1,ff1_b,ff2,ff2_b}, lm_head.{w,b}
//   mtp<k>.proj, mtp<k>.block.*, mtp<k>.head.{w,b}
//   value<j>.{w,b}, value.logits
class PolicyParameters {
 public:
  PolicyParameters() = default;
  PolicyParameters(ModelConfig config, ad::Bindings tensors);

  // Seeded uniform initialization followed by init_mtp_from_backbone().
  static PolicyParameters initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const ad::Bindings& tensors() const noexcept { return tensors_; }
  ad::Bindings& tensors() noexcept { return tensors_; }
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);
  std::size_t parameter_count() const;

  bool operator==(const PolicyParameters&) const = default;

 private:
  ModelConfig config_;
  ad::Bindings tensors_;
};

enum class ParamGroup { kBackbone, kMtp, kValue };
ParamGroup group_of(const std::string& name);

// Each MTP block is a deep copy of the final backbone block, each MTP head a
// deep copy of the LM head, and each projection is [I; 0] so that
// proj(concat(h, e)) == h.
void init_mtp_from_backbone(PolicyParameters& params);

// Immutable copy of a parameter set (theta_old).
class Snapshot {
 public:
  explicit Snapshot(const PolicyParameters& params)
      : params_(std::make_shared<const PolicyParameters>(params)) {}
  const PolicyParameters& params() const noexcept { return *params_; }
  bool operator==(const Snapshot& other) const { return *params_ == *other.params_; }

 private:
  std::shared_ptr<const PolicyParameters> params_;
};

inline Snapshot snapshot(const PolicyParameters& params) { return Snapshot(params); }
inline PolicyParameters restore(const Snapshot& snap) { return snap.params(); }

// Graph outputs of one forward pass over a whole sequence of L tokens.
struct ForwardPass {
  std::vector<ad::Var> hidden;     // [depth - 1] -> (L x d_model)
  std::vector<ad::Var> log_probs;  // [depth - 1] -> (L x V)
};

// Builds the forward graph for depths 1..depth on `tape`, whose bindings must
// be the parameter tensors. depth 1 runs the backbone only.
ForwardPass forward(ad::Tape& tape, const ModelConfig& config, std::span<const Token> tokens,
                    std::size_t depth);

// Backbone outputs as plain values: hidden states (L x d) and next-token
// log-probability rows (L x V).
struct BackboneOutput {
  ad::Tensor hidden;
  ad::Tensor log_probs;
};
BackboneOutput forward_backbone(const PolicyParameters& params, std::span<const Token> tokens);

// Log-probabilities of realized completion tokens. Completion positions are
// 0-based: position t is the state after the prompt and t completion tokens.
// entry(t, n) = log pi(o[t + n] | prompt, o[1 .. t + n - 1]) with 1-based
// completion tokens o and offsets n = 1..K; available iff t + n <= T.
struct LogProbMatrix {
  std::size_t positions = 0;  // T
  std::size_t offsets = 0;    // K
  std::vector<double> values;  // T * K, row-major; masked cells hold 0

  bool available(std::size_t t, std::size_t n) const { return t + n <= positions; }
  double at(std::size_t t, std::size_t n) const { return values[t * offsets + (n - 1)]; }
  double& at(std::size_t t, std::size_t n) { return values[t * offsets + (n - 1)]; }
  bool operator==(const LogProbMatrix&) const = default;
};

// Graph-side scoring of one (prompt, completion) sequence.
struct ScoredSequence {
  ForwardPass pass;
  // columns[n - 1] has T - n + 1 entries (positions 0..T-n); only offsets with
  // at least one available position are present.
  std::vector<ad::Var> columns;
  std::size_t prompt_len = 0;
  std::size_t completion_len = 0;
};

ScoredSequence score_sequence(ad::Tape& tape, const ModelConfig& config,
                              std::span<const Token> tokens, std::size_t prompt_len,
                              std::size_t depth);

LogProbMatrix to_matrix(const ad::Tape& tape, const ScoredSequence& scored, std::size_t K);

// One forward pass over all K offsets. Throws ConfigError if K exceeds the
// configured block size.
LogProbMatrix forward_mtp_chain(const PolicyParameters& params, std::span<const Token> tokens,
                                std::size_t prompt_len, std::size_t K);

// Per-position values for completion positions 0..T-1. Hidden states feeding
// the heads are detached, so the critic never moves the policy.
ad::Var estimate_value(ad::Tape& tape, const ModelConfig& config, const ScoredSequence& scored,
                       ValueMode mode);

// sum_j softmax(logits)_j * head_outputs[j].
double combine_values(std::span<const double> head_outputs, std::span<const double> logits);
std::vector<double> value_weights(std::span<const double> logits);

// Autoregressive sampling from the backbone head. temperature 0 is greedy with
// ties to the lowest id. Stops after emitting `terminal` or max_len tokens.
std::vector<Token> sample_completion(const PolicyParameters& params, std::span<const Token> prompt,
                                     std::size_t max_len, double temperature, std::mt19937_64& rng,
                                     Token terminal);
std::vector<Token> sample_completion(const PolicyParameters& params, std::span<const Token> prompt,
                                     std::size_t max_len, double temperature, std::uint64_t seed,
                                     Token terminal);

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double uniform01(std::mt19937_64& rng);

// Binary checkpoint with named tensors and the model configuration.
void save_checkpoint(const std::string& path, const PolicyParameters& params,
                     const std::string& extra_text = {});
PolicyParameters load_checkpoint(const std::string& path, std::string* extra_text = nullptr);

std::string serialize_model_config(const ModelConfig& config);
ModelConfig parse_model_config(const std::string& text);

}  // namespace blockpg::model
