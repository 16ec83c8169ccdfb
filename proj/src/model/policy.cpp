// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockpg/error.hpp"
#include "blockpg/model.hpp"

namespace blockpg::model {

namespace {

constexpr double kMaskedScore = -1e9;

const char* const kBlockTensors[] = {"wq", "wk", "wv", "wo", "ff1", "ff1_b", "ff2", "ff2_b"};

std::string backbone_block(std::size_t i) { return "block" + std::to_string(i); }
std::string mtp_prefix(std::size_t k) { return "mtp" + std::to_string(k); }

std::string head_prefix(const ModelConfig& config, std::size_t depth) {
  if (depth == 1 || config.share_mtp_heads) return "lm_head";
  return mtp_prefix(depth) + ".head";
}

void add_block_shapes(ad::Bindings& out, const std::string& prefix, const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn();
  out[prefix + ".wq"] = ad::Tensor(d, d);
  out[prefix + ".wk"] = ad::Tensor(d, d);
  out[prefix + ".wv"] = ad::Tensor(d, d);
  out[prefix + ".wo"] = ad::Tensor(d, d);
  out[prefix + ".ff1"] = ad::Tensor(d, f);
  out[prefix + ".ff1_b"] = ad::Tensor(f);
  out[prefix + ".ff2"] = ad::Tensor(f, d);
  out[prefix + ".ff2_b"] = ad::Tensor(d);
}

void fill_uniform(ad::Tensor& t, double scale, std::mt19937_64& rng) {
  for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * scale;
}

void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (tokens.size() > config.max_seq_len) {
    throw InputError("sequence of " + std::to_string(tokens.size()) +
                     " tokens exceeds max_seq_len " + std::to_string(config.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config.vocab_size) {
      throw InputError("token " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                       " is outside the vocabulary of " + std::to_string(config.vocab_size));
    }
  }
}

// Pre-norm causal self-attention plus a tanh feed-forward layer, both residual.
ad::Var block(ad::Tape& tape, const std::string& prefix, ad::Var h, ad::Var mask, double inv_sqrt_d) {
  using namespace ad;
  Var x = rms_norm(h);
  Var q = matmul(x, tape.leaf(prefix + ".wq"));
  Var k = matmul(x, tape.leaf(prefix + ".wk"));
  Var v = matmul(x, tape.leaf(prefix + ".wv"));
  Var scores = add(scale(matmul(q, transpose(k)), inv_sqrt_d), mask);
  Var attn = exp(log_softmax(scores));
  h = add(h, matmul(matmul(attn, v), tape.leaf(prefix + ".wo")));
  Var hidden = tanh(add_row(matmul(rms_norm(h), tape.leaf(prefix + ".ff1")), tape.leaf(prefix + ".ff1_b")));
  Var ff = add_row(matmul(hidden, tape.leaf(prefix + ".ff2")), tape.leaf(prefix + ".ff2_b"));
  return add(h, ff);
}

ad::Var head(ad::Tape& tape, const std::string& prefix, ad::Var h) {
  using namespace ad;
  return log_softmax(add_row(matmul(rms_norm(h), tape.leaf(prefix + ".w")), tape.leaf(prefix + ".b")));
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be at least 2");
  if (d_model == 0) throw ConfigError("model.d_model must be positive");
  if (context_layers == 0) throw ConfigError("model.context_layers must be positive");
  if (K == 0) throw ConfigError("model.K must be at least 1");
  if (max_seq_len == 0) throw ConfigError("model.max_seq_len must be positive");
  if (value_mode == ValueMode::kMultiToken && K == 1) {
    throw ConfigError("multi-token value mode needs K >= 2");
  }
  if (!(init_scale > 0.0)) throw ConfigError("model.init_scale must be positive");
}

std::string to_string(ValueMode mode) {
  return mode == ValueMode::kSingleHead ? "single-head" : "multi-token";
}

ValueMode parse_value_mode(const std::string& text) {
  if (text == "single-head" || text == "single") return ValueMode::kSingleHead;
  if (text == "multi-token" || text == "multi") return ValueMode::kMultiToken;
  throw ConfigError("unknown value mode '" + text + "'");
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

PolicyParameters::PolicyParameters(ModelConfig config, ad::Bindings tensors)
    : config_(std::move(config)), tensors_(std::move(tensors)) {}

const ad::Tensor& PolicyParameters::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

ad::Tensor& PolicyParameters::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

std::size_t PolicyParameters::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

ParamGroup group_of(const std::string& name) {
  if (name.rfind("mtp", 0) == 0) return ParamGroup::kMtp;
  if (name.rfind("value", 0) == 0) return ParamGroup::kValue;
  return ParamGroup::kBackbone;
}

PolicyParameters PolicyParameters::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model, V = config.vocab_size;
  std::mt19937_64 rng(seed);

  // The backbone draws first and in a fixed order, so one seed gives the same
  // backbone for every K and value mode.
  ad::Bindings backbone;
  backbone["emb"] = ad::Tensor(V, d);
  backbone["pos"] = ad::Tensor(config.max_seq_len, d);
  for (std::size_t i = 0; i < config.context_layers; ++i) add_block_shapes(backbone, backbone_block(i), config);
  backbone["lm_head.w"] = ad::Tensor(d, V);
  backbone["lm_head.b"] = ad::Tensor(V);
  for (auto& [name, t] : backbone) fill_uniform(t, config.init_scale, rng);

  ad::Bindings value;
  const std::size_t heads = config.value_mode == ValueMode::kMultiToken ? config.K : 1;
  for (std::size_t j = 1; j <= heads; ++j) {
    value["value" + std::to_string(j) + ".w"] = ad::Tensor(d, std::size_t{1});
    value["value" + std::to_string(j) + ".b"] = ad::Tensor(std::size_t{1});
  }
  for (auto& [name, t] : value) fill_uniform(t, config.init_scale, rng);
  if (config.value_mode == ValueMode::kMultiToken) value["value.logits"] = ad::Tensor(config.K);

  ad::Bindings all = std::move(backbone);
  all.merge(value);
  PolicyParameters params(config, std::move(all));
  init_mtp_from_backbone(params);
  return params;
}

void init_mtp_from_backbone(PolicyParameters& params) {
  const ModelConfig& c = params.config();
  auto& tensors = params.tensors();
  const std::string last = backbone_block(c.context_layers - 1);
  for (std::size_t k = 2; k <= c.K; ++k) {
    const std::string prefix = mtp_prefix(k);
    for (const char* name : kBlockTensors) {
      tensors[prefix + ".block." + name] = tensors.at(last + "." + name);
    }
    if (!c.share_mtp_heads) {
      tensors[prefix + ".head.w"] = tensors.at("lm_head.w");
      tensors[prefix + ".head.b"] = tensors.at("lm_head.b");
    }
    ad::Tensor proj(2 * c.d_model, c.d_model);
    for (std::size_t i = 0; i < c.d_model; ++i) proj.at(i, i) = 1.0;
    tensors[prefix + ".proj"] = std::move(proj);
  }
}

ForwardPass forward(ad::Tape& tape, const ModelConfig& config, std::span<const Token> tokens,
                    std::size_t depth) {
  using namespace ad;
  check_tokens(config, tokens);
  if (depth == 0 || depth > config.K) {
    throw ConfigError("forward depth " + std::to_string(depth) + " exceeds configured K = " +
                      std::to_string(config.K));
  }
  const std::size_t L = tokens.size();
  const std::size_t d = config.d_model;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor mask(L, L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j) mask.at(i, j) = kMaskedScore;
  Var mask_var = tape.constant(std::move(mask));

  std::vector<std::uint32_t> positions(L);
  std::iota(positions.begin(), positions.end(), 0u);
  Var emb = tape.leaf("emb");
  Var h = add(take_rows(emb, tokens), take_rows(tape.leaf("pos"), positions));
  for (std::size_t i = 0; i < config.context_layers; ++i) {
    h = block(tape, backbone_block(i), h, mask_var, inv_sqrt_d);
  }

  ForwardPass pass;
  pass.hidden.push_back(h);
  pass.log_probs.push_back(head(tape, "lm_head", h));

  for (std::size_t n = 2; n <= depth; ++n) {
    // Row g pairs h^{n-1}_g with the embedding of token g + n - 1. Rows whose
    // token lies past the end get a zero embedding; they are never scored and
    // causal attention keeps them from reaching earlier rows.
    const std::size_t shift = n - 1;
    Var shifted;
    if (L > shift) {
      Var valid = take_rows(emb, tokens.subspan(shift));
      shifted = concat(valid, tape.constant(Tensor(shift, d)), 0);
    } else {
      shifted = tape.constant(Tensor(L, d));
    }
    const std::string prefix = mtp_prefix(n);
    Var mixed = matmul(concat(pass.hidden.back(), shifted, 1), tape.leaf(prefix + ".proj"));
    Var hn = block(tape, prefix + ".block", mixed, mask_var, inv_sqrt_d);
    pass.hidden.push_back(hn);
    pass.log_probs.push_back(head(tape, head_prefix(config, n), hn));
  }
  return pass;
}

BackboneOutput forward_backbone(const PolicyParameters& params, std::span<const Token> tokens) {
  ad::Tape tape(&params.tensors());
  ForwardPass pass = forward(tape, params.config(), tokens, 1);
  return {tape.value(pass.hidden[0]), tape.value(pass.log_probs[0])};
}

ScoredSequence score_sequence(ad::Tape& tape, const ModelConfig& config,
                              std::span<const Token> tokens, std::size_t prompt_len,
                              std::size_t depth) {
  if (prompt_len == 0 || prompt_len > tokens.size()) {
    throw InputError("prompt length " + std::to_string(prompt_len) + " invalid for a sequence of " +
                     std::to_string(tokens.size()) + " tokens");
  }
  ScoredSequence out;
  out.pass = forward(tape, config, tokens, depth);
  out.prompt_len = prompt_len;
  out.completion_len = tokens.size() - prompt_len;
  const std::size_t T = out.completion_len;
  for (std::size_t n = 1; n <= depth && n <= T; ++n) {
    std::vector<std::uint32_t> rows, cols;
    for (std::size_t t = 0; t + n <= T; ++t) {
      const std::size_t g = prompt_len - 1 + t;
      rows.push_back(static_cast<std::uint32_t>(g));
      cols.push_back(tokens[g + n]);
    }
    out.columns.push_back(ad::pick(out.pass.log_probs[n - 1], rows, cols));
  }
  return out;
}

LogProbMatrix to_matrix(const ad::Tape& tape, const ScoredSequence& scored, std::size_t K) {
  LogProbMatrix m;
  m.positions = scored.completion_len;
  m.offsets = K;
  m.values.assign(m.positions * K, 0.0);
  for (std::size_t n = 1; n <= scored.columns.size() && n <= K; ++n) {
    const ad::Tensor& col = tape.value(scored.columns[n - 1]);
    for (std::size_t t = 0; t < col.size(); ++t) m.at(t, n) = col[t];
  }
  return m;
}

LogProbMatrix forward_mtp_chain(const PolicyParameters& params, std::span<const Token> tokens,
                                std::size_t prompt_len, std::size_t K) {
  if (K == 0 || K > params.config().K) {
    throw ConfigError("requested K = " + std::to_string(K) + " but the model has " +
                      std::to_string(params.config().K - 1) + " MTP modules");
  }
  ad::Tape tape(&params.tensors());
  ScoredSequence scored = score_sequence(tape, params.config(), tokens, prompt_len, K);
  return to_matrix(tape, scored, K);
}

std::vector<double> value_weights(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp(logits[i] - mx));
  for (double& v : w) v /= s;
  return w;
}

double combine_values(std::span<const double> head_outputs, std::span<const double> logits) {
  if (head_outputs.size() != logits.size()) throw ShapeError("combine_values: head count mismatch");
  const auto w = value_weights(logits);
  double v = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) v += w[j] * head_outputs[j];
  return v;
}

ad::Var estimate_value(ad::Tape& tape, const ModelConfig& config, const ScoredSequence& scored,
                       ValueMode mode) {
  using namespace ad;
  const std::size_t T = scored.completion_len;
  if (T == 0) throw InputError("estimate_value: empty completion");
  std::vector<std::uint32_t> rows(T);
  for (std::size_t t = 0; t < T; ++t) rows[t] = static_cast<std::uint32_t>(scored.prompt_len - 1 + t);

  auto head_values = [&](std::size_t j) {
    Var h = rms_norm(take_rows(detach(scored.pass.hidden[j - 1]), rows));
    const std::string p = "value" + std::to_string(j);
    return add_row(matmul(h, tape.leaf(p + ".w")), tape.leaf(p + ".b"));  // T x 1
  };

  if (mode == ValueMode::kSingleHead) return reshape(head_values(1), T, 0);

  if (config.K < 2 || config.value_mode != ValueMode::kMultiToken) {
    throw ConfigError("multi-token value estimation needs a K >= 2 model built in multi-token mode");
  }
  if (scored.pass.hidden.size() < config.K) {
    throw ConfigError("multi-token value estimation needs a forward pass of depth K");
  }
  Var stacked = head_values(1);
  for (std::size_t j = 2; j <= config.K; ++j) stacked = concat(stacked, head_values(j), 1);
  Var weights = reshape(exp(log_softmax(tape.leaf("value.logits"))), config.K, 1);
  return reshape(matmul(stacked, weights), T, 0);
}

std::vector<Token> sample_completion(const PolicyParameters& params, std::span<const Token> prompt,
                                     std::size_t max_len, double temperature, std::mt19937_64& rng,
                                     Token terminal) {
  if (temperature < 0.0) throw ConfigError("temperature must be non-negative");
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  std::vector<Token> seq(prompt.begin(), prompt.end());
  std::vector<Token> out;
  const std::size_t V = params.config().vocab_size;
  std::vector<double> probs(V);
  while (out.size() < max_len) {
    ad::Tape tape(&params.tensors());
    ForwardPass pass = forward(tape, params.config(), seq, 1);
    const ad::Tensor& lp = tape.value(pass.log_probs[0]);
    const std::size_t last = seq.size() - 1;
    Token next = 0;
    if (temperature == 0.0) {
      double best = lp.at(last, 0);
      for (std::size_t v = 1; v < V; ++v) {
        if (lp.at(last, v) > best) {
          best = lp.at(last, v);
          next = static_cast<Token>(v);
        }
      }
    } else {
      double mx = lp.at(last, 0) / temperature;
      for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, lp.at(last, v) / temperature);
      double s = 0.0;
      for (std::size_t v = 0; v < V; ++v) s += (probs[v] = std::exp(lp.at(last, v) / temperature - mx));
      double u = uniform01(rng) * s;
      next = static_cast<Token>(V - 1);
      for (std::size_t v = 0; v < V; ++v) {
        if (u < probs[v]) {
          next = static_cast<Token>(v);
          break;
        }
        u -= probs[v];
      }
    }
    out.push_back(next);
    seq.push_back(next);
    if (next == terminal) break;
  }
  return out;
}

std::vector<Token> sample_completion(const PolicyParameters& params, std::span<const Token> prompt,
                                     std::size_t max_len, double temperature, std::uint64_t seed,
                                     Token terminal) {
  std::mt19937_64 rng(seed);
  return sample_completion(params, prompt, max_len, temperature, rng, terminal);
}

}  // namespace blockpg::model
