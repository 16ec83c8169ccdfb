// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "blockpg/envs.hpp"
#include "blockpg/error.hpp"

namespace blockpg::envs {

namespace {

std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(model::uniform01(rng) * static_cast<double>(n));
}

class BlockCopy final : public SequenceTask {
 public:
  BlockCopy(std::size_t block_len, std::size_t vocab) : block_len_(block_len), vocab_(vocab) {}

  std::string name() const override { return "block_copy"; }
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t max_completion() const override { return block_len_; }
  std::size_t max_prompt() const override { return block_len_ + 1; }

  std::vector<Token> sample_prompt(std::mt19937_64& rng) const override {
    std::vector<Token> prompt;
    for (std::size_t i = 0; i < block_len_; ++i) prompt.push_back(digit_token(draw(rng, digits())));
    prompt.push_back(kSep);
    return prompt;
  }

  double reward(std::span<const Token> prompt, std::span<const Token> completion) const override {
    std::size_t match = 0;
    while (match < block_len_ && match < completion.size() && match < prompt.size() &&
           completion[match] == prompt[match]) {
      ++match;
    }
    return static_cast<double>(match) / static_cast<double>(block_len_);
  }

  std::vector<Token> demonstration(std::span<const Token> prompt) const override {
    return {prompt.begin(), prompt.begin() + static_cast<std::ptrdiff_t>(block_len_)};
  }

 private:
  std::size_t digits() const { return vocab_ - kReservedTokens; }
  std::size_t block_len_;
  std::size_t vocab_;
};

class ModularChain final : public SequenceTask {
 public:
  ModularChain(std::size_t length, std::size_t modulus, std::size_t vocab)
      : length_(length), modulus_(modulus), vocab_(vocab) {}

  std::string name() const override { return "modular_chain"; }
  std::size_t vocab_size() const override { return vocab_; }
  // Scratch tokens, the answer, and EOS.
  std::size_t max_completion() const override { return std::max<std::size_t>(length_, 1) + 1; }
  std::size_t max_prompt() const override { return length_ + 1; }

  std::vector<Token> sample_prompt(std::mt19937_64& rng) const override {
    std::vector<Token> prompt;
    for (std::size_t i = 0; i < length_; ++i) prompt.push_back(digit_token(draw(rng, modulus_)));
    prompt.push_back(kSep);
    return prompt;
  }

  double reward(std::span<const Token> prompt, std::span<const Token> completion) const override {
    std::size_t end = completion.size();
    if (end > 0 && completion[end - 1] == kEos) --end;
    if (end == 0) return 0.0;
    return completion[end - 1] == digit_token(answer(prompt)) ? 1.0 : 0.0;
  }

  // Running partial sums; the last one is the answer.
  std::vector<Token> demonstration(std::span<const Token> prompt) const override {
    std::vector<Token> out;
    std::size_t acc = 0;
    for (Token t : prompt) {
      if (t < kFirstDigit) continue;
      acc = (acc + (t - kFirstDigit)) % modulus_;
      out.push_back(digit_token(acc));
    }
    if (out.empty()) out.push_back(digit_token(0));
    out.push_back(kEos);
    return out;
  }

  std::size_t answer(std::span<const Token> prompt) const {
    std::size_t acc = 0;
    for (Token t : prompt) {
      if (t >= kFirstDigit) acc += t - kFirstDigit;
    }
    return acc % modulus_;
  }

 private:
  std::size_t length_;
  std::size_t modulus_;
  std::size_t vocab_;
};

}  // namespace

std::unique_ptr<SequenceTask> block_copy_task(std::size_t block_len, std::size_t vocab) {
  if (block_len < 2) throw ConfigError("block_copy: block_len must be at least 2");
  if (vocab < kReservedTokens + 2) throw ConfigError("block_copy: vocab must leave at least two digit tokens");
  return std::make_unique<BlockCopy>(block_len, vocab);
}

std::unique_ptr<SequenceTask> modular_chain_task(std::size_t length, std::size_t modulus,
                                                 std::size_t vocab) {
  if (modulus < 2 || modulus + kReservedTokens > vocab) {
    throw ConfigError("modular_chain: modulus must satisfy 2 <= m <= vocab - " +
                      std::to_string(kReservedTokens));
  }
  return std::make_unique<ModularChain>(length, modulus, vocab);
}

std::vector<std::vector<Token>> counting_corpus(std::size_t count, std::size_t length,
                                                std::size_t vocab, std::uint64_t seed) {
  if (vocab < kReservedTokens + 2) throw ConfigError("counting corpus needs at least two digits");
  const std::size_t digits = vocab - kReservedTokens;
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Token>> corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t start = draw(rng, digits);
    std::vector<Token> seq;
    for (std::size_t j = 0; j < length; ++j) seq.push_back(digit_token((start + j) % digits));
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace blockpg::envs
