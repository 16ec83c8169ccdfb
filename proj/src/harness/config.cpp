// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

namespace blockpg::harness {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected a number, got '" + text + "'");
  return v;
}

std::uint64_t to_count(const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool to_bool(const std::string& text) {
  if (text == "true" || text == "yes" || text == "1") return true;
  if (text == "false" || text == "no" || text == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  if (trim(text).empty()) return items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty entry in list '" + text + "'");
    items.push_back(item);
  }
  return items;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& format) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += format(items[i]);
  }
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define BLOCKPG_DOUBLE(sec, key, field)                                               \
  Key {                                                                               \
    sec, key, [](RunConfig& c, const std::string& v) { c.field = to_double(v); },     \
        [](const RunConfig& c) { return format_double(c.field); }                     \
  }
#define BLOCKPG_COUNT(sec, key, field)                                                \
  Key {                                                                               \
    sec, key,                                                                         \
        [](RunConfig& c, const std::string& v) {                                      \
          c.field = static_cast<decltype(c.field)>(to_count(v));                      \
        },                                                                            \
        [](const RunConfig& c) { return std::to_string(c.field); }                    \
  }
#define BLOCKPG_BOOL(sec, key, field)                                                 \
  Key {                                                                               \
    sec, key, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); },       \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }    \
  }
#define BLOCKPG_STRING(sec, key, field)                                               \
  Key {                                                                               \
    sec, key, [](RunConfig& c, const std::string& v) { c.field = v; },                \
        [](const RunConfig& c) { return c.field; }                                    \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      BLOCKPG_STRING("task", "name", train.task.name),
      BLOCKPG_COUNT("task", "vocab", train.task.vocab),
      BLOCKPG_COUNT("task", "block_len", train.task.block_len),
      BLOCKPG_COUNT("task", "chain_length", train.task.chain_length),
      BLOCKPG_COUNT("task", "modulus", train.task.modulus),

      BLOCKPG_COUNT("model", "d_model", train.model.d_model),
      BLOCKPG_COUNT("model", "context_layers", train.model.context_layers),
      BLOCKPG_COUNT("model", "ffn_width", train.model.ffn_width),
      BLOCKPG_COUNT("model", "K", train.model.K),
      Key{"model", "value_mode",
          [](RunConfig& c, const std::string& v) { c.train.model.value_mode = model::parse_value_mode(v); },
          [](const RunConfig& c) { return model::to_string(c.train.model.value_mode); }},
      BLOCKPG_BOOL("model", "share_mtp_heads", train.model.share_mtp_heads),
      BLOCKPG_COUNT("model", "max_seq_len", train.model.max_seq_len),
      BLOCKPG_DOUBLE("model", "init_scale", train.model.init_scale),

      BLOCKPG_DOUBLE("blend", "beta2", train.beta2),
      BLOCKPG_DOUBLE("blend", "decay", train.decay),
      Key{"blend", "ratio", [](RunConfig& c, const std::string& v) { c.train.ratio = trainer::parse_ratio(v); },
          [](const RunConfig& c) { return algo::to_string(c.train.ratio); }},

      BLOCKPG_DOUBLE("clip", "eps_low", train.clip.eps_low),
      BLOCKPG_DOUBLE("clip", "eps_high", train.clip.eps_high),

      Key{"advantage", "estimator",
          [](RunConfig& c, const std::string& v) { c.train.advantage = algo::parse_advantage_kind(v); },
          [](const RunConfig& c) { return algo::to_string(c.train.advantage); }},
      BLOCKPG_DOUBLE("advantage", "gamma", train.gamma),
      BLOCKPG_DOUBLE("advantage", "lambda", train.lambda_gae),
      BLOCKPG_COUNT("advantage", "group_size", train.group_size),
      BLOCKPG_BOOL("advantage", "normalize", train.normalize_advantages),

      Key{"optim", "optimizer",
          [](RunConfig& c, const std::string& v) { c.train.optimizer = trainer::parse_optimizer(v); },
          [](const RunConfig& c) { return trainer::to_string(c.train.optimizer); }},
      BLOCKPG_DOUBLE("optim", "actor_lr", train.actor_lr),
      BLOCKPG_DOUBLE("optim", "critic_lr", train.critic_lr),
      BLOCKPG_DOUBLE("optim", "max_grad_norm", train.max_grad_norm),

      Key{"train", "objective",
          [](RunConfig& c, const std::string& v) { c.train.objective = trainer::parse_objective(v); },
          [](const RunConfig& c) { return trainer::to_string(c.train.objective); }},
      BLOCKPG_COUNT("train", "seed", train.seed),
      BLOCKPG_COUNT("train", "rollout_batch", train.rollout_batch),
      BLOCKPG_COUNT("train", "minibatch", train.minibatch),
      BLOCKPG_COUNT("train", "epochs", train.epochs),
      BLOCKPG_COUNT("train", "updates", train.updates),
      BLOCKPG_DOUBLE("train", "temperature", train.temperature),
      BLOCKPG_DOUBLE("train", "entropy_coef", train.entropy_coef),
      BLOCKPG_BOOL("train", "freeze_backbone", train.freeze_backbone),
      BLOCKPG_BOOL("train", "train_mtp", train.train_mtp),
      BLOCKPG_STRING("train", "init_checkpoint", train.init_checkpoint),

      BLOCKPG_COUNT("warmup", "steps", train.warmup_steps),
      BLOCKPG_DOUBLE("warmup", "lr", train.warmup_lr),
      BLOCKPG_COUNT("warmup", "batch", train.warmup_batch),
      BLOCKPG_DOUBLE("warmup", "alpha_base", train.alpha_base),
      BLOCKPG_DOUBLE("warmup", "alpha_decay", train.alpha_decay),
      BLOCKPG_STRING("warmup", "corpus", train.warmup_corpus),
      BLOCKPG_COUNT("warmup", "corpus_size", train.warmup_corpus_size),

      Key{"sweep", "K",
          [](RunConfig& c, const std::string& v) {
            c.sweep.K.clear();
            for (const auto& item : split_list(v)) c.sweep.K.push_back(to_count(item));
          },
          [](const RunConfig& c) { return join(c.sweep.K, [](std::size_t k) { return std::to_string(k); }); }},
      Key{"sweep", "beta2",
          [](RunConfig& c, const std::string& v) {
            c.sweep.beta2.clear();
            for (const auto& item : split_list(v)) c.sweep.beta2.push_back(to_double(item));
          },
          [](const RunConfig& c) { return join(c.sweep.beta2, format_double); }},
      Key{"sweep", "decay",
          [](RunConfig& c, const std::string& v) {
            c.sweep.decay.clear();
            for (const auto& item : split_list(v)) c.sweep.decay.push_back(to_double(item));
          },
          [](const RunConfig& c) { return join(c.sweep.decay, format_double); }},
      Key{"sweep", "mtp_mass",
          [](RunConfig& c, const std::string& v) {
            c.sweep.mtp_mass.clear();
            for (const auto& item : split_list(v)) c.sweep.mtp_mass.push_back(to_double(item));
          },
          [](const RunConfig& c) { return join(c.sweep.mtp_mass, format_double); }},
  };
  return table;
}

#undef BLOCKPG_DOUBLE
#undef BLOCKPG_COUNT
#undef BLOCKPG_BOOL
#undef BLOCKPG_STRING

// Cross-key constraints, each blamed on the latest line among its keys.
struct Constraint {
  std::vector<std::string> keys;
  std::function<void(const RunConfig&)> check;
};

const std::vector<Constraint>& constraints() {
  static const std::vector<Constraint> table = {
      {{"model.K", "blend.beta2", "blend.decay"}, [](const RunConfig& c) { (void)c.train.blend(); }},
      {{"clip.eps_low", "clip.eps_high"}, [](const RunConfig& c) { c.train.clip.validate(); }},
      {{"task.name", "task.vocab", "task.block_len", "task.chain_length", "task.modulus"},
       [](const RunConfig& c) { (void)trainer::make_task(c.train.task); }},
      {{"task.name", "task.vocab", "task.block_len", "task.chain_length", "task.modulus", "model.d_model",
        "model.context_layers", "model.ffn_width", "model.K", "model.value_mode", "model.share_mtp_heads",
        "model.max_seq_len", "model.init_scale"},
       [](const RunConfig& c) { c.train.resolved_model().validate(); }},
      {{"sweep.K", "sweep.beta2", "sweep.decay", "sweep.mtp_mass"},
       [](const RunConfig& c) {
         if (c.sweep.K.empty() || c.sweep.decay.empty()) throw ConfigError("sweep lists must not be empty");
         if (c.sweep.mtp_mass.empty() && c.sweep.beta2.empty()) {
           throw ConfigError("sweep needs beta2 or mtp_mass values");
         }
         for (const auto& cell : sweep_cells(c)) cell.config.validate();
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  RunConfig config;
  std::map<std::string, std::size_t> seen;  // "section.key" -> line
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  auto fail = [&](std::size_t line, const std::string& message) -> ConfigError {
    return ConfigError(source + ":" + std::to_string(line) + ": " + message);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail(line_no, "malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      const bool known = std::any_of(keys().begin(), keys().end(), [&](const Key& k) { return k.section == section; });
      if (!known) throw fail(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail(line_no, "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw fail(line_no, "key outside of any section");
    const std::string name = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto it = std::find_if(keys().begin(), keys().end(),
                                 [&](const Key& k) { return k.section == section && k.name == name; });
    if (it == keys().end()) throw fail(line_no, "unknown key '" + name + "' in section [" + section + "]");
    const std::string full = section + "." + name;
    if (const auto prev = seen.find(full); prev != seen.end()) {
      throw fail(line_no, "duplicate key '" + full + "' (first set on line " + std::to_string(prev->second) + ")");
    }
    seen[full] = line_no;
    try {
      it->set(config, value);
    } catch (const ConfigError& e) {
      throw fail(line_no, full + ": " + e.what());
    }
  }

  for (const auto& constraint : constraints()) {
    try {
      constraint.check(config);
    } catch (const ConfigError& e) {
      std::size_t line = 0;
      for (const auto& k : constraint.keys)
        if (const auto s = seen.find(k); s != seen.end()) line = std::max(line, s->second);
      throw fail(line, e.what());
    }
  }
  try {
    config.train.validate();
  } catch (const ConfigError& e) {
    throw fail(line_no, e.what());
  }
  return config;
}

RunConfig parse_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("config: file not found: " + path);
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

namespace {

const Key& find_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("config key '" + key + "' must look like section.key");
  const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
  const auto it = std::find_if(keys().begin(), keys().end(),
                               [&](const Key& k) { return k.section == section && k.name == name; });
  if (it == keys().end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

}  // namespace

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Key& k = find_key(key);
  try {
    k.set(config, trim(value));
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return find_key(key).get(config); }

std::string serialize_config(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& key : keys()) {
    if (key.section != section) {
      if (!section.empty()) out << "\n";
      section = key.section;
      out << "[" << section << "]\n";
    }
    out << key.name << " = " << key.get(config) << "\n";
  }
  return out.str();
}

}  // namespace blockpg::harness
