// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include "blockpg/blockpg.h"

#include <cstring>
#include <iostream>
#include <mutex>
#include <new>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

struct blockpg_config {
  blockpg::harness::RunConfig value;
};

struct blockpg_model {
  blockpg::model::PolicyParameters value;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mutex;
blockpg_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

// Forwards each completed line to the installed log callback or stdout.
class LogBuffer : public std::stringbuf {
 protected:
  int sync() override {
    const std::string text = str();
    str("");
    if (text.empty()) return 0;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    if (g_log_fn != nullptr) {
      g_log_fn(text.c_str(), g_log_user);
    } else {
      std::cout << text << std::flush;
    }
    return 0;
  }
};

blockpg_status status_of(blockpg::ErrorKind kind) {
  switch (kind) {
    case blockpg::ErrorKind::kConfig: return BLOCKPG_ERR_CONFIG;
    case blockpg::ErrorKind::kInput: return BLOCKPG_ERR_INPUT;
    case blockpg::ErrorKind::kNumericDomain: return BLOCKPG_ERR_NUMERIC;
    case blockpg::ErrorKind::kShape: return BLOCKPG_ERR_SHAPE;
    case blockpg::ErrorKind::kIo: return BLOCKPG_ERR_IO;
    case blockpg::ErrorKind::kResource: return BLOCKPG_ERR_RESOURCE;
  }
  return BLOCKPG_ERR_INTERNAL;
}

blockpg_status fail(blockpg_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs fn, translating exceptions into status codes.
template <typename F>
blockpg_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const blockpg::Error& e) {
    return fail(status_of(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(BLOCKPG_ERR_RESOURCE, "out of memory");
  } catch (const std::exception& e) {
    return fail(BLOCKPG_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(BLOCKPG_ERR_INTERNAL, "unknown error");
  }
}

#define BLOCKPG_REQUIRE(cond, what) \
  if (!(cond)) return fail(BLOCKPG_ERR_INPUT, what)

blockpg_status copy_out(const std::string& text, char* buf, size_t capacity, size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  if (buf == nullptr || capacity < text.size() + 1) {
    return fail(BLOCKPG_ERR_RESOURCE, "buffer too small: need " + std::to_string(text.size() + 1) + " bytes");
  }
  std::memcpy(buf, text.c_str(), text.size() + 1);
  return BLOCKPG_OK;
}

template <typename F>
blockpg_status with_log(F&& fn) {
  LogBuffer buffer;
  std::ostream log(&buffer);
  const auto status = fn(log);
  log.flush();
  return status;
}

}  // namespace

extern "C" {

const char* blockpg_version(void) {
  static const std::string version = blockpg::harness::code_version();
  return version.c_str();
}

const char* blockpg_status_string(blockpg_status status) {
  switch (status) {
    case BLOCKPG_OK: return "ok";
    case BLOCKPG_ERR_CONFIG: return "configuration error";
    case BLOCKPG_ERR_INPUT: return "invalid input";
    case BLOCKPG_ERR_NUMERIC: return "numeric domain error";
    case BLOCKPG_ERR_IO: return "I/O error";
    case BLOCKPG_ERR_RESOURCE: return "resource error";
    case BLOCKPG_ERR_SHAPE: return "shape mismatch";
    case BLOCKPG_ERR_VERIFY_FAILED: return "verification failed";
    case BLOCKPG_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* blockpg_last_error(void) { return g_last_error.c_str(); }

void blockpg_set_log(blockpg_log_fn fn, void* user) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
}

blockpg_status blockpg_config_default(blockpg_config** out) {
  BLOCKPG_REQUIRE(out != nullptr, "config_default: out is NULL");
  return guarded([&] {
    *out = new blockpg_config{};
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_config_load(const char* path, blockpg_config** out) {
  BLOCKPG_REQUIRE(path != nullptr && out != nullptr, "config_load: NULL argument");
  return guarded([&] {
    *out = new blockpg_config{blockpg::harness::parse_config(path)};
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_config_parse(const char* text, blockpg_config** out) {
  BLOCKPG_REQUIRE(text != nullptr && out != nullptr, "config_parse: NULL argument");
  return guarded([&] {
    *out = new blockpg_config{blockpg::harness::parse_config_text(text)};
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_config_set(blockpg_config* config, const char* key, const char* value) {
  BLOCKPG_REQUIRE(config != nullptr && key != nullptr && value != nullptr, "config_set: NULL argument");
  return guarded([&] {
    auto updated = config->value;
    blockpg::harness::set_config_value(updated, key, value);
    config->value = std::move(updated);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_config_get(const blockpg_config* config, const char* key, char* buf, size_t capacity,
                                  size_t* needed) {
  BLOCKPG_REQUIRE(config != nullptr && key != nullptr, "config_get: NULL argument");
  return guarded([&] { return copy_out(blockpg::harness::get_config_value(config->value, key), buf, capacity, needed); });
}

blockpg_status blockpg_config_validate(const blockpg_config* config) {
  BLOCKPG_REQUIRE(config != nullptr, "config_validate: NULL config");
  return guarded([&] {
    (void)blockpg::harness::parse_config_text(blockpg::harness::serialize_config(config->value));
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_config_serialize(const blockpg_config* config, char* buf, size_t capacity, size_t* needed) {
  BLOCKPG_REQUIRE(config != nullptr, "config_serialize: NULL config");
  return guarded([&] { return copy_out(blockpg::harness::serialize_config(config->value), buf, capacity, needed); });
}

void blockpg_config_free(blockpg_config* config) { delete config; }

blockpg_status blockpg_run_warmup(const blockpg_config* config, const char* out_dir) {
  BLOCKPG_REQUIRE(config != nullptr && out_dir != nullptr, "run_warmup: NULL argument");
  return guarded([&] {
    return with_log([&](std::ostream& log) {
      blockpg::harness::run_warmup(config->value, out_dir, log);
      return BLOCKPG_OK;
    });
  });
}

blockpg_status blockpg_run_train(const blockpg_config* config, const char* out_dir) {
  BLOCKPG_REQUIRE(config != nullptr && out_dir != nullptr, "run_train: NULL argument");
  return guarded([&] {
    return with_log([&](std::ostream& log) {
      blockpg::harness::run_train(config->value, out_dir, log);
      return BLOCKPG_OK;
    });
  });
}

blockpg_status blockpg_run_sweep(const blockpg_config* config, const char* out_dir) {
  BLOCKPG_REQUIRE(config != nullptr && out_dir != nullptr, "run_sweep: NULL argument");
  return guarded([&] {
    return with_log([&](std::ostream& log) {
      blockpg::harness::run_sweep(config->value, out_dir, log);
      return BLOCKPG_OK;
    });
  });
}

blockpg_status blockpg_run_report(const char* out_dir) {
  BLOCKPG_REQUIRE(out_dir != nullptr, "run_report: NULL out_dir");
  return guarded([&] {
    return with_log([&](std::ostream& log) {
      blockpg::harness::run_report(out_dir, log);
      return BLOCKPG_OK;
    });
  });
}

blockpg_status blockpg_verify(const char* out_dir, uint64_t seed, int corrupt_clip_gradient, int* failures) {
  return guarded([&] {
    return with_log([&](std::ostream& log) {
      blockpg::harness::VerifyOptions options;
      options.seed = seed;
      options.corrupt_clip_gradient = corrupt_clip_gradient != 0;
      const auto checks = blockpg::harness::run_verify(options);
      blockpg::harness::print_checks(log, checks);
      int failed = 0;
      for (const auto& c : checks) failed += c.pass ? 0 : 1;
      if (failures != nullptr) *failures = failed;
      if (out_dir != nullptr && *out_dir != '\0') blockpg::harness::write_verify_report(out_dir, checks);
      if (failed > 0) return fail(BLOCKPG_ERR_VERIFY_FAILED, std::to_string(failed) + " verification check(s) failed");
      return BLOCKPG_OK;
    });
  });
}

blockpg_status blockpg_model_init(const blockpg_config* config, uint64_t seed, blockpg_model** out) {
  BLOCKPG_REQUIRE(config != nullptr && out != nullptr, "model_init: NULL argument");
  return guarded([&] {
    *out = new blockpg_model{
        blockpg::model::PolicyParameters::initialize(config->value.train.resolved_model(), seed)};
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_model_load(const char* path, blockpg_model** out) {
  BLOCKPG_REQUIRE(path != nullptr && out != nullptr, "model_load: NULL argument");
  return guarded([&] {
    *out = new blockpg_model{blockpg::model::load_checkpoint(path)};
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_model_save(const blockpg_model* model, const char* path) {
  BLOCKPG_REQUIRE(model != nullptr && path != nullptr, "model_save: NULL argument");
  return guarded([&] {
    blockpg::model::save_checkpoint(path, model->value);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_model_parameter_count(const blockpg_model* model, size_t* count) {
  BLOCKPG_REQUIRE(model != nullptr && count != nullptr, "model_parameter_count: NULL argument");
  *count = model->value.parameter_count();
  return BLOCKPG_OK;
}

blockpg_status blockpg_model_block_size(const blockpg_model* model, size_t* K) {
  BLOCKPG_REQUIRE(model != nullptr && K != nullptr, "model_block_size: NULL argument");
  *K = model->value.config().K;
  return BLOCKPG_OK;
}

blockpg_status blockpg_model_score(const blockpg_model* model, const uint32_t* tokens, size_t length,
                                   size_t prompt_len, size_t K, double* out, size_t capacity, size_t* needed) {
  BLOCKPG_REQUIRE(model != nullptr && tokens != nullptr, "model_score: NULL argument");
  BLOCKPG_REQUIRE(prompt_len >= 1 && prompt_len < length, "model_score: need 1 <= prompt_len < length");
  return guarded([&] {
    const auto m = blockpg::model::forward_mtp_chain(model->value, {tokens, length}, prompt_len, K);
    if (needed != nullptr) *needed = m.values.size();
    if (out == nullptr || capacity < m.values.size()) {
      return fail(BLOCKPG_ERR_RESOURCE, "model_score: output needs " + std::to_string(m.values.size()) + " doubles");
    }
    std::copy(m.values.begin(), m.values.end(), out);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_model_sample(const blockpg_model* model, const uint32_t* prompt, size_t prompt_len,
                                    size_t max_len, double temperature, uint64_t seed, uint32_t* out,
                                    size_t capacity, size_t* written) {
  BLOCKPG_REQUIRE(model != nullptr && prompt != nullptr && written != nullptr, "model_sample: NULL argument");
  BLOCKPG_REQUIRE(out != nullptr, "model_sample: NULL output");
  if (capacity < max_len) return fail(BLOCKPG_ERR_RESOURCE, "model_sample: output buffer shorter than max_len");
  return guarded([&] {
    const auto seq = blockpg::model::sample_completion(model->value, {prompt, prompt_len}, max_len, temperature, seed,
                                                       blockpg::envs::kEos);
    std::copy(seq.begin(), seq.end(), out);
    *written = seq.size();
    return BLOCKPG_OK;
  });
}

void blockpg_model_free(blockpg_model* model) { delete model; }

blockpg_status blockpg_decay_weights(size_t K, double beta2, double decay, double* weights, size_t capacity) {
  BLOCKPG_REQUIRE(weights != nullptr, "decay_weights: NULL argument");
  if (capacity < K) return fail(BLOCKPG_ERR_RESOURCE, "decay_weights: output shorter than K");
  return guarded([&] {
    const auto b = blockpg::algo::decay_weights(K, beta2, decay);
    std::copy(b.weights.begin(), b.weights.end(), weights);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_blended_ratio(const double* ratios, size_t count, size_t K, double beta2, double decay,
                                     double* out) {
  BLOCKPG_REQUIRE(ratios != nullptr && out != nullptr, "blended_ratio: NULL argument");
  return guarded([&] {
    *out = blockpg::algo::blended_ratio({ratios, count}, blockpg::algo::decay_weights(K, beta2, decay));
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_product_ratio(const double* ratios, size_t count, double* out) {
  BLOCKPG_REQUIRE(ratios != nullptr && out != nullptr, "product_ratio: NULL argument");
  return guarded([&] {
    *out = blockpg::algo::product_ratio({ratios, count});
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_clipped_surrogate(const double* ratios, const double* advantages, size_t count,
                                         double eps_low, double eps_high, double normalizer, double* out) {
  BLOCKPG_REQUIRE(ratios != nullptr && advantages != nullptr && out != nullptr, "clipped_surrogate: NULL argument");
  return guarded([&] {
    blockpg::algo::ClipSpec clip{eps_low, eps_high};
    clip.validate();
    *out = blockpg::algo::clipped_surrogate({ratios, count}, {advantages, count}, clip, normalizer);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_gae(const double* rewards, const double* values, size_t count, double gamma, double lambda,
                           double* advantages) {
  BLOCKPG_REQUIRE(rewards != nullptr && values != nullptr && advantages != nullptr, "gae: NULL argument");
  return guarded([&] {
    const auto est = blockpg::algo::gae_advantages({rewards, count}, {values, count + 1}, gamma, lambda);
    std::copy(est.values.begin(), est.values.end(), advantages);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_kstep_advantage(const double* rewards, const double* values, size_t count, double gamma,
                                       size_t K, double* advantages) {
  BLOCKPG_REQUIRE(rewards != nullptr && values != nullptr && advantages != nullptr, "kstep_advantage: NULL argument");
  return guarded([&] {
    const auto est = blockpg::algo::kstep_advantage({rewards, count}, {values, count + 1}, gamma, K);
    std::copy(est.values.begin(), est.values.end(), advantages);
    return BLOCKPG_OK;
  });
}

blockpg_status blockpg_group_advantage(const double* rewards, size_t count, double* advantages) {
  BLOCKPG_REQUIRE(rewards != nullptr && advantages != nullptr, "group_advantage: NULL argument");
  return guarded([&] {
    const auto est = blockpg::algo::group_relative_advantage({rewards, count});
    std::copy(est.values.begin(), est.values.end(), advantages);
    return BLOCKPG_OK;
  });
}

}  // extern "C"
