/* SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to blockpg. Objects are opaque handles released with their
 * matching *_free function. Every call returns a blockpg_status; on failure
 * blockpg_last_error() describes the most recent error on the calling thread.
 * Functions that fill caller buffers take a capacity and report the required
 * size through `needed`, returning BLOCKPG_ERR_RESOURCE when it is too small.
 */

#ifndef BLOCKPG_BLOCKPG_H
#define BLOCKPG_BLOCKPG_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BLOCKPG_API __declspec(dllexport)
#else
#define BLOCKPG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum blockpg_status {
  BLOCKPG_OK = 0,
  BLOCKPG_ERR_CONFIG = 1,
  BLOCKPG_ERR_INPUT = 2,
  BLOCKPG_ERR_NUMERIC = 3,
  BLOCKPG_ERR_IO = 4,
  BLOCKPG_ERR_RESOURCE = 5,
  BLOCKPG_ERR_SHAPE = 6,
  BLOCKPG_ERR_VERIFY_FAILED = 7,
  BLOCKPG_ERR_INTERNAL = 8
} blockpg_status;

typedef struct blockpg_config blockpg_config;
typedef struct blockpg_model blockpg_model;

/* Called with one chunk of progress text; `user` is passed through. */
typedef void (*blockpg_log_fn)(const char* text, void* user);

BLOCKPG_API const char* blockpg_version(void);
BLOCKPG_API const char* blockpg_status_string(blockpg_status status);
/* Message of the last failed call on this thread; "" if none. */
BLOCKPG_API const char* blockpg_last_error(void);
/* Progress output of the run functions. NULL restores the default (stdout). */
BLOCKPG_API void blockpg_set_log(blockpg_log_fn fn, void* user);

/* ---- Configuration ---------------------------------------------------- */

BLOCKPG_API blockpg_status blockpg_config_default(blockpg_config** out);
BLOCKPG_API blockpg_status blockpg_config_load(const char* path, blockpg_config** out);
BLOCKPG_API blockpg_status blockpg_config_parse(const char* text, blockpg_config** out);
/* key is "section.key", value uses the config-file syntax. */
BLOCKPG_API blockpg_status blockpg_config_set(blockpg_config* config, const char* key, const char* value);
BLOCKPG_API blockpg_status blockpg_config_get(const blockpg_config* config, const char* key, char* buf,
                                              size_t capacity, size_t* needed);
BLOCKPG_API blockpg_status blockpg_config_validate(const blockpg_config* config);
BLOCKPG_API blockpg_status blockpg_config_serialize(const blockpg_config* config, char* buf, size_t capacity,
                                                    size_t* needed);
BLOCKPG_API void blockpg_config_free(blockpg_config* config);

/* ---- Commands ----------------------------------------------------------- */

BLOCKPG_API blockpg_status blockpg_run_warmup(const blockpg_config* config, const char* out_dir);
BLOCKPG_API blockpg_status blockpg_run_train(const blockpg_config* config, const char* out_dir);
BLOCKPG_API blockpg_status blockpg_run_sweep(const blockpg_config* config, const char* out_dir);
BLOCKPG_API blockpg_status blockpg_run_report(const char* out_dir);
/* Runs the oracle suite and prints one line per check. out_dir may be NULL;
 * otherwise verify.json is written there. Returns BLOCKPG_ERR_VERIFY_FAILED
 * if any check fails; `failures` (may be NULL) receives the count. */
BLOCKPG_API blockpg_status blockpg_verify(const char* out_dir, uint64_t seed, int corrupt_clip_gradient,
                                          int* failures);

/* ---- Model -------------------------------------------------------------- */

/* Fresh seeded model with the configuration's architecture. */
BLOCKPG_API blockpg_status blockpg_model_init(const blockpg_config* config, uint64_t seed, blockpg_model** out);
BLOCKPG_API blockpg_status blockpg_model_load(const char* path, blockpg_model** out);
BLOCKPG_API blockpg_status blockpg_model_save(const blockpg_model* model, const char* path);
BLOCKPG_API blockpg_status blockpg_model_parameter_count(const blockpg_model* model, size_t* count);
BLOCKPG_API blockpg_status blockpg_model_block_size(const blockpg_model* model, size_t* K);
/* Log-probabilities of the realized completion at offsets 1..K: a row-major
 * T x K matrix with T = length - prompt_len; unavailable cells hold 0. */
BLOCKPG_API blockpg_status blockpg_model_score(const blockpg_model* model, const uint32_t* tokens, size_t length,
                                               size_t prompt_len, size_t K, double* out, size_t capacity,
                                               size_t* needed);
/* Samples up to max_len tokens after the prompt; stops after EOS. */
BLOCKPG_API blockpg_status blockpg_model_sample(const blockpg_model* model, const uint32_t* prompt,
                                                size_t prompt_len, size_t max_len, double temperature,
                                                uint64_t seed, uint32_t* out, size_t capacity, size_t* written);
BLOCKPG_API void blockpg_model_free(blockpg_model* model);

/* ---- Estimators --------------------------------------------------------- */

/* beta_1..beta_K into weights[0..K-1]. */
BLOCKPG_API blockpg_status blockpg_decay_weights(size_t K, double beta2, double decay, double* weights,
                                                 size_t capacity);
/* Ratios for the available offsets at one position, offset 1 first. */
BLOCKPG_API blockpg_status blockpg_blended_ratio(const double* ratios, size_t count, size_t K, double beta2,
                                                 double decay, double* out);
BLOCKPG_API blockpg_status blockpg_product_ratio(const double* ratios, size_t count, double* out);
BLOCKPG_API blockpg_status blockpg_clipped_surrogate(const double* ratios, const double* advantages, size_t count,
                                                     double eps_low, double eps_high, double normalizer,
                                                     double* out);
/* values has count + 1 entries (bootstrap last); advantages receives count. */
BLOCKPG_API blockpg_status blockpg_gae(const double* rewards, const double* values, size_t count, double gamma,
                                       double lambda, double* advantages);
BLOCKPG_API blockpg_status blockpg_kstep_advantage(const double* rewards, const double* values, size_t count,
                                                   double gamma, size_t K, double* advantages);
BLOCKPG_API blockpg_status blockpg_group_advantage(const double* rewards, size_t count, double* advantages);

#ifdef __cplusplus
}
#endif

#endif /* BLOCKPG_BLOCKPG_H */
