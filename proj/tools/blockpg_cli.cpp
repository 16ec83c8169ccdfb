// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library only through the C interface.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "blockpg/blockpg.h"

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  std::string objective;
  std::string ratio;
  bool freeze_backbone = false;
  bool corrupt_clip_gradient = false;
};

int report_failure(blockpg_status status) {
  std::fprintf(stderr, "error: %s: %s\n", blockpg_status_string(status), blockpg_last_error());
  return status == BLOCKPG_ERR_VERIFY_FAILED ? 1 : 2;
}

class ConfigHandle {
 public:
  ~ConfigHandle() { blockpg_config_free(config_); }
  blockpg_config** out() { return &config_; }
  blockpg_config* get() const { return config_; }

 private:
  blockpg_config* config_ = nullptr;
};

blockpg_status load_config(const Options& opt, ConfigHandle& handle) {
  blockpg_status st = opt.config_path.empty() ? blockpg_config_default(handle.out())
                                              : blockpg_config_load(opt.config_path.c_str(), handle.out());
  if (st != BLOCKPG_OK) return st;
  if (opt.seed >= 0) {
    st = blockpg_config_set(handle.get(), "train.seed", std::to_string(opt.seed).c_str());
    if (st != BLOCKPG_OK) return st;
  }
  if (!opt.objective.empty()) {
    st = blockpg_config_set(handle.get(), "train.objective", opt.objective.c_str());
    if (st != BLOCKPG_OK) return st;
  }
  if (!opt.ratio.empty()) {
    st = blockpg_config_set(handle.get(), "blend.ratio", opt.ratio.c_str());
    if (st != BLOCKPG_OK) return st;
  }
  if (opt.freeze_backbone) {
    st = blockpg_config_set(handle.get(), "train.freeze_backbone", "true");
    if (st != BLOCKPG_OK) return st;
  }
  return blockpg_config_validate(handle.get());
}

int dispatch(const Options& opt) {
  if (opt.command == "report") {
    const blockpg_status st = blockpg_run_report(opt.out_dir.c_str());
    return st == BLOCKPG_OK ? 0 : report_failure(st);
  }
  ConfigHandle config;
  blockpg_status st = load_config(opt, config);
  if (st != BLOCKPG_OK) return report_failure(st);
  if (opt.command == "verify") {
    const std::uint64_t seed = opt.seed >= 0 ? static_cast<std::uint64_t>(opt.seed) : 0;
    int failures = 0;
    st = blockpg_verify(opt.out_dir.c_str(), seed, opt.corrupt_clip_gradient ? 1 : 0, &failures);
    if (st == BLOCKPG_ERR_VERIFY_FAILED) {
      std::fprintf(stderr, "verify: %d check(s) failed\n", failures);
      return 1;
    }
  } else if (opt.command == "warmup") {
    st = blockpg_run_warmup(config.get(), opt.out_dir.c_str());
  } else if (opt.command == "train") {
    st = blockpg_run_train(config.get(), opt.out_dir.c_str());
  } else {
    st = blockpg_run_sweep(config.get(), opt.out_dir.c_str());
  }
  return st == BLOCKPG_OK ? 0 : report_failure(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-token policy gradient training and verification"};
  app.set_version_flag("--version", std::string(blockpg_version()));
  Options opt;
  app.add_option("command", opt.command, "warmup | train | sweep | verify | report")
      ->required()
      ->check(CLI::IsMember({"warmup", "train", "sweep", "verify", "report"}));
  app.add_option("--config", opt.config_path, "INI configuration file");
  app.add_option("--out", opt.out_dir, "Output directory")->required();
  app.add_option("--seed", opt.seed, "Overrides train.seed")->check(CLI::NonNegativeNumber);
  app.add_option("--objective", opt.objective, "Overrides train.objective")
      ->check(CLI::IsMember({"ppo", "mpo", "grpo"}));
  app.add_option("--ratio", opt.ratio, "Overrides blend.ratio")->check(CLI::IsMember({"product", "blend"}));
  app.add_flag("--freeze-backbone", opt.freeze_backbone, "Train only the MTP and value parameters");
  app.add_flag("--corrupt-clip-gradient", opt.corrupt_clip_gradient,
               "Negate the clipped-branch gradient in verify (the suite must then fail)")
      ->group("");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  return dispatch(opt);
}
