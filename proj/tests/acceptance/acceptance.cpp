// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance driver: prints one PASS/FAIL line per criterion. With no
// arguments every criterion runs; otherwise only the numbered ones.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blockpg/harness.hpp"
#include "blockpg/trainer.hpp"

namespace fs = std::filesystem;
namespace harness = blockpg::harness;
namespace trainer = blockpg::trainer;

namespace {

constexpr std::size_t kSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

Outcome all_of(const std::vector<harness::CheckResult>& checks) {
  Outcome o{true, ""};
  for (const auto& c : checks) {
    o.pass = o.pass && c.pass;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += c.name + (c.pass ? " ok " : " FAILED ") + fmt("(%.3g <= %.3g)", c.measured, c.tolerance);
  }
  return o;
}

harness::RunConfig reference_config() { return harness::parse_config(std::string(BLOCKPG_CONFIG_DIR) + "/reference.ini"); }

// Per-seed summary of one reference-recipe training run.
struct RunSummary {
  double mean_variance = 0.0;
  double mean_clip = 0.0;
  std::size_t first_hit = 0;
  double seconds = 0.0;
};

RunSummary run_reference(trainer::Objective objective, blockpg::algo::RatioKind ratio, std::uint64_t seed) {
  auto config = reference_config().train;
  config.objective = objective;
  config.ratio = ratio;
  config.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  RunSummary s;
  std::size_t n = 0;
  trainer::Trainer tr(config);
  tr.train([&](const trainer::MetricsRecord& r) {
    s.mean_variance += r.ratio_variance;
    s.mean_clip += r.clip_fraction;
    ++n;
    if (s.first_hit == 0 && r.mean_reward >= 0.9) s.first_hit = r.update;
  });
  s.mean_variance /= static_cast<double>(n);
  s.mean_clip /= static_cast<double>(n);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

// Reference runs are shared by criteria 6, 7 and 8 and computed on demand.
class ReferenceRuns {
 public:
  const std::vector<RunSummary>& get(trainer::Objective objective, blockpg::algo::RatioKind ratio) {
    const auto key = std::make_pair(static_cast<int>(objective), static_cast<int>(ratio));
    auto it = runs_.find(key);
    if (it != runs_.end()) return it->second;
    std::vector<RunSummary> out;
    for (std::size_t seed = 0; seed < kSeeds; ++seed) {
      out.push_back(run_reference(objective, ratio, seed));
      std::printf("  %s/%s seed %zu: ratio_variance %.6f clip_fraction %.5f reward>=0.9 at update %zu (%.1f s)\n",
                  trainer::to_string(objective).c_str(), blockpg::algo::to_string(ratio).c_str(), seed,
                  out.back().mean_variance, out.back().mean_clip, out.back().first_hit, out.back().seconds);
      std::fflush(stdout);
    }
    return runs_.emplace(key, std::move(out)).first->second;
  }

  static double seconds(const std::vector<RunSummary>& runs) {
    double t = 0.0;
    for (const auto& r : runs) t += r.seconds;
    return t;
  }

 private:
  std::map<std::pair<int, int>, std::vector<RunSummary>> runs_;
};

ReferenceRuns g_runs;

Outcome criterion1() { return all_of({harness::check_ppo_reduction(100, 1)}); }

Outcome criterion2() { return all_of({harness::check_geometric_mean(10000, 2)}); }

Outcome criterion3() {
  std::vector<harness::CheckResult> checks;
  for (auto g : {harness::GradObjective::kPpo, harness::GradObjective::kMpoBlend, harness::GradObjective::kMpoProduct,
                 harness::GradObjective::kWarmup, harness::GradObjective::kCritic}) {
    checks.push_back(harness::check_gradient(g, 3));
  }
  return all_of(checks);
}

Outcome criterion4() {
  return all_of({harness::check_bias_bound(24, 4), harness::check_bootstrap_component(24, 4)});
}

Outcome criterion5() { return all_of({harness::check_unbiasedness(24, 5)}); }

Outcome criterion6() {
  const auto& ppo = g_runs.get(trainer::Objective::kPpo, blockpg::algo::RatioKind::kBlend);
  const auto& mpo = g_runs.get(trainer::Objective::kMpo, blockpg::algo::RatioKind::kBlend);
  std::size_t wins = 0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    if (mpo[s].mean_variance < ppo[s].mean_variance && mpo[s].mean_clip < ppo[s].mean_clip) ++wins;
  }
  const double seconds = ReferenceRuns::seconds(ppo) + ReferenceRuns::seconds(mpo);
  return {wins >= 4 && seconds <= 900.0,
          fmt("MPO below PPO on both metrics in %.0f/5 seeds, %.0f s of training", static_cast<double>(wins), seconds)};
}

Outcome criterion7() {
  const auto& blend = g_runs.get(trainer::Objective::kMpo, blockpg::algo::RatioKind::kBlend);
  const auto& product = g_runs.get(trainer::Objective::kMpo, blockpg::algo::RatioKind::kProduct);
  std::size_t wins = 0;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    if (product[s].mean_variance > blend[s].mean_variance) ++wins;
  }
  return {wins >= 4, fmt("product variance above blend in %.0f/5 seeds, %.0f s for the product runs",
                         static_cast<double>(wins), ReferenceRuns::seconds(product))};
}

Outcome criterion8() {
  const auto& mpo = g_runs.get(trainer::Objective::kMpo, blockpg::algo::RatioKind::kBlend);
  std::size_t hits = 0;
  for (const auto& r : mpo) {
    if (r.first_hit != 0 && r.first_hit <= 2000) ++hits;
  }
  const double seconds = ReferenceRuns::seconds(mpo);
  std::string detail = fmt("MPO reward >= 0.9 in %.0f/5 seeds, %.0f s", static_cast<double>(hits), seconds);
  const auto& ppo = g_runs.get(trainer::Objective::kPpo, blockpg::algo::RatioKind::kBlend);
  detail += "; first hit MPO/PPO:";
  for (std::size_t s = 0; s < kSeeds; ++s) {
    detail += " " + std::to_string(mpo[s].first_hit) + "/" + std::to_string(ppo[s].first_hit);
  }
  return {hits >= 4 && seconds <= 900.0, detail};
}

Outcome criterion9() {
  const auto start = std::chrono::steady_clock::now();
  auto o = all_of({harness::check_init_mtp(9), harness::check_warmup_reduction(500, 9),
                   harness::check_warmup_freeze(500, 9)});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.pass = o.pass && seconds < 120.0;
  o.detail += fmt("; %.1f s", seconds);
  return o;
}

harness::RunConfig small_run() {
  harness::RunConfig c;
  c.train.task.block_len = 3;
  c.train.task.vocab = 6;
  c.train.model.d_model = 8;
  c.train.model.K = 3;
  c.train.rollout_batch = 16;
  c.train.minibatch = 8;
  c.train.epochs = 1;
  c.train.updates = 20;
  c.train.warmup_steps = 20;
  c.train.warmup_corpus_size = 32;
  c.train.seed = 10;
  return c;
}

Outcome criterion10() {
  auto config = small_run();
  config.sweep.K = {3};
  config.sweep.decay = {0.8};
  config.sweep.mtp_mass = {0.0, 0.1, 0.2, 0.4};
  const fs::path root = fs::temp_directory_path() / "blockpg_acceptance_sweep";
  fs::remove_all(root);
  std::ostringstream log;
  harness::run_sweep(config, (root / "a").string(), log);
  harness::run_sweep(config, (root / "b").string(), log);

  std::vector<std::string> artifacts{"summary.csv", "weight_sweep.svg", "ratio_variance.svg", "clip_fraction.svg",
                                     "manifest.json"};
  for (const auto& cell : harness::sweep_cells(config)) artifacts.push_back("cells/" + cell.name + "/metrics.csv");
  std::size_t missing = 0;
  std::size_t differing = 0;
  for (const auto& a : artifacts) {
    if (!fs::exists(root / "a" / a) || !fs::exists(root / "b" / a)) {
      ++missing;
    } else if (a != "manifest.json" && read_bytes(root / "a" / a) != read_bytes(root / "b" / a)) {
      ++differing;
    }
  }
  const auto summary = read_bytes(root / "a" / "summary.csv");
  const auto rows = static_cast<double>(std::count(summary.begin(), summary.end(), '\n'));
  fs::remove_all(root);
  return {missing == 0 && differing == 0 && rows == 5.0,
          fmt("%.0f cells, %.0f summary lines, %.0f missing, %.0f differing artifacts",
              static_cast<double>(harness::sweep_cells(config).size()), rows, static_cast<double>(missing),
              static_cast<double>(differing))};
}

Outcome criterion11() {
  std::size_t differing = 0;
  std::size_t runs = 0;
  const fs::path root = fs::temp_directory_path() / "blockpg_acceptance_repeat";
  for (auto objective : {trainer::Objective::kPpo, trainer::Objective::kMpo, trainer::Objective::kGrpo}) {
    fs::remove_all(root);
    auto config = small_run();
    config.train.objective = objective;
    if (objective == trainer::Objective::kGrpo) config.train.group_size = 4;
    std::ostringstream log;
    harness::run_train(config, (root / "a").string(), log);
    harness::run_train(config, (root / "b").string(), log);
    if (read_bytes(root / "a" / "metrics.csv") != read_bytes(root / "b" / "metrics.csv")) ++differing;
    ++runs;
  }
  fs::remove_all(root);
  return {differing == 0, fmt("%.0f of %.0f repeated runs differ", static_cast<double>(differing),
                              static_cast<double>(runs))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<Outcome()>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},   {5, criterion5},   {6, criterion6},
      {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}, {11, criterion11},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (criteria.count(n) == 0) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
      return 2;
    }
    selected.insert(n);
  }
  if (selected.empty()) {
    for (const auto& [n, _] : criteria) selected.insert(n);
  }

  int failures = 0;
  for (int n : selected) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria.at(n)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %d: %s (%.1f s) %s\n", n, o.pass ? "PASS" : "FAIL", seconds, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
