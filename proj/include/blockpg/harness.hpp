// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

// Run plumbing: INI-style configuration, metrics files, SVG plots, the
// warmup/train/sweep/report commands, and the verify oracle suite.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "blockpg/trainer.hpp"

namespace blockpg::harness {

// ---------------------------------------------------------------------------
// Configuration

// Grid for the `sweep` command. Every combination of K, beta2 and decay is one
// cell; a non-empty mtp_mass list replaces the beta2 axis with total MTP mass.
struct SweepSpec {
  std::vector<std::size_t> K{2, 3, 5};
  std::vector<double> beta2{0.04, 0.06, 0.08};
  std::vector<double> decay{0.8, 0.9, 1.0};
  std::vector<double> mtp_mass;
  bool operator==(const SweepSpec&) const = default;
};

struct RunConfig {
  trainer::TrainConfig train;
  SweepSpec sweep;
  bool operator==(const RunConfig&) const = default;
};

// Sectioned key = value text. Unknown sections or keys, malformed values and
// violated constraints raise ConfigError naming `source` and the line.
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");
// Throws IoError "file not found" when `path` does not exist.
RunConfig parse_config(const std::string& path);
// Every key with its current value; parse_config_text reads it back equal.
std::string serialize_config(const RunConfig& config);
// Single-key access by "section.key"; values use the config-file syntax.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// ---------------------------------------------------------------------------
// Metrics

struct RunManifest {
  std::string command;
  std::string config_text;
  std::uint64_t seed = 0;
  std::string version;
  std::string started;
  std::string finished;
  std::string output_dir;
  std::vector<std::string> artifacts;
};

std::string code_version();
// UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string utc_timestamp();

// update, ratio_variance, clip_fraction, grad_norm, mean_reward,
// rank_offset_2..rank_offset_K, objective.
std::vector<std::string> metrics_header(std::size_t K);
std::string metrics_csv(std::span<const trainer::MetricsRecord> trace, std::size_t K);
// One data line, newline included, in the same format as metrics_csv.
std::string metrics_csv_row(const trainer::MetricsRecord& record, std::size_t K);
// Throws InputError on an empty trace, IoError if the file cannot be written.
void write_metrics_csv(const std::string& path, std::span<const trainer::MetricsRecord> trace, std::size_t K);
void write_metrics_json(const std::string& path, std::span<const trainer::MetricsRecord> trace, std::size_t K,
                        const RunManifest& manifest);
void write_manifest(const std::string& path, const RunManifest& manifest);

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  // Throws InputError naming the column if it is absent.
  std::size_t column_index(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

MetricsTable parse_metrics_csv(const std::string& text);
MetricsTable read_metrics_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Plots

enum class PlotKind { kRatioVariance, kClipFraction, kWeightSweep, kRankVsStep };
std::string to_string(PlotKind kind);
PlotKind parse_plot_kind(const std::string& text);

struct PlotRun {
  std::string label;
  MetricsTable metrics;
  // Horizontal position for the weight-sweep plot (the run's MTP mass).
  double x = 0.0;
};

// Mean of mean_reward over the last tenth of a run (at least one record).
double final_reward(const MetricsTable& metrics);

// Deterministic SVG text. Throws InputError on no runs or empty metrics.
std::string render_plot(std::span<const PlotRun> runs, PlotKind kind);
// Renders first, so nothing is written when rendering fails.
void write_plot(const std::string& path, std::span<const PlotRun> runs, PlotKind kind);

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<trainer::Objective> objective;
  std::optional<algo::RatioKind> ratio;
  bool freeze_backbone = false;
  // Test hook for verify: corrupts the clip subgradient.
  bool corrupt_clip_gradient = false;
};

// Loads the config (defaults when config_path is empty) and applies the
// command-line overrides.
RunConfig resolve_config(const CommandOptions& options);

// Stage 1 only: warm-up loss trace and the warmed-up checkpoint.
void run_warmup(const RunConfig& config, const std::string& out_dir, std::ostream& log);
// Stage 1 and Stage 2 with metrics, checkpoints and plots.
trainer::TrainResult run_train(const RunConfig& config, const std::string& out_dir, std::ostream& log);

struct SweepCell {
  std::string name;
  trainer::TrainConfig config;
  double mtp_mass = 0.0;
};
std::vector<SweepCell> sweep_cells(const RunConfig& config);
// One run per cell under out_dir/cells/<name>, then summary.csv and plots.
void run_sweep(const RunConfig& config, const std::string& out_dir, std::ostream& log);
// Re-renders plots from the metrics stored under out_dir.
void run_report(const std::string& out_dir, std::ostream& log);

// ---------------------------------------------------------------------------
// Verification

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double measured = 0.0;
  bool pass = false;
  std::string detail;
};

struct VerifyOptions {
  bool corrupt_clip_gradient = false;
  std::uint64_t seed = 0;
};

// Individual oracle checks; each is hermetic.
CheckResult check_ppo_reduction(std::size_t batches, std::uint64_t seed);
CheckResult check_geometric_mean(std::size_t tuples, std::uint64_t seed);
CheckResult check_blend_constraints();
enum class GradObjective { kPpo, kMpoBlend, kMpoProduct, kWarmup, kCritic };
std::string to_string(GradObjective objective);
CheckResult check_gradient(GradObjective objective, std::uint64_t seed, bool corrupt_clip_gradient = false);
CheckResult check_bias_bound(std::size_t mdps, std::uint64_t seed);
CheckResult check_bootstrap_component(std::size_t mdps, std::uint64_t seed);
CheckResult check_unbiasedness(std::size_t mdps, std::uint64_t seed);
CheckResult check_oracle_agreement(std::size_t mdps, std::uint64_t seed);
CheckResult check_init_mtp(std::uint64_t seed);
// Warm-up on the counting corpus: loss reduction and backbone freeze.
CheckResult check_warmup_reduction(std::size_t steps, std::uint64_t seed);
CheckResult check_warmup_freeze(std::size_t steps, std::uint64_t seed);
CheckResult check_on_policy_start(std::uint64_t seed);

std::vector<CheckResult> run_verify(const VerifyOptions& options = {});
void print_checks(std::ostream& out, std::span<const CheckResult> checks);
// Writes out_dir/verify.json, creating the directory if needed.
void write_verify_report(const std::string& out_dir, std::span<const CheckResult> checks);

// The CLI entry point: returns the process exit status.
int run_command(const CommandOptions& options, std::ostream& out, std::ostream& err);

}  // namespace blockpg::harness
