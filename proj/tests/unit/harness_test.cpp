// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
namespace harness = blockpg::harness;
namespace trainer = blockpg::trainer;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("blockpg_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<trainer::MetricsRecord> sample_trace(std::size_t n) {
  std::vector<trainer::MetricsRecord> trace;
  for (std::size_t i = 1; i <= n; ++i) {
    trainer::MetricsRecord r;
    r.update = i;
    r.ratio_variance = 0.001 * std::sqrt(static_cast<double>(i));
    r.clip_fraction = 1.0 / (3.0 + static_cast<double>(i));
    r.grad_norm = 0.1 + 1e-17 * static_cast<double>(i);
    r.mean_reward = std::min(1.0, 0.07 * static_cast<double>(i));
    r.token_rank = {1.5, 2.0 / 3.0};
    r.objective = -0.2 / static_cast<double>(i);
    trace.push_back(r);
  }
  return trace;
}

harness::RunConfig tiny_run() {
  harness::RunConfig c;
  c.train.task.block_len = 3;
  c.train.task.vocab = 6;
  c.train.model.d_model = 8;
  c.train.model.K = 3;
  c.train.rollout_batch = 8;
  c.train.minibatch = 4;
  c.train.epochs = 1;
  c.train.updates = 4;
  c.train.warmup_steps = 3;
  c.train.warmup_corpus_size = 8;
  return c;
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) { EXPECT_EQ(harness::parse_config_text(""), harness::RunConfig{}); }

TEST(Config, SerializeRoundTrips) {
  harness::RunConfig c;
  c.train.beta2 = 0.07;
  c.train.decay = 0.9;
  c.train.actor_lr = 1.0 / 3.0;
  c.train.objective = trainer::Objective::kPpo;
  c.train.init_checkpoint = "runs/x.ckpt";
  c.sweep.mtp_mass = {0.0, 0.1, 0.2, 0.4};
  const auto back = harness::parse_config_text(harness::serialize_config(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(harness::serialize_config(back), harness::serialize_config(c));
}

TEST(Config, ParsesSectionsAndComments) {
  const auto c = harness::parse_config_text(
      "# comment\n[model]\nK = 3 ; trailing\n\n[blend]\nbeta2 = 0.08\ndecay=0.9\n[train]\nobjective = grpo\n"
      "[advantage]\ngroup_size = 4\n");
  EXPECT_EQ(c.train.model.K, 3u);
  EXPECT_EQ(c.train.beta2, 0.08);
  EXPECT_EQ(c.train.decay, 0.9);
  EXPECT_EQ(c.train.objective, trainer::Objective::kGrpo);
  EXPECT_EQ(c.train.group_size, 4u);
}

TEST(Config, ExcessMtpMassNamesTheLine) {
  try {
    harness::parse_config_text("[model]\nK = 5\n[blend]\nbeta2 = 0.5\ndecay = 1.0\n", "grid.ini");
    FAIL() << "expected ConfigError";
  } catch (const blockpg::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("grid.ini:5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("mass"), std::string::npos) << msg;
  }
}

TEST(Config, UnknownKeyAndTypeErrorsNameTheLine) {
  try {
    harness::parse_config_text("[train]\nupdates = 10\nlearning_rate = 3\n", "a.ini");
    FAIL();
  } catch (const blockpg::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.ini:3"), std::string::npos) << e.what();
  }
  try {
    harness::parse_config_text("[train]\nupdates = ten\n", "b.ini");
    FAIL();
  } catch (const blockpg::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("b.ini:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(harness::parse_config_text("[nosuch]\n"), blockpg::ConfigError);
  EXPECT_THROW(harness::parse_config_text("K = 3\n"), blockpg::ConfigError);
  EXPECT_THROW(harness::parse_config_text("[model]\nK = 3\nK = 4\n"), blockpg::ConfigError);
  EXPECT_THROW(harness::parse_config_text("[train]\nfreeze_backbone = maybe\n"), blockpg::ConfigError);
}

TEST(Config, MissingFileIsIoError) {
  try {
    harness::parse_config("/nonexistent/missing.cfg");
    FAIL();
  } catch (const blockpg::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("file not found"), std::string::npos);
  }
}

TEST(Config, SingleKeyAccess) {
  harness::RunConfig c;
  harness::set_config_value(c, "train.objective", "ppo");
  harness::set_config_value(c, "blend.ratio", "product");
  EXPECT_EQ(harness::get_config_value(c, "train.objective"), "ppo");
  EXPECT_EQ(harness::get_config_value(c, "blend.ratio"), "product");
  EXPECT_THROW(harness::set_config_value(c, "train.nope", "1"), blockpg::ConfigError);
}

TEST(Config, CommandLineOverrides) {
  harness::CommandOptions o;
  o.command = "train";
  o.seed = 9;
  o.objective = trainer::Objective::kPpo;
  o.freeze_backbone = true;
  const auto c = harness::resolve_config(o);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.train.objective, trainer::Objective::kPpo);
  EXPECT_TRUE(c.train.freeze_backbone);
}

TEST(Metrics, HeaderIsFixed) {
  EXPECT_EQ(harness::metrics_header(3),
            (std::vector<std::string>{"update", "ratio_variance", "clip_fraction", "grad_norm", "mean_reward",
                                      "rank_offset_2", "rank_offset_3", "objective"}));
  EXPECT_EQ(harness::metrics_header(1).size(), 6u);
}

TEST(Metrics, OneRecordGivesTwoLines) {
  const auto csv = harness::metrics_csv(sample_trace(1), 3);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Metrics, CsvRoundTripsToFifteenDigits) {
  const auto trace = sample_trace(7);
  const auto table = harness::parse_metrics_csv(harness::metrics_csv(trace, 3));
  ASSERT_EQ(table.rows.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto& row = table.rows[i];
    const std::vector<double> expect{static_cast<double>(trace[i].update), trace[i].ratio_variance,
                                     trace[i].clip_fraction, trace[i].grad_norm, trace[i].mean_reward,
                                     trace[i].token_rank[0], trace[i].token_rank[1], trace[i].objective};
    for (std::size_t c = 0; c < expect.size(); ++c) {
      EXPECT_NEAR(row[c], expect[c], 1e-15 * std::max(1.0, std::abs(expect[c])));
    }
  }
  EXPECT_EQ(table.column("clip_fraction")[2], trace[2].clip_fraction);
  EXPECT_THROW(table.column("missing"), blockpg::InputError);
}

TEST(Metrics, MalformedCsvIsInputError) {
  EXPECT_THROW(harness::parse_metrics_csv("update,objective\n1\n"), blockpg::InputError);
  EXPECT_THROW(harness::parse_metrics_csv("update,objective\n1,abc\n"), blockpg::InputError);
}

TEST(Metrics, EmptyTraceAndUnwritablePathAreErrors) {
  EXPECT_THROW(harness::write_metrics_csv("/tmp/x.csv", {}, 3), blockpg::InputError);
  EXPECT_THROW(harness::write_metrics_csv("/nonexistent/dir/m.csv", sample_trace(2), 3), blockpg::IoError);
}

TEST(Plot, TwoRunsGiveTwoSeries) {
  const auto table = harness::parse_metrics_csv(harness::metrics_csv(sample_trace(30), 3));
  std::vector<harness::PlotRun> runs{{"ppo", table, 0.0}, {"mpo", table, 0.2}};
  const auto svg = harness::render_plot(runs, harness::PlotKind::kRatioVariance);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t lines = 0;
  for (std::size_t pos = 0; (pos = svg.find("<polyline", pos)) != std::string::npos; ++pos) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_NE(svg.find(">ppo<"), std::string::npos);
  EXPECT_NE(svg.find(">mpo<"), std::string::npos);
  EXPECT_EQ(svg, harness::render_plot(runs, harness::PlotKind::kRatioVariance));
}

TEST(Plot, EveryKindRenders) {
  const auto table = harness::parse_metrics_csv(harness::metrics_csv(sample_trace(12), 3));
  std::vector<harness::PlotRun> runs{{"a", table, 0.1}};
  for (auto kind : {harness::PlotKind::kRatioVariance, harness::PlotKind::kClipFraction,
                    harness::PlotKind::kWeightSweep, harness::PlotKind::kRankVsStep}) {
    EXPECT_EQ(harness::parse_plot_kind(harness::to_string(kind)), kind);
    EXPECT_FALSE(harness::render_plot(runs, kind).empty());
  }
}

TEST(Plot, EmptyMetricsWriteNothing) {
  const auto dir = fresh_dir("plot");
  fs::create_directories(dir);
  const auto path = (dir / "empty.svg").string();
  std::vector<harness::PlotRun> runs{{"a", harness::MetricsTable{harness::metrics_header(3), {}}, 0.0}};
  EXPECT_THROW(harness::write_plot(path, runs, harness::PlotKind::kClipFraction), blockpg::InputError);
  EXPECT_FALSE(fs::exists(path));
  std::vector<harness::PlotRun> none;
  EXPECT_THROW(harness::render_plot(none, harness::PlotKind::kClipFraction), blockpg::InputError);
}

TEST(Plot, MissingColumnIsNamed) {
  harness::MetricsTable t{{"update", "objective"}, {{1, 0.5}}};
  std::vector<harness::PlotRun> runs{{"a", t, 0.0}};
  try {
    harness::render_plot(runs, harness::PlotKind::kRatioVariance);
    FAIL();
  } catch (const blockpg::InputError& e) {
    EXPECT_NE(std::string(e.what()).find("ratio_variance"), std::string::npos);
  }
}

TEST(Runner, TrainWritesEveryManifestArtifact) {
  const auto dir = fresh_dir("train");
  std::ostringstream log;
  const auto result = harness::run_train(tiny_run(), dir.string(), log);
  EXPECT_EQ(result.trace.size(), 4u);
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("command"), "train");
  EXPECT_FALSE(manifest.at("version").get<std::string>().empty());
  for (const auto& name : manifest.at("artifacts")) EXPECT_TRUE(fs::exists(dir / name.get<std::string>())) << name;
  for (const char* name : {"metrics.csv", "metrics.json", "final.ckpt", "config.ini", "ratio_variance.svg"}) {
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  }
  EXPECT_EQ(read_file(dir / "metrics.csv"), harness::metrics_csv(result.trace, 3));
  const auto json = nlohmann::json::parse(read_file(dir / "metrics.json"));
  EXPECT_EQ(json.at("rows").size(), 4u);
  EXPECT_EQ(harness::parse_config_text(read_file(dir / "config.ini")), tiny_run());
}

TEST(Runner, RepeatedTrainIsByteIdentical) {
  const auto a = fresh_dir("repeat_a");
  const auto b = fresh_dir("repeat_b");
  std::ostringstream log;
  harness::run_train(tiny_run(), a.string(), log);
  harness::run_train(tiny_run(), b.string(), log);
  EXPECT_EQ(read_file(a / "metrics.csv"), read_file(b / "metrics.csv"));
  EXPECT_EQ(read_file(a / "final.ckpt"), read_file(b / "final.ckpt"));
  EXPECT_EQ(read_file(a / "ratio_variance.svg"), read_file(b / "ratio_variance.svg"));
}

TEST(Runner, WarmupKeepsBackbone) {
  const auto dir = fresh_dir("warmup");
  std::ostringstream log;
  harness::run_warmup(tiny_run(), dir.string(), log);
  EXPECT_TRUE(fs::exists(dir / "warmup.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "warmup_loss.csv"));
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(Runner, SweepCellsCoverTheGrid) {
  harness::RunConfig c;
  EXPECT_EQ(harness::sweep_cells(c).size(), 27u);
  c.sweep.K = {5};
  c.sweep.decay = {0.8};
  c.sweep.mtp_mass = {0.0, 0.1, 0.2, 0.4};
  const auto cells = harness::sweep_cells(c);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[1].name, "K5_mass0.1_decay0.8");
  for (const auto& cell : cells) EXPECT_NEAR(cell.config.blend().mtp_mass(), cell.mtp_mass, 1e-12);
}

TEST(Runner, SweepAndReport) {
  auto c = tiny_run();
  c.train.updates = 2;
  c.sweep.K = {2, 3};
  c.sweep.beta2 = {0.05};
  c.sweep.decay = {0.8};
  const auto dir = fresh_dir("sweep");
  std::ostringstream log;
  harness::run_sweep(c, dir.string(), log);
  for (const char* cell : {"K2_beta0.05_decay0.8", "K3_beta0.05_decay0.8"}) {
    EXPECT_TRUE(fs::exists(dir / "cells" / cell / "metrics.csv")) << cell;
  }
  const auto summary = read_file(dir / "summary.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(dir / "weight_sweep.svg"));
  harness::run_report(dir.string(), log);
  EXPECT_TRUE(fs::exists(dir / "report" / "ratio_variance.svg"));
}

TEST(Runner, MissingConfigFailsWithMessage) {
  harness::CommandOptions o;
  o.command = "train";
  o.config_path = "/nonexistent/missing.cfg";
  o.out_dir = fresh_dir("missing").string();
  std::ostringstream out;
  std::ostringstream err;
  EXPECT_NE(harness::run_command(o, out, err), 0);
  EXPECT_NE(err.str().find("file not found"), std::string::npos);
}

TEST(Verify, ReportIsWritten) {
  const auto dir = fresh_dir("verify");
  std::vector<harness::CheckResult> checks{harness::check_blend_constraints(),
                                           harness::check_geometric_mean(100, 1)};
  harness::write_verify_report(dir.string(), checks);
  const auto json = nlohmann::json::parse(read_file(dir / "verify.json"));
  ASSERT_EQ(json.size(), 2u);
  EXPECT_EQ(json[0].at("name"), checks[0].name);
  for (const auto& c : checks) EXPECT_TRUE(c.pass) << c.name;
}

TEST(Verify, BiasBoundRatioIsAtMostOne) {
  const auto c = harness::check_bias_bound(4, 3);
  EXPECT_TRUE(c.pass) << c.detail;
  EXPECT_LE(c.measured, 1.0);
}

TEST(Verify, CorruptedClipFailsOnlyClipDependentChecks) {
  EXPECT_FALSE(harness::check_gradient(harness::GradObjective::kPpo, 0, true).pass);
  EXPECT_TRUE(harness::check_gradient(harness::GradObjective::kWarmup, 0, true).pass);
  EXPECT_TRUE(harness::check_gradient(harness::GradObjective::kCritic, 0, true).pass);
}
