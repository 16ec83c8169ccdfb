// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

namespace blockpg::harness {

namespace fs = std::filesystem;

namespace {

void make_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required (--out)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

RunManifest start_manifest(const std::string& command, const RunConfig& config, const std::string& out_dir) {
  RunManifest m;
  m.command = command;
  m.config_text = serialize_config(config);
  m.seed = config.train.seed;
  m.version = code_version();
  m.started = utc_timestamp();
  m.output_dir = out_dir;
  return m;
}

void finish_manifest(RunManifest& m, const std::string& out_dir) {
  m.finished = utc_timestamp();
  m.artifacts.push_back("manifest.json");
  for (const auto& a : m.artifacts) {
    if (a != "manifest.json" && !fs::exists(join_path(out_dir, a))) {
      throw IoError("artifact '" + a + "' is missing from " + out_dir);
    }
  }
  write_manifest(join_path(out_dir, "manifest.json"), m);
}

std::string warmup_csv(const trainer::WarmupResult& w) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < w.loss_trace.size(); ++i) out += std::to_string(i + 1) + "," + fmt(w.loss_trace[i]) + "\n";
  return out;
}

struct TrainSummary {
  double mean_ratio_variance = 0.0;
  double mean_clip_fraction = 0.0;
  double final_reward = 0.0;
  // First update whose rollout mean reward reached 0.9; 0 if none did.
  std::size_t first_hit = 0;
};

TrainSummary summarize(const std::vector<trainer::MetricsRecord>& trace) {
  TrainSummary s;
  if (trace.empty()) return s;
  for (const auto& r : trace) {
    s.mean_ratio_variance += r.ratio_variance;
    s.mean_clip_fraction += r.clip_fraction;
    if (s.first_hit == 0 && r.mean_reward >= 0.9) s.first_hit = r.update;
  }
  const double n = static_cast<double>(trace.size());
  s.mean_ratio_variance /= n;
  s.mean_clip_fraction /= n;
  const std::size_t tail = std::max<std::size_t>(1, trace.size() / 10);
  for (std::size_t i = trace.size() - tail; i < trace.size(); ++i) s.final_reward += trace[i].mean_reward;
  s.final_reward /= static_cast<double>(tail);
  return s;
}

// Train one configuration into `out_dir`. Log lines go to `log`.
trainer::TrainResult train_into(const RunConfig& config, const std::string& out_dir, std::size_t threads,
                                std::ostream& log, const std::string& command) {
  make_dir(out_dir);
  auto manifest = start_manifest(command, config, out_dir);
  const auto& tc = config.train;
  const std::size_t K = tc.model.K;

  trainer::Trainer tr(tc, threads);
  write_file(join_path(out_dir, "config.ini"), manifest.config_text);
  manifest.artifacts.push_back("config.ini");
  model::save_checkpoint(join_path(out_dir, "initial.ckpt"), tr.params(), manifest.config_text);
  manifest.artifacts.push_back("initial.ckpt");

  trainer::WarmupResult warm;
  if (tc.init_checkpoint.empty() && tc.warmup_steps > 0) {
    warm = tr.warmup(trainer::stage1_corpus(tc, tr.task(), tr.params()), tc.warmup_steps);
    if (!warm.warning.empty()) log << "warning: " << warm.warning << "\n";
    if (!warm.loss_trace.empty()) {
      log << "warm-up: loss " << warm.loss_trace.front() << " -> " << warm.loss_trace.back() << " over "
          << warm.loss_trace.size() << " steps\n";
    }
    write_file(join_path(out_dir, "warmup_loss.csv"), warmup_csv(warm));
    manifest.artifacts.push_back("warmup_loss.csv");
    model::save_checkpoint(join_path(out_dir, "warmup.ckpt"), tr.params(), manifest.config_text);
    manifest.artifacts.push_back("warmup.ckpt");
  }

  // Rows are appended as updates finish, so a partial run keeps its metrics.
  const std::string csv_path = join_path(out_dir, "metrics.csv");
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
  {
    const auto header = metrics_header(K);
    for (std::size_t i = 0; i < header.size(); ++i) csv << (i ? "," : "") << header[i];
    csv << "\n";
  }
  const std::size_t every = std::max<std::size_t>(1, tc.updates / 10);
  auto result = tr.train([&](const trainer::MetricsRecord& rec) {
    csv << metrics_csv_row(rec, K);
    csv.flush();
    if (rec.update % every == 0 || rec.update == tc.updates) {
      log << "update " << rec.update << "/" << tc.updates << "  reward " << short_num(rec.mean_reward)
          << "  ratio_var " << short_num(rec.ratio_variance) << "  clip " << short_num(rec.clip_fraction) << "\n";
    }
  });
  csv.close();
  if (!csv) throw IoError("failed writing '" + csv_path + "'");
  result.warmup = warm;
  manifest.artifacts.push_back("metrics.csv");

  model::save_checkpoint(join_path(out_dir, "final.ckpt"), result.params, manifest.config_text);
  manifest.artifacts.push_back("final.ckpt");

  if (!result.trace.empty()) {
    const auto table = read_metrics_csv(csv_path);
    const std::vector<PlotRun> runs{{trainer::to_string(tc.objective), table, tc.blend().mtp_mass()}};
    write_plot(join_path(out_dir, "ratio_variance.svg"), runs, PlotKind::kRatioVariance);
    write_plot(join_path(out_dir, "clip_fraction.svg"), runs, PlotKind::kClipFraction);
    manifest.artifacts.push_back("ratio_variance.svg");
    manifest.artifacts.push_back("clip_fraction.svg");
    if (K >= 2) {
      write_plot(join_path(out_dir, "rank_vs_step.svg"), runs, PlotKind::kRankVsStep);
      manifest.artifacts.push_back("rank_vs_step.svg");
    }
    manifest.finished = utc_timestamp();
    write_metrics_json(join_path(out_dir, "metrics.json"), result.trace, K, manifest);
    manifest.artifacts.push_back("metrics.json");
  }
  finish_manifest(manifest, out_dir);
  return result;
}

std::vector<fs::path> run_dirs(const std::string& out_dir) {
  std::vector<fs::path> dirs;
  if (fs::exists(fs::path(out_dir) / "metrics.csv")) dirs.push_back(out_dir);
  const auto cells = fs::path(out_dir) / "cells";
  if (fs::is_directory(cells)) {
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(cells))
      if (fs::exists(entry.path() / "metrics.csv")) found.push_back(entry.path());
    std::sort(found.begin(), found.end());
    dirs.insert(dirs.end(), found.begin(), found.end());
  }
  return dirs;
}

PlotRun load_run(const fs::path& dir, const std::string& label) {
  PlotRun run;
  run.label = label;
  run.metrics = read_metrics_csv((dir / "metrics.csv").string());
  if (fs::exists(dir / "config.ini")) {
    run.x = parse_config((dir / "config.ini").string()).train.blend().mtp_mass();
  }
  return run;
}

}  // namespace

RunConfig resolve_config(const CommandOptions& options) {
  RunConfig config = options.config_path.empty() ? RunConfig{} : parse_config(options.config_path);
  if (options.seed) config.train.seed = *options.seed;
  if (options.objective) config.train.objective = *options.objective;
  if (options.ratio) config.train.ratio = *options.ratio;
  if (options.freeze_backbone) config.train.freeze_backbone = true;
  config.train.validate();
  return config;
}

void run_warmup(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
  make_dir(out_dir);
  auto manifest = start_manifest("warmup", config, out_dir);
  const auto& tc = config.train;
  trainer::Trainer tr(tc);
  write_file(join_path(out_dir, "config.ini"), manifest.config_text);
  manifest.artifacts.push_back("config.ini");
  const auto corpus = trainer::stage1_corpus(tc, tr.task(), tr.params());
  const auto before = tr.params();
  const auto result = tr.warmup(corpus, tc.warmup_steps);
  if (!result.warning.empty()) log << "warning: " << result.warning << "\n";
  if (!result.loss_trace.empty()) {
    log << "warm-up: loss " << result.loss_trace.front() << " -> " << result.loss_trace.back() << " over "
        << result.loss_trace.size() << " steps\n";
  }
  for (const auto& [name, t] : before.tensors()) {
    if (model::group_of(name) != model::ParamGroup::kMtp && !(t == tr.params().at(name))) {
      throw NumericDomainError("warm-up changed non-MTP parameter '" + name + "'");
    }
  }
  write_file(join_path(out_dir, "warmup_loss.csv"), warmup_csv(result));
  manifest.artifacts.push_back("warmup_loss.csv");
  model::save_checkpoint(join_path(out_dir, "warmup.ckpt"), tr.params(), manifest.config_text);
  manifest.artifacts.push_back("warmup.ckpt");
  finish_manifest(manifest, out_dir);
}

trainer::TrainResult run_train(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
  return train_into(config, out_dir, trainer::thread_budget(0), log, "train");
}

std::vector<SweepCell> sweep_cells(const RunConfig& config) {
  std::vector<SweepCell> cells;
  const bool by_mass = !config.sweep.mtp_mass.empty();
  const auto& second = by_mass ? config.sweep.mtp_mass : config.sweep.beta2;
  for (std::size_t K : config.sweep.K) {
    for (double value : second) {
      for (double decay : config.sweep.decay) {
        SweepCell cell;
        cell.config = config.train;
        cell.config.model.K = K;
        cell.config.decay = decay;
        cell.config.beta2 = by_mass ? algo::blend_for_mass(K, value, decay).beta2 : value;
        cell.mtp_mass = cell.config.blend().mtp_mass();
        cell.name = "K" + std::to_string(K) + (by_mass ? "_mass" : "_beta") + short_num(value) + "_decay" +
                    short_num(decay);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

void run_sweep(const RunConfig& config, const std::string& out_dir, std::ostream& log) {
  make_dir(out_dir);
  auto manifest = start_manifest("sweep", config, out_dir);
  write_file(join_path(out_dir, "config.ini"), manifest.config_text);
  manifest.artifacts.push_back("config.ini");
  const auto cells = sweep_cells(config);
  if (cells.empty()) throw ConfigError("sweep: the grid is empty");

  // Cells run concurrently when threads allow; each writes only its own
  // directory and log buffer, and the summary is assembled in cell order.
  const std::size_t budget = trainer::thread_budget(0);
  const std::size_t workers = std::min(budget, cells.size());
  const std::size_t inner = std::max<std::size_t>(1, budget / std::max<std::size_t>(1, workers));
  std::vector<std::string> logs(cells.size());
  std::vector<TrainSummary> summaries(cells.size());
  trainer::parallel_for(cells.size(), workers, [&](std::size_t i) {
    std::ostringstream cell_log;
    RunConfig cell_config = config;
    cell_config.train = cells[i].config;
    const auto result =
        train_into(cell_config, join_path(join_path(out_dir, "cells"), cells[i].name), inner, cell_log, "sweep");
    summaries[i] = summarize(result.trace);
    logs[i] = cell_log.str();
  });

  std::ostringstream table;
  table << "cell,K,beta2,decay,mtp_mass,mean_ratio_variance,mean_clip_fraction,final_reward,first_update_reward_0.9\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i].config;
    const auto& s = summaries[i];
    log << "[" << cells[i].name << "]\n" << logs[i];
    table << cells[i].name << "," << c.model.K << "," << fmt(c.beta2) << "," << fmt(c.decay) << ","
          << fmt(cells[i].mtp_mass) << "," << fmt(s.mean_ratio_variance) << "," << fmt(s.mean_clip_fraction) << ","
          << fmt(s.final_reward) << "," << s.first_hit << "\n";
  }
  write_file(join_path(out_dir, "summary.csv"), table.str());
  manifest.artifacts.push_back("summary.csv");

  std::vector<PlotRun> runs;
  for (const auto& cell : cells) {
    auto run = load_run(fs::path(out_dir) / "cells" / cell.name, cell.name);
    run.x = cell.mtp_mass;
    runs.push_back(std::move(run));
  }
  write_plot(join_path(out_dir, "weight_sweep.svg"), runs, PlotKind::kWeightSweep);
  write_plot(join_path(out_dir, "ratio_variance.svg"), runs, PlotKind::kRatioVariance);
  write_plot(join_path(out_dir, "clip_fraction.svg"), runs, PlotKind::kClipFraction);
  for (const char* a : {"weight_sweep.svg", "ratio_variance.svg", "clip_fraction.svg"}) manifest.artifacts.push_back(a);
  for (const auto& cell : cells) manifest.artifacts.push_back("cells/" + cell.name + "/metrics.csv");

  log << "\n" << "cell                               mass    ratio_var     clip   final_reward\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    char line[160];
    std::snprintf(line, sizeof line, "%-32s %7.4f  %10.6f  %7.4f  %7.4f\n", cells[i].name.c_str(), cells[i].mtp_mass,
                  summaries[i].mean_ratio_variance, summaries[i].mean_clip_fraction, summaries[i].final_reward);
    log << line;
  }
  finish_manifest(manifest, out_dir);
}

void run_report(const std::string& out_dir, std::ostream& log) {
  if (!fs::is_directory(out_dir)) throw IoError("report: directory not found: " + out_dir);
  const auto dirs = run_dirs(out_dir);
  if (dirs.empty()) throw InputError("report: no metrics.csv under " + out_dir);
  std::vector<PlotRun> runs;
  for (const auto& dir : dirs) runs.push_back(load_run(dir, dir == fs::path(out_dir) ? "run" : dir.filename().string()));
  const std::string report = join_path(out_dir, "report");
  make_dir(report);
  write_plot(join_path(report, "ratio_variance.svg"), runs, PlotKind::kRatioVariance);
  write_plot(join_path(report, "clip_fraction.svg"), runs, PlotKind::kClipFraction);
  std::size_t written = 2;
  const bool ranks = std::all_of(runs.begin(), runs.end(), [](const PlotRun& r) {
    return std::any_of(r.metrics.columns.begin(), r.metrics.columns.end(),
                       [](const std::string& c) { return c.rfind("rank_offset_", 0) == 0; });
  });
  if (ranks) {
    write_plot(join_path(report, "rank_vs_step.svg"), runs, PlotKind::kRankVsStep);
    ++written;
  }
  if (runs.size() > 1) {
    write_plot(join_path(report, "weight_sweep.svg"), runs, PlotKind::kWeightSweep);
    ++written;
  }
  log << "report: " << written << " plots from " << runs.size() << " run(s) in " << report << "\n";
}

void write_verify_report(const std::string& out_dir, std::span<const CheckResult> checks) {
  make_dir(out_dir);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    // JSON has no infinity; failed checks may carry one.
    const auto number = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(); };
    j.push_back({{"name", c.name}, {"tolerance", c.tolerance}, {"measured", number(c.measured)}, {"pass", c.pass},
                 {"detail", c.detail}});
  }
  write_file(join_path(out_dir, "verify.json"), j.dump(1) + "\n");
}

int run_command(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const auto& cmd = options.command;
    if (cmd == "verify") {
      VerifyOptions v;
      v.corrupt_clip_gradient = options.corrupt_clip_gradient;
      v.seed = options.seed.value_or(0);
      const auto checks = run_verify(v);
      print_checks(out, checks);
      if (!options.out_dir.empty()) write_verify_report(options.out_dir, checks);
      return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; }) ? 0 : 1;
    }
    if (cmd == "report") {
      run_report(options.out_dir, out);
      return 0;
    }
    const RunConfig config = resolve_config(options);
    if (cmd == "warmup") {
      run_warmup(config, options.out_dir, out);
    } else if (cmd == "train") {
      run_train(config, options.out_dir, out);
    } else if (cmd == "sweep") {
      run_sweep(config, options.out_dir, out);
    } else {
      err << "error: unknown command '" << cmd << "' (expected warmup, train, sweep, verify or report)\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace blockpg::harness
