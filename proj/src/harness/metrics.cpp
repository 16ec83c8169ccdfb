// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

#ifndef BLOCKPG_VERSION
#define BLOCKPG_VERSION "unknown"
#endif

namespace blockpg::harness {

namespace {

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<double> row_of(const trainer::MetricsRecord& r, std::size_t K) {
  std::vector<double> row{static_cast<double>(r.update), r.ratio_variance, r.clip_fraction, r.grad_norm,
                          r.mean_reward};
  for (std::size_t k = 2; k <= K; ++k) row.push_back(k - 2 < r.token_rank.size() ? r.token_rank[k - 2] : 0.0);
  row.push_back(r.objective);
  return row;
}

nlohmann::ordered_json manifest_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["output_dir"] = m.output_dir;
  j["artifacts"] = m.artifacts;
  j["config"] = m.config_text;
  return j;
}

}  // namespace

std::string code_version() { return BLOCKPG_VERSION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> metrics_header(std::size_t K) {
  std::vector<std::string> h{"update", "ratio_variance", "clip_fraction", "grad_norm", "mean_reward"};
  for (std::size_t k = 2; k <= K; ++k) h.push_back("rank_offset_" + std::to_string(k));
  h.push_back("objective");
  return h;
}

std::string metrics_csv(std::span<const trainer::MetricsRecord> trace, std::size_t K) {
  std::ostringstream out;
  const auto header = metrics_header(K);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (const auto& rec : trace) out << metrics_csv_row(rec, K);
  return out.str();
}

std::string metrics_csv_row(const trainer::MetricsRecord& record, std::size_t K) {
  const auto row = row_of(record, K);
  std::string line = std::to_string(record.update);
  for (std::size_t i = 1; i < row.size(); ++i) line += "," + format_value(row[i]);
  return line + "\n";
}

void write_metrics_csv(const std::string& path, std::span<const trainer::MetricsRecord> trace, std::size_t K) {
  if (trace.empty()) throw InputError("export_metrics: empty trace");
  write_text(path, metrics_csv(trace, K));
}

void write_metrics_json(const std::string& path, std::span<const trainer::MetricsRecord> trace, std::size_t K,
                        const RunManifest& manifest) {
  if (trace.empty()) throw InputError("export_metrics: empty trace");
  nlohmann::ordered_json j;
  j["manifest"] = manifest_json(manifest);
  j["columns"] = metrics_header(K);
  auto rows = nlohmann::ordered_json::array();
  for (const auto& rec : trace) rows.push_back(row_of(rec, K));
  j["rows"] = std::move(rows);
  write_text(path, j.dump(1) + "\n");
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  write_text(path, manifest_json(manifest).dump(1) + "\n");
}

std::size_t MetricsTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return i;
  throw InputError("metrics: missing column '" + name + "'");
}

bool MetricsTable::has_column(const std::string& name) const {
  for (const auto& c : columns)
    if (c == name) return true;
  return false;
}

std::vector<double> MetricsTable::column(const std::string& name) const {
  const std::size_t i = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(row[i]);
  return out;
}

MetricsTable parse_metrics_csv(const std::string& text) {
  MetricsTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (table.columns.empty()) {
      table.columns = std::move(cells);
      continue;
    }
    if (cells.size() != table.columns.size()) {
      throw InputError("metrics: line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " fields, header has " + std::to_string(table.columns.size()));
    }
    std::vector<double> row;
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || *end != '\0') {
        throw InputError("metrics: line " + std::to_string(line_no) + ": bad number '" + c + "'");
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw InputError("metrics: missing header");
  return table;
}

MetricsTable read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("metrics: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics_csv(ss.str());
}

}  // namespace blockpg::harness
