// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blockpg/error.hpp"
#include "blockpg/harness.hpp"

namespace blockpg::harness {

namespace {

constexpr double kWidth = 760, kHeight = 440;
constexpr double kLeft = 70, kRight = 200, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

struct Series {
  std::string label;
  std::vector<double> x, y;
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Trailing moving average; keeps per-update noise from hiding the trend.
std::vector<double> smooth(const std::vector<double>& v) {
  const std::size_t w = std::max<std::size_t>(1, v.size() / 50);
  std::vector<double> out(v.size());
  double running = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    running += v[i];
    if (i >= w) running -= v[i - w];
    out[i] = running / static_cast<double>(std::min(i + 1, w));
  }
  return out;
}

std::string render(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                   const std::string& y_label, bool markers) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) {
      if (!std::isfinite(v)) throw InputError("plot: non-finite value in series '" + s.label + "'");
      y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
  }
  if (x1 <= x0) x0 -= 0.5, x1 += 0.5;
  if (y1 <= y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(title) << "</text>\n";
  svg << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(px(xv))
        << "\" y2=\"" << num(kTop + ph + 5) << "\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
        << tick_label(xv) << "</text>\n";
    svg << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(kLeft + pw)
        << "\" y2=\"" << num(py(yv)) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
        << tick_label(yv) << "</text>\n";
  }
  svg << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 10) << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  svg << "<text transform=\"translate(16 " << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    if (s.x.size() > 1 && !markers) {
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t j = 0; j < s.x.size(); ++j) svg << (j ? " " : "") << num(px(s.x[j])) << "," << num(py(s.y[j]));
      svg << "\"/>\n";
    } else {
      for (std::size_t j = 0; j < s.x.size(); ++j) {
        svg << "<circle cx=\"" << num(px(s.x[j])) << "\" cy=\"" << num(py(s.y[j])) << "\" r=\"5\" fill=\"" << color
            << "\"/>\n";
      }
    }
    const double ly = kTop + 14 + 18.0 * static_cast<double>(i);
    svg << "<rect x=\"" << num(kWidth - kRight + 15) << "\" y=\"" << num(ly - 9) << "\" width=\"12\" height=\"12\" fill=\""
        << color << "\"/>\n";
    svg << "<text x=\"" << num(kWidth - kRight + 33) << "\" y=\"" << num(ly + 1) << "\">" << escape(s.label)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

Series step_series(const PlotRun& run, const std::string& column, const std::string& label) {
  Series s{label, run.metrics.column("update"), smooth(run.metrics.column(column))};
  return s;
}

}  // namespace

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::kRatioVariance: return "ratio-variance";
    case PlotKind::kClipFraction: return "clip-fraction";
    case PlotKind::kWeightSweep: return "weight-sweep";
    case PlotKind::kRankVsStep: return "rank-vs-step";
  }
  return "?";
}

PlotKind parse_plot_kind(const std::string& text) {
  for (auto k : {PlotKind::kRatioVariance, PlotKind::kClipFraction, PlotKind::kWeightSweep, PlotKind::kRankVsStep})
    if (to_string(k) == text) return k;
  throw InputError("unknown plot kind '" + text + "'");
}

double final_reward(const MetricsTable& metrics) {
  const auto r = metrics.column("mean_reward");
  if (r.empty()) throw InputError("metrics: no records");
  const std::size_t tail = std::max<std::size_t>(1, r.size() / 10);
  return std::accumulate(r.end() - static_cast<std::ptrdiff_t>(tail), r.end(), 0.0) / static_cast<double>(tail);
}

std::string render_plot(std::span<const PlotRun> runs, PlotKind kind) {
  if (runs.empty()) throw InputError("plot: no runs");
  for (const auto& run : runs)
    if (run.metrics.rows.empty()) throw InputError("plot: run '" + run.label + "' has no metrics");

  std::vector<Series> series;
  switch (kind) {
    case PlotKind::kRatioVariance:
      for (const auto& run : runs) series.push_back(step_series(run, "ratio_variance", run.label));
      return render(series, "Importance ratio variance", "update", "ratio variance (moving average)", false);
    case PlotKind::kClipFraction:
      for (const auto& run : runs) series.push_back(step_series(run, "clip_fraction", run.label));
      return render(series, "Clip fraction", "update", "clip fraction (moving average)", false);
    case PlotKind::kRankVsStep:
      for (const auto& run : runs) {
        bool any = false;
        for (const auto& col : run.metrics.columns) {
          if (col.rfind("rank_offset_", 0) != 0) continue;
          any = true;
          series.push_back(step_series(run, col, run.label + " offset " + col.substr(12)));
        }
        if (!any) throw InputError("plot: run '" + run.label + "' has no rank_offset columns");
      }
      return render(series, "Predicted token rank", "update", "mean rank of realized token", false);
    case PlotKind::kWeightSweep:
      for (const auto& run : runs) series.push_back({run.label, {run.x}, {final_reward(run.metrics)}});
      return render(series, "Final reward by MTP weight", "MTP weight mass", "final mean reward", true);
  }
  throw InputError("plot: unknown kind");
}

void write_plot(const std::string& path, std::span<const PlotRun> runs, PlotKind kind) {
  const std::string svg = render_plot(runs, kind);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << svg;
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace blockpg::harness
