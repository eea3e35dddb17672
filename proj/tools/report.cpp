// SPDX-License-Identifier: Apache-2.0
#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "config.hpp"

namespace fs = std::filesystem;

namespace urkle::cli {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  double at(std::size_t row, const std::string& column) const {
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end() || row >= rows.size()) return kNaN;
    const auto col = static_cast<std::size_t>(it - header.begin());
    if (col >= rows[row].size()) return kNaN;
    try {
      return std::stod(rows[row][col]);
    } catch (const std::exception&) {
      return kNaN;
    }
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

std::optional<Table> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  Table t;
  std::string line;
  if (!std::getline(in, line)) return t;
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split(line));
  }
  return t;
}

std::string fmt(double v, const char* spec = "%.4f") {
  if (std::isnan(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::optional<RunSummary> summarize(const fs::path& dir, const std::string& name) {
  const auto metrics = read_csv(dir / "metrics.csv");
  if (!metrics) return std::nullopt;
  RunSummary r{name, "?", kNaN, 0, kNaN, kNaN, kNaN, kNaN, kNaN, {}, {}};

  if (std::ifstream f(dir / "run.txt"); f) {
    std::ostringstream ss;
    ss << f.rdbuf();
    const RunConfig rc = parse_run_config(ss.str());
    r.method = to_string(rc.train.method);
    r.beta_robust = rc.train.objective.beta_robust;
  }
  r.epochs = metrics->rows.size();
  for (std::size_t i = 0; i < metrics->rows.size(); ++i) r.loss_curve.push_back(metrics->at(i, "total"));
  if (!metrics->rows.empty()) {
    r.final_loss = r.loss_curve.back();
    r.held_out_kl = metrics->at(metrics->rows.size() - 1, "mean_max_kl");
  }

  if (const auto attack = read_csv(dir / "attack.csv")) {
    for (std::size_t i = 0; i < attack->rows.size(); ++i) {
      r.accuracy_vs_epsilon.emplace_back(attack->at(i, "epsilon"), attack->at(i, "adversarial_accuracy"));
    }
    std::sort(r.accuracy_vs_epsilon.begin(), r.accuracy_vs_epsilon.end());
    if (!attack->rows.empty()) {
      r.clean_accuracy = attack->at(0, "clean_accuracy");
      r.adversarial_accuracy = attack->at(0, "adversarial_accuracy");
    }
  }
  if (const auto audit = read_csv(dir / "audit.csv")) {
    for (std::size_t i = 0; i < audit->rows.size(); ++i) {
      const double s = audit->at(i, "slack");
      if (std::isnan(r.min_slack) || s < r.min_slack) r.min_slack = s;
    }
  }
  return r;
}

// ------------------------------------------------------------------ SVG

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string line_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << fmt(px(xv), "%.1f") << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">"
       << fmt(xv, "%.3g") << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(yv) + 4, "%.1f") << "\" text-anchor=\"end\">"
       << fmt(yv, "%.3g") << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* colour = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (auto [x, y] : series[k].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      pts += fmt(px(x), "%.1f") + "," + fmt(py(y), "%.1f") + " ";
    }
    if (!pts.empty()) {
      pts.pop_back();
      os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    }
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << series[k].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f.flush()) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace

std::vector<RunSummary> collect_runs(const std::string& metrics_dir) {
  const fs::path root(metrics_dir);
  if (!fs::is_directory(root)) throw IoError("'" + metrics_dir + "' is not a directory");
  std::vector<RunSummary> runs;
  if (auto r = summarize(root, root.filename().string())) runs.push_back(std::move(*r));
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) {
    if (auto r = summarize(d, d.filename().string())) runs.push_back(std::move(*r));
  }
  if (runs.empty()) throw IoError("no metrics found under '" + metrics_dir + "'");
  // NaN betas (no run.txt) sort last.
  std::stable_sort(runs.begin(), runs.end(), [](const RunSummary& a, const RunSummary& b) {
    const bool an = std::isnan(a.beta_robust), bn = std::isnan(b.beta_robust);
    if (an != bn) return bn;
    if (!an && a.beta_robust != b.beta_robust) return a.beta_robust < b.beta_robust;
    return a.name < b.name;
  });
  return runs;
}

std::size_t write_report(const std::string& metrics_dir, const std::string& out_dir) {
  const auto runs = collect_runs(metrics_dir);
  fs::create_directories(out_dir);

  std::ostringstream table;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-13s %11s %6s %12s %12s %9s %9s %10s\n", "run", "method", "beta_robust",
                "epochs", "final_loss", "held_out_kl", "clean_acc", "adv_acc", "min_slack");
  table << line;
  for (const auto& r : runs) {
    std::snprintf(line, sizeof line, "%-24s %-13s %11s %6zu %12s %12s %9s %9s %10s\n", r.name.c_str(),
                  r.method.c_str(), fmt(r.beta_robust, "%g").c_str(), r.epochs, fmt(r.final_loss).c_str(),
                  fmt(r.held_out_kl, "%.5f").c_str(), fmt(r.clean_accuracy).c_str(),
                  fmt(r.adversarial_accuracy).c_str(), fmt(r.min_slack).c_str());
    table << line;
  }
  write_file(fs::path(out_dir) / "summary.txt", table.str());

  std::vector<Series> loss, acc;
  for (const auto& r : runs) {
    const std::string label = r.name;
    Series s{label, {}};
    for (std::size_t i = 0; i < r.loss_curve.size(); ++i) s.points.emplace_back(double(i + 1), r.loss_curve[i]);
    loss.push_back(std::move(s));
    acc.push_back({label, r.accuracy_vs_epsilon});
  }
  write_file(fs::path(out_dir) / "loss_curves.svg", line_plot("Training loss", "epoch", "mean total loss", loss));
  write_file(fs::path(out_dir) / "accuracy_vs_epsilon.svg",
             line_plot("Adversarial accuracy", "epsilon", "accuracy", acc));
  return runs.size();
}

}  // namespace urkle::cli
