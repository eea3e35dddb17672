// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace urkle::cli {

struct RunSummary {
  std::string name;
  std::string method;
  double beta_robust;
  std::size_t epochs;
  double final_loss;
  double held_out_kl;
  double clean_accuracy;
  double adversarial_accuracy;
  double min_slack;
  std::vector<double> loss_curve;
  std::vector<std::pair<double, double>> accuracy_vs_epsilon;
};

/// Every run under `metrics_dir` (the directory itself or its immediate
/// subdirectories holding a metrics.csv), sorted by beta_robust then name.
/// Throws IoError("no metrics found") when there are none.
std::vector<RunSummary> collect_runs(const std::string& metrics_dir);

/// Writes summary.txt, loss_curves.svg and accuracy_vs_epsilon.svg into
/// `out_dir`; returns the number of runs.
std::size_t write_report(const std::string& metrics_dir, const std::string& out_dir);

}  // namespace urkle::cli
