// SPDX-License-Identifier: Apache-2.0
// Flat key=value run configuration shared by every CLI command.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "urkle/training.hpp"

namespace urkle::cli {

struct RunConfig {
  TrainConfig train;

  /// "mnist" reads the four IDX paths; "blobs" generates synthetic clusters.
  std::string dataset = "mnist";
  std::string train_images, train_labels, test_images, test_labels;
  /// Use only the first N inputs of a split (0: all).
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::size_t blobs_train = 1000;
  std::size_t blobs_test = 500;
  std::size_t blobs_classes = 2;
  std::size_t blobs_dim = 2;
  double blobs_separation = 4.0;
  std::uint64_t data_seed = 0;

  ProbeConfig probe;
  /// Labelled training inputs given to the probe (0: the whole split).
  std::size_t labels_per_run = 0;

  EvalConfig eval;
  /// One attack/audit row per entry; defaults to the training epsilon.
  std::vector<double> eval_epsilons;

  std::string out = "run";
  std::uint64_t seed = 0;

  void set_seed(std::uint64_t s);
};

/// Parses the text of a config file. Unknown keys, malformed values and
/// repeated keys (other than eval_epsilon) raise ConfigError with the line.
RunConfig parse_run_config(const std::string& text);
/// Reads and parses a file; IoError if it cannot be read.
RunConfig load_run_config(const std::string& path);

/// Checks every file the config refers to exists and is readable.
void check_paths(const RunConfig& cfg);

struct Splits {
  Dataset train;
  Dataset test;
};

/// Loads or generates both splits and points the attack ranges at their value range.
Splits load_splits(RunConfig& cfg);

}  // namespace urkle::cli
