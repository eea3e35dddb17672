// SPDX-License-Identifier: Apache-2.0
// Downstream probe, Monte-Carlo predictive, and the adversarial-loss bound audit.
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "urkle/data.hpp"
#include "urkle/objectives.hpp"

namespace urkle {

inline constexpr double NaN = std::numeric_limits<double>::quiet_NaN();

/// One evaluation row. Fields an evaluation did not compute stay NaN.
struct MetricsRecord {
  double clean_accuracy = NaN;
  double adversarial_accuracy = NaN;
  double clean_loss = NaN;
  double adv_loss = NaN;
  double mean_max_kl = NaN;
  double bound_rhs = NaN;
  double slack = NaN;
  double epsilon = NaN;
  std::size_t steps = 0;
  std::size_t mc_samples = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Formats a value for CSV output: shortest round-tripping decimal, "nan" for NaN.
std::string csv_number(double v);

struct ProbeConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t width = 256;  ///< 0: linear probe
  std::uint64_t seed = 0;
};

/// Trains a fresh classifier head on single latent draws from a frozen encoder.
nn::Sequential<float> train_probe(Encoder<float>& encoder, const Dataset& data, const ProbeConfig& cfg);

/// (1/S) sum_s softmax(classifier(z_s)), z_s ~ p(z|x); [B, C]. A deterministic
/// encoder feeds the mean, so every draw is identical.
template <typename T>
Tensor<T> mc_predict(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x, std::size_t mc_samples,
                     Rng& rng);

/// Index of the largest entry of each row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& probs);

struct EvalConfig {
  AttackConfig attack{0.1, 0.01, 40, true, -1.0, 5};
  /// Unsupervised-adversary search for the KL side of the audit.
  AttackConfig audit_attack{0.1, 0.01, 50, true, -1.0, 1};
  std::size_t mc_samples = 20;
  std::size_t batch_size = 100;
  /// Skip the KL search (mean_max_kl, bound_rhs and slack stay NaN).
  bool with_kl = true;
  std::uint64_t seed = 0;
};

/// Clean and adversarial accuracy and bounded loss, mean max-KL, and
/// bound_rhs = clean_loss + (M / sqrt 2) sqrt(mean_max_kl).
MetricsRecord evaluate(Encoder<float>& encoder, nn::Sequential<float>& classifier, const Dataset& data,
                       const EvalConfig& cfg, const ObjectiveConfig& objective);

/// Mean of unsupervised-adversary KL over a dataset.
double mean_adversarial_kl(Encoder<float>& encoder, const Dataset& data, const AttackConfig& attack,
                           std::size_t batch_size, std::uint64_t seed);

/// Sum in a fixed pairwise-tree order, independent of thread scheduling.
double pairwise_sum(const double* v, std::size_t n);
inline double pairwise_mean(const std::vector<double>& v) {
  return v.empty() ? NaN : pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

}  // namespace urkle
