// SPDX-License-Identifier: Apache-2.0
// Optimizer, learning-rate schedule and the training loops.
#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "urkle/eval.hpp"

namespace urkle {

enum class Method { Vae, VaeUrkle, AeTrades, SimclrUrkle, Standard, AT, TRADES };

const char* to_string(Method m);
Method parse_method(const std::string& s);
bool is_supervised(Method m);

/// lr0 * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

/// SGD with heavy-ball momentum and decoupled-from-clipping L2 weight decay.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  /// One update of every parameter from its accumulated gradient.
  template <typename T>
  void step(const std::vector<nn::Param<T>*>& params, double lr);

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// Rescales all gradients so their joint l2 norm is at most `max_norm`;
/// returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<nn::Param<T>*>& params, double max_norm);

struct TrainConfig {
  Method method = Method::VaeUrkle;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr0 = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;
  AttackConfig attack{0.1, 0.025, 10, true, -1.0, 1};
  ObjectiveConfig objective;
  /// Ramp beta_robust linearly from 0 over this many epochs (0: full weight from the first step).
  std::size_t beta_warmup_epochs = 0;
  BundleSpec model;
  AugmentationPolicy augmentation;
  /// Held-out inputs used for the per-epoch metrics row (0 disables it).
  std::size_t monitor_size = 500;
  /// Attack used on the held-out subset for supervised methods.
  AttackConfig monitor_attack{0.1, 0.01, 20, true, -1.0, 1};

  /// Model spec with the heads the method needs switched on.
  BundleSpec bundle_spec() const;
  void validate() const;
};

struct EpochReport {
  std::size_t epoch = 0;  ///< 1-based
  double lr = 0.0;        ///< learning rate of the epoch's last step
  LossBreakdown loss;     ///< mean over the epoch's steps
  MetricsRecord metrics;
  double seconds = 0.0;
};

/// Receives every epoch's report with the current bundle (e.g. to checkpoint it).
using EpochSink = std::function<void(const EpochReport&, ModelBundle<float>&)>;
/// Receives every step's loss (1-based global step index).
using StepSink = std::function<void(std::size_t, const LossBreakdown&)>;

/// Runs epochs x floor(N / batch_size) optimizer steps on `data`; `held_out`
/// feeds the per-epoch metrics. Deterministic for a fixed seed.
ModelBundle<float> train(const TrainConfig& config, const Dataset& data, const Dataset* held_out,
                         const EpochSink& sink = {}, const StepSink& step_sink = {});

/// Same, continuing from an existing bundle.
void train_bundle(ModelBundle<float>& bundle, const TrainConfig& config, const Dataset& data,
                  const Dataset* held_out, const EpochSink& sink = {}, const StepSink& step_sink = {});

}  // namespace urkle
