// SPDX-License-Identifier: Apache-2.0
// l-infinity PGD and the adversaries built on it.
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "urkle/models.hpp"

namespace urkle {

struct AttackConfig {
  double epsilon = 0.1;
  double alpha = 0.01;
  std::size_t steps = 40;
  bool random_init = true;
  /// Negative means "same as epsilon".
  double init_radius = -1.0;
  std::size_t eot_samples = 1;
  double input_min = 0.0;
  double input_max = 1.0;

  double radius() const { return init_radius < 0.0 ? epsilon : init_radius; }
  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// Objective over a batch of candidate inputs. Returns the sum of the
/// per-input objective values and writes d(sum)/d(input) into `grad`
/// (already shaped like the input, zero-filled).
template <typename T>
using Objective = std::function<T(const Tensor<T>& x, Tensor<T>& grad)>;

template <typename T>
Tensor<T> project_linf(const Tensor<T>& candidate, const Tensor<T>& reference, const AttackConfig& cfg);

/// cfg.steps sign-gradient ascent steps, each followed by projection onto
/// the ball around `x` and the input range. Returns the last iterate.
template <typename T>
Tensor<T> pgd_maximize(const Objective<T>& objective, const Tensor<T>& x, const AttackConfig& cfg, Rng& rng);

/// Ascent on sum_i KL[p(z|x_i) || p(z|x'_i)], clean side held fixed.
template <typename T>
Tensor<T> unsup_adversary(Encoder<T>& encoder, const Tensor<T>& x, const AttackConfig& cfg, Rng& rng);

/// Ascent on -log of the Monte-Carlo predictive probability of the true
/// label, with cfg.eot_samples fresh latent draws per step.
template <typename T>
Tensor<T> sup_adversary(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                        const std::vector<int>& labels, const AttackConfig& cfg, Rng& rng);

/// Ascent on KL[P(x) || P(x')] between categorical predictives.
template <typename T>
Tensor<T> trades_adversary(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                           const AttackConfig& cfg, Rng& rng);

/// Ascent on ||r(x') - r(x)||^2, r the mean-encoder reconstruction.
template <typename T>
Tensor<T> reconstruction_adversary(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                   const Tensor<T>& x, const AttackConfig& cfg, Rng& rng);

// Objective builders, exposed so tests can evaluate what each attack ascends.

template <typename T>
Objective<T> unsup_objective(Encoder<T>& encoder, const Tensor<T>& x);
template <typename T>
Objective<T> sup_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, const std::vector<int>& labels,
                           std::size_t eot_samples, Rng& rng);
template <typename T>
Objective<T> trades_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                              std::size_t eot_samples, Rng& rng);
template <typename T>
Objective<T> reconstruction_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                      const Tensor<T>& x);

/// Softmax of each row of a [B, C] logit tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

/// Latent codes the classifier sees: a reparameterized draw, or the mean
/// itself for a deterministic encoder (eps is then left empty).
template <typename T>
Tensor<T> draw_latent(const Encoder<T>& encoder, const GaussianBatch<T>& g, Rng& rng, Tensor<T>* eps);

}  // namespace urkle
