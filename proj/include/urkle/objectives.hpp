// SPDX-License-Identifier: Apache-2.0
// Training losses. Every objective returns its LossBreakdown and, when asked,
// accumulates d total / d parameters into the networks' gradient buffers.
#pragma once

#include <cstddef>
#include <vector>

#include "urkle/adversary.hpp"

namespace urkle {

struct ObjectiveConfig {
  double beta_vae = 0.0;
  double beta_robust = 6.0;
  double tau = 0.5;
  double m_bound = 3.0;
  std::size_t num_classes = 10;

  void validate() const;
};

struct LossBreakdown {
  double task_term = 0.0;
  double prior_term = 0.0;
  double robust_term = 0.0;
  double total = 0.0;
};

/// How an objective touches the networks: batch-norm mode and whether
/// parameter gradients are accumulated.
struct Pass {
  nn::Mode mode = nn::Mode::Train;
  bool param_grads = true;
};

/// -log(p_y * K + e^-M) with K = 1 - C e^-M.
double bounded_nll(const std::vector<double>& probs, int y, double m_bound);

/// NT-Xent over b tuples of m vectors laid out tuple-major in `reps`
/// ([b * m, d]). Negatives for an anchor are the vectors of the other tuples.
/// When `grad` is given it receives d loss / d reps.
template <typename T>
T nt_xent(const Tensor<T>& reps, std::size_t m, double tau, Tensor<T>* grad = nullptr);

/// Mean KL between the encoder's distributions at clean inputs and at their adversaries.
template <typename T>
T urkle_loss(Encoder<T>& encoder, const Tensor<T>& clean, const Tensor<T>& adversaries);

/// VAE terms, with the Urkle term added when `adversaries` is non-null.
template <typename T>
LossBreakdown vae_loss(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood, const Tensor<T>& x,
                       const Tensor<T>* adversaries, const ObjectiveConfig& cfg, Rng& rng, Pass pass);

/// Negative ELBO (reconstruction NLL + beta_vae * prior KL); robust_term is 0.
template <typename T>
LossBreakdown vae_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                            const Tensor<T>& x, const ObjectiveConfig& cfg, Rng& rng, Pass pass = {});

/// vae_objective plus beta_robust times the Urkle term at unsupervised
/// adversaries. With beta_robust = 0 no adversary is searched.
template <typename T>
LossBreakdown vae_urkle_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                  const Tensor<T>& x, const AttackConfig& attack, const ObjectiveConfig& cfg, Rng& rng,
                                  Pass pass = {});

template <typename T>
LossBreakdown ae_trades_loss(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                             const Tensor<T>& x, const Tensor<T>* adversaries, double beta, Pass pass);

/// Squared-error autoencoder on the mean code, plus beta times the squared
/// distance between reconstructions of x and of its reconstruction adversary.
template <typename T>
LossBreakdown ae_trades_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                  const Tensor<T>& x, const AttackConfig& attack, double beta, Rng& rng,
                                  Pass pass = {});

/// NT-Xent over tuples (z_i1, z_i2, z_i1_adv, z_i2_adv) plus beta_robust
/// times the Urkle term over all 2b (view, adversary) pairs. A null
/// `adversaries` pair means no adversary was searched; the clean codes are
/// then duplicated into the adversarial slots.
template <typename T>
LossBreakdown simclr_urkle_loss(Encoder<T>& encoder, nn::Sequential<T>* projector, const Tensor<T>& view1,
                                const Tensor<T>& view2, const Tensor<T>* adv1, const Tensor<T>* adv2,
                                const ObjectiveConfig& cfg, Rng& rng, Pass pass);

template <typename T>
LossBreakdown simclr_urkle_objective(Encoder<T>& encoder, nn::Sequential<T>* projector, const Tensor<T>& view1,
                                     const Tensor<T>& view2, const AttackConfig& attack, const ObjectiveConfig& cfg,
                                     Rng& rng, Pass pass = {});

enum class Supervision { Standard, AT, TRADES };

/// Cross-entropy at x (Standard), at the adversary (AT), or at x plus
/// beta_robust times KL[P(x) || P(adversary)] (TRADES).
template <typename T>
LossBreakdown supervised_loss(Encoder<T>& encoder, nn::Sequential<T>& classifier, Supervision kind,
                              const Tensor<T>& x, const std::vector<int>& labels, const Tensor<T>* adversaries,
                              const ObjectiveConfig& cfg, Rng& rng, Pass pass);

template <typename T>
LossBreakdown supervised_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, Supervision kind,
                                   const Tensor<T>& x, const std::vector<int>& labels, const AttackConfig& attack,
                                   const ObjectiveConfig& cfg, Rng& rng, Pass pass = {});

/// Cross-entropy of the classifier on one latent draw per input; used by
/// probe training. Gradients reach only the classifier.
template <typename T>
double probe_loss(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                  const std::vector<int>& labels, Rng& rng, Pass pass);

/// probe_loss on precomputed encoder outputs.
template <typename T>
double probe_loss_codes(nn::Sequential<T>& classifier, const GaussianBatch<T>& g, bool deterministic,
                        const std::vector<int>& labels, Rng& rng, Pass pass);

}  // namespace urkle
