// SPDX-License-Identifier: Apache-2.0
// Diagonal-Gaussian representation distributions p(z|x).
#pragma once

#include <cstddef>
#include <vector>

#include "urkle/rng.hpp"
#include "urkle/tensor.hpp"

namespace urkle {

inline constexpr double LOGVAR_MIN = -10.0;
inline constexpr double LOGVAR_MAX = 10.0;

/// A single distribution: mean and log-variance of length d_z.
template <typename T>
struct GaussianRepr {
  std::vector<T> mean;
  std::vector<T> log_var;

  std::size_t dim() const { return mean.size(); }
  /// Throws ContractViolation on length mismatch and InvalidInput on
  /// non-finite or out-of-range fields.
  void validate() const;
};

/// A batch of distributions, mean and log_var both [B, d_z].
template <typename T>
struct GaussianBatch {
  Tensor<T> mean;
  Tensor<T> log_var;

  std::size_t batch() const { return mean.batch(); }
  std::size_t dim() const { return mean.rank() == 2 ? mean.dim(1) : 0; }
  GaussianRepr<T> at(std::size_t i) const;
};

/// Gradients of a KL value with respect to both arguments.
template <typename T>
struct KlGrad {
  std::vector<T> d_mean_p, d_log_var_p, d_mean_q, d_log_var_q;
};

/// KL[p || q] for diagonal Gaussians.
template <typename T>
T kl_divergence(const GaussianRepr<T>& p, const GaussianRepr<T>& q);

/// Same value as kl_divergence, also filling `grad`.
template <typename T>
T kl_divergence(const GaussianRepr<T>& p, const GaussianRepr<T>& q, KlGrad<T>& grad);

/// Per-row KL[p_i || q_i] for two batches of equal shape.
template <typename T>
std::vector<T> kl_rows(const GaussianBatch<T>& p, const GaussianBatch<T>& q);

/// Accumulates weight[i] * d KL[p_i || q_i] into the four gradient tensors.
/// Either pair of outputs may be null when that side is held constant.
template <typename T>
void kl_rows_backward(const GaussianBatch<T>& p, const GaussianBatch<T>& q, const std::vector<T>& weight,
                      GaussianBatch<T>* grad_p, GaussianBatch<T>* grad_q);

/// Per-row KL[p_i || N(0, I)].
template <typename T>
std::vector<T> prior_kl_rows(const GaussianBatch<T>& p);

template <typename T>
void prior_kl_rows_backward(const GaussianBatch<T>& p, const std::vector<T>& weight, GaussianBatch<T>& grad_p);

/// `count` reparameterized draws mean + exp(log_var / 2) * eps.
template <typename T>
std::vector<std::vector<T>> sample(const GaussianRepr<T>& p, std::size_t count, Rng& rng);

/// mean + exp(log_var / 2) * eps for a given noise vector.
template <typename T>
std::vector<T> reparameterize(const GaussianRepr<T>& p, const std::vector<T>& eps);

/// One draw per row; the standard-normal noise is returned through `eps`
/// so the caller can backpropagate with it held fixed.
template <typename T>
Tensor<T> sample_rows(const GaussianBatch<T>& p, Rng& rng, Tensor<T>* eps);

/// Reparameterization adjoint: accumulates d mean and d log_var given d z.
template <typename T>
void sample_rows_backward(const GaussianBatch<T>& p, const Tensor<T>& eps, const Tensor<T>& grad_z,
                          GaussianBatch<T>& grad_p);

/// sqrt(kl / 2), the Pinsker bound on total variation.
double pinsker_tv_bound(double kl);

}  // namespace urkle
