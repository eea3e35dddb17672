// SPDX-License-Identifier: Apache-2.0
#include "urkle/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace urkle {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be non-negative");
  if (steps > 0 && !(alpha > 0.0)) throw ConfigError("alpha must be positive when steps > 0");
  if (!(radius() >= 0.0 && radius() <= epsilon)) throw ConfigError("init_radius must lie in [0, epsilon]");
  if (!(input_min < input_max)) throw ConfigError("input_min must be below input_max");
  if (eot_samples == 0) throw ConfigError("eot_samples must be at least 1");
}

template <typename T>
Tensor<T> project_linf(const Tensor<T>& candidate, const Tensor<T>& reference, const AttackConfig& cfg) {
  require_same_shape(candidate, reference, "project_linf");
  Tensor<T> out = candidate;
  const T eps = static_cast<T>(cfg.epsilon);
  const T lo_range = static_cast<T>(cfg.input_min), hi_range = static_cast<T>(cfg.input_max);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T lo = reference[i] - eps, hi = reference[i] + eps;
    out[i] = std::clamp(std::clamp(out[i], lo, hi), lo_range, hi_range);
  }
  return out;
}

template <typename T>
Tensor<T> pgd_maximize(const Objective<T>& objective, const Tensor<T>& x, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor<T> cur = x;
  if (cfg.random_init && cfg.radius() > 0.0) {
    const double r = cfg.radius();
    for (auto& v : cur.values()) v += static_cast<T>(rng.uniform(-r, r));
  }
  cur = project_linf(cur, x, cfg);
  const T alpha = static_cast<T>(cfg.alpha);
  Tensor<T> grad(x.shape());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    grad.fill(T{0});
    const T value = objective(cur, grad);
    if (!std::isfinite(value)) throw NumericError("PGD objective is not finite", step);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const T g = grad[i];
      if (!std::isfinite(g)) throw NumericError("PGD gradient is not finite", step);
      cur[i] += g > T{0} ? alpha : (g < T{0} ? -alpha : T{0});
    }
    cur = project_linf(cur, x, cfg);
  }
  return cur;
}

// ------------------------------------------------------------- helpers

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out = logits;
  const std::size_t n = logits.batch(), c = logits.sample_size();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) sum += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  Tensor<T> out = logits;
  const std::size_t n = logits.batch(), c = logits.sample_size();
  for (std::size_t i = 0; i < n; ++i) {
    T* row = out.data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  return out;
}

template <typename T>
T log_sum_exp(const std::vector<T>& v) {
  const T mx = *std::max_element(v.begin(), v.end());
  if (mx == -std::numeric_limits<T>::infinity()) return mx;
  T sum{0};
  for (T a : v) sum += std::exp(a - mx);
  return mx + std::log(sum);
}

template <typename T>
void draw_latent_backward(const Encoder<T>& encoder, const GaussianBatch<T>& g, const Tensor<T>& eps,
                          const Tensor<T>& grad_z, GaussianBatch<T>& grad_g) {
  if (encoder.deterministic()) {
    for (std::size_t k = 0; k < grad_z.size(); ++k) grad_g.mean[k] += grad_z[k];
  } else {
    sample_rows_backward(g, eps, grad_z, grad_g);
  }
}

template <typename T>
GaussianBatch<T> zeros_like(const GaussianBatch<T>& g) {
  return {Tensor<T>(g.mean.shape()), Tensor<T>(g.log_var.shape())};
}

/// One Monte-Carlo pass through encoder and classifier that remembers
/// everything needed to push logit gradients back to the input.
template <typename T>
struct PredictivePass {
  typename Encoder<T>::Trace enc_trace;
  GaussianBatch<T> g;
  std::vector<Tensor<T>> eps;
  std::vector<nn::SequentialCache<T>> caches;
  std::vector<Tensor<T>> log_probs;  // per draw, [B, C]

  void run(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x, std::size_t draws, Rng& rng,
           bool keep) {
    g = encoder.forward(x, nn::Mode::Eval, keep ? &enc_trace : nullptr);
    eps.assign(draws, {});
    caches.assign(draws, {});
    log_probs.assign(draws, {});
    for (std::size_t s = 0; s < draws; ++s) {
      Tensor<T> z = draw_latent(encoder, g, rng, &eps[s]);
      log_probs[s] = log_softmax_rows(classifier.forward(z, nn::Mode::Eval, keep ? &caches[s] : nullptr));
    }
  }

  /// grad_logits[s] is d objective / d logits of draw s.
  Tensor<T> backward(Encoder<T>& encoder, nn::Sequential<T>& classifier, const std::vector<Tensor<T>>& grad_logits) {
    GaussianBatch<T> grad_g = zeros_like(g);
    for (std::size_t s = 0; s < grad_logits.size(); ++s) {
      const Tensor<T> dz = classifier.backward(grad_logits[s], caches[s], false);
      draw_latent_backward(encoder, g, eps[s], dz, grad_g);
    }
    return encoder.backward(grad_g, enc_trace, false);
  }
};

}  // namespace

template <typename T>
Tensor<T> draw_latent(const Encoder<T>& encoder, const GaussianBatch<T>& g, Rng& rng, Tensor<T>* eps) {
  if (encoder.deterministic()) {
    if (eps) *eps = Tensor<T>();
    return g.mean;
  }
  return sample_rows(g, rng, eps);
}

// ---------------------------------------------------------- objectives

template <typename T>
Objective<T> unsup_objective(Encoder<T>& encoder, const Tensor<T>& x) {
  GaussianBatch<T> clean = encoder.forward(x, nn::Mode::Eval, nullptr);
  return [&encoder, clean = std::move(clean)](const Tensor<T>& cand, Tensor<T>& grad) {
    typename Encoder<T>::Trace trace;
    const GaussianBatch<T> q = encoder.forward(cand, nn::Mode::Eval, &trace);
    const std::vector<T> kl = kl_rows(clean, q);
    GaussianBatch<T> gq = zeros_like(q);
    kl_rows_backward<T>(clean, q, std::vector<T>(kl.size(), T{1}), nullptr, &gq);
    grad = encoder.backward(gq, trace, false).reshaped(cand.shape());
    T total{0};
    for (T v : kl) total += v;
    return total;
  };
}

template <typename T>
Objective<T> sup_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, const std::vector<int>& labels,
                           std::size_t eot_samples, Rng& rng) {
  return [&encoder, &classifier, labels, eot_samples, &rng](const Tensor<T>& cand, Tensor<T>& grad) {
    PredictivePass<T> pass;
    pass.run(encoder, classifier, cand, eot_samples, rng, true);
    const std::size_t n = pass.g.batch(), c = pass.log_probs[0].dim(1), S = eot_samples;
    if (labels.size() != n) throw ContractViolation("sup adversary: label count does not match batch");
    std::vector<Tensor<T>> grad_logits(S, Tensor<T>({n, c}));
    T total{0};
    std::vector<T> lp(S);
    for (std::size_t i = 0; i < n; ++i) {
      const auto y = static_cast<std::size_t>(labels[i]);
      for (std::size_t s = 0; s < S; ++s) lp[s] = pass.log_probs[s][i * c + y];
      const T lse = log_sum_exp(lp);
      total += std::log(static_cast<T>(S)) - lse;
      for (std::size_t s = 0; s < S; ++s) {
        const T w = std::exp(lp[s] - lse);  // posterior weight of draw s
        for (std::size_t j = 0; j < c; ++j) {
          const T q = std::exp(pass.log_probs[s][i * c + j]);
          grad_logits[s][i * c + j] = w * (q - (j == y ? T{1} : T{0}));
        }
      }
    }
    grad = pass.backward(encoder, classifier, grad_logits).reshaped(cand.shape());
    return total;
  };
}

template <typename T>
Objective<T> trades_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                              std::size_t eot_samples, Rng& rng) {
  // Clean predictive, held fixed for the whole attack.
  PredictivePass<T> clean;
  clean.run(encoder, classifier, x, eot_samples, rng, false);
  const std::size_t n = clean.g.batch(), c = clean.log_probs[0].dim(1);
  Tensor<T> target({n, c});
  std::vector<T> tmp(eot_samples);
  for (std::size_t k = 0; k < n * c; ++k) {
    for (std::size_t s = 0; s < eot_samples; ++s) tmp[s] = clean.log_probs[s][k];
    target[k] = std::exp(log_sum_exp(tmp)) / static_cast<T>(eot_samples);
  }
  return [&encoder, &classifier, target = std::move(target), eot_samples, &rng](const Tensor<T>& cand,
                                                                              Tensor<T>& grad) {
    PredictivePass<T> pass;
    pass.run(encoder, classifier, cand, eot_samples, rng, true);
    const std::size_t n = target.batch(), c = target.dim(1), S = eot_samples;
    std::vector<Tensor<T>> grad_logits(S, Tensor<T>({n, c}));
    T total{0};
    std::vector<T> lp(S);
    std::vector<T> r(S * c);  // r[s, j]: share of draw s in the mixture probability of class j
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t s = 0; s < S; ++s) lp[s] = pass.log_probs[s][i * c + j];
        const T lse = log_sum_exp(lp);
        const T log_q = lse - std::log(static_cast<T>(S));
        const T p = target[i * c + j];
        if (p > T{0}) total += p * (std::log(p) - log_q);
        for (std::size_t s = 0; s < S; ++s) r[s * c + j] = std::exp(lp[s] - lse);
      }
      for (std::size_t s = 0; s < S; ++s) {
        T mix{0};
        for (std::size_t j = 0; j < c; ++j) mix += target[i * c + j] * r[s * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          const T q = std::exp(pass.log_probs[s][i * c + j]);
          grad_logits[s][i * c + j] = -target[i * c + j] * r[s * c + j] + q * mix;
        }
      }
    }
    grad = pass.backward(encoder, classifier, grad_logits).reshaped(cand.shape());
    return total;
  };
}

template <typename T>
Objective<T> reconstruction_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                      const Tensor<T>& x) {
  const GaussianBatch<T> g = encoder.forward(x, nn::Mode::Eval, nullptr);
  Tensor<T> ref = reconstruction(decoder.forward(g.mean, nn::Mode::Eval, nullptr), likelihood);
  return [&encoder, &decoder, likelihood, ref = std::move(ref)](const Tensor<T>& cand, Tensor<T>& grad) {
    typename Encoder<T>::Trace trace;
    nn::SequentialCache<T> dcache;
    const GaussianBatch<T> g = encoder.forward(cand, nn::Mode::Eval, &trace);
    const Tensor<T> out = decoder.forward(g.mean, nn::Mode::Eval, &dcache);
    const Tensor<T> r = reconstruction(out, likelihood);
    require_same_shape(r, ref, "reconstruction adversary");
    Tensor<T> d_out(out.shape());
    T total{0};
    for (std::size_t k = 0; k < r.size(); ++k) {
      const T diff = r[k] - ref[k];
      total += diff * diff;
      T d = T{2} * diff;
      if (likelihood == Likelihood::Bernoulli) d *= r[k] * (T{1} - r[k]);
      d_out[k] = d;
    }
    const Tensor<T> dz = decoder.backward(d_out, dcache, false);
    GaussianBatch<T> gg = zeros_like(g);
    for (std::size_t k = 0; k < dz.size(); ++k) gg.mean[k] = dz[k];
    grad = encoder.backward(gg, trace, false).reshaped(cand.shape());
    return total;
  };
}

// ---------------------------------------------------------- adversaries

namespace {

void require_random_init(const AttackConfig& cfg, const char* who) {
  if (!cfg.random_init) {
    throw ConfigError(std::string(who) + " needs random_init: the objective's gradient vanishes at the clean input");
  }
}

}  // namespace

template <typename T>
Tensor<T> unsup_adversary(Encoder<T>& encoder, const Tensor<T>& x, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  require_random_init(cfg, "unsupervised adversary");
  if (cfg.epsilon == 0.0 || cfg.steps == 0) return project_linf(x, x, cfg);
  return pgd_maximize(unsup_objective(encoder, x), x, cfg, rng);
}

template <typename T>
Tensor<T> sup_adversary(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                        const std::vector<int>& labels, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t c = classifier.output_shape({encoder.spec().d_z})[0];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  if (cfg.epsilon == 0.0 || cfg.steps == 0) return project_linf(x, x, cfg);
  return pgd_maximize(sup_objective(encoder, classifier, labels, cfg.eot_samples, rng), x, cfg, rng);
}

template <typename T>
Tensor<T> trades_adversary(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                           const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  require_random_init(cfg, "TRADES adversary");
  if (cfg.epsilon == 0.0 || cfg.steps == 0) return project_linf(x, x, cfg);
  return pgd_maximize(trades_objective(encoder, classifier, x, cfg.eot_samples, rng), x, cfg, rng);
}

template <typename T>
Tensor<T> reconstruction_adversary(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                   const Tensor<T>& x, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  require_random_init(cfg, "reconstruction adversary");
  if (cfg.epsilon == 0.0 || cfg.steps == 0) return project_linf(x, x, cfg);
  return pgd_maximize(reconstruction_objective(encoder, decoder, likelihood, x), x, cfg, rng);
}

#define URKLE_INSTANTIATE(T)                                                                                  \
  template Tensor<T> project_linf(const Tensor<T>&, const Tensor<T>&, const AttackConfig&);                   \
  template Tensor<T> pgd_maximize(const Objective<T>&, const Tensor<T>&, const AttackConfig&, Rng&);          \
  template Tensor<T> unsup_adversary(Encoder<T>&, const Tensor<T>&, const AttackConfig&, Rng&);               \
  template Tensor<T> sup_adversary(Encoder<T>&, nn::Sequential<T>&, const Tensor<T>&, const std::vector<int>&, \
                                   const AttackConfig&, Rng&);                                                \
  template Tensor<T> trades_adversary(Encoder<T>&, nn::Sequential<T>&, const Tensor<T>&, const AttackConfig&, \
                                      Rng&);                                                                  \
  template Tensor<T> reconstruction_adversary(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&,  \
                                              const AttackConfig&, Rng&);                                     \
  template Objective<T> unsup_objective(Encoder<T>&, const Tensor<T>&);                                       \
  template Objective<T> sup_objective(Encoder<T>&, nn::Sequential<T>&, const std::vector<int>&, std::size_t,  \
                                      Rng&);                                                                  \
  template Objective<T> trades_objective(Encoder<T>&, nn::Sequential<T>&, const Tensor<T>&, std::size_t,      \
                                         Rng&);                                                               \
  template Objective<T> reconstruction_objective(Encoder<T>&, nn::Sequential<T>&, Likelihood,                 \
                                                 const Tensor<T>&);                                           \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                          \
  template Tensor<T> draw_latent(const Encoder<T>&, const GaussianBatch<T>&, Rng&, Tensor<T>*);

URKLE_INSTANTIATE(float)
URKLE_INSTANTIATE(double)
#undef URKLE_INSTANTIATE

}  // namespace urkle
