// SPDX-License-Identifier: Apache-2.0
#include "urkle/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "linalg.hpp"

namespace urkle {

void ObjectiveConfig::validate() const {
  if (!(beta_vae >= 0.0)) throw ConfigError("beta_vae must be non-negative");
  if (!(beta_robust >= 0.0)) throw ConfigError("beta_robust must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(m_bound > 0.0)) throw ConfigError("m_bound must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (!(std::exp(-m_bound) * static_cast<double>(num_classes) < 1.0)) {
    throw ConfigError("exp(-m_bound) * num_classes must be below 1");
  }
}

double bounded_nll(const std::vector<double>& probs, int y, double m_bound) {
  const double floor = std::exp(-m_bound);
  const double c = static_cast<double>(probs.size());
  if (!(m_bound > 0.0) || !(floor * c < 1.0)) throw ConfigError("exp(-m_bound) * num_classes must be below 1");
  if (y < 0 || static_cast<std::size_t>(y) >= probs.size()) {
    throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(probs.size()) + ")");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidInput("probabilities must be non-negative and finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw InvalidInput("probabilities sum to " + std::to_string(sum));
  const double k = 1.0 - floor * c;
  return std::clamp(-std::log(probs[static_cast<std::size_t>(y)] * k + floor), 0.0, m_bound);
}

// --------------------------------------------------------------- helpers

namespace {

template <typename T>
GaussianBatch<T> zeros_like(const GaussianBatch<T>& g) {
  return {Tensor<T>(g.mean.shape()), Tensor<T>(g.log_var.shape())};
}

template <typename T>
void latent_backward(const Encoder<T>& encoder, const GaussianBatch<T>& g, const Tensor<T>& eps,
                     const Tensor<T>& grad_z, GaussianBatch<T>& grad_g) {
  if (encoder.deterministic()) {
    for (std::size_t k = 0; k < grad_z.size(); ++k) grad_g.mean[k] += grad_z[k];
  } else {
    sample_rows_backward(g, eps, grad_z, grad_g);
  }
}

template <typename T>
T mean_of(const std::vector<T>& v) {
  T s{0};
  for (T a : v) s += a;
  return s / static_cast<T>(v.size());
}

template <typename T>
T log_sum_exp_row(const T* row, std::size_t c) {
  const T mx = *std::max_element(row, row + c);
  T s{0};
  for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
  return mx + std::log(s);
}

/// Mean cross-entropy; writes scale * d(sum CE)/d logits into grad when non-null.
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels, T scale, Tensor<T>* grad) {
  const std::size_t n = logits.batch(), c = logits.dim(1);
  if (labels.size() != n) throw ContractViolation("label count does not match batch");
  T total{0};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    const T* row = logits.data() + i * c;
    const T lse = log_sum_exp_row(row, c);
    total += lse - row[y];
    if (grad) {
      for (std::size_t j = 0; j < c; ++j) {
        (*grad)[i * c + j] = scale * (std::exp(row[j] - lse) - (static_cast<int>(j) == y ? T{1} : T{0}));
      }
    }
  }
  return total / static_cast<T>(n);
}

}  // namespace

// ---------------------------------------------------------------- NT-Xent

template <typename T>
T nt_xent(const Tensor<T>& reps, std::size_t m, double tau, Tensor<T>* grad) {
  if (reps.rank() != 2) throw ContractViolation("nt_xent expects [b*m, d] representations");
  if (m < 2) throw InvalidArgument("nt_xent tuples need at least 2 members");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be positive");
  const std::size_t n = reps.batch(), d = reps.dim(1);
  if (n % m != 0) throw ContractViolation("row count is not a multiple of the tuple length");
  const std::size_t b = n / m;
  if (b < 2) throw InvalidArgument("nt_xent needs at least 2 tuples to draw negatives from");

  Tensor<T> u = reps;
  std::vector<T> norm(n);
  for (std::size_t p = 0; p < n; ++p) {
    T s{0};
    for (std::size_t k = 0; k < d; ++k) s += reps[p * d + k] * reps[p * d + k];
    norm[p] = std::sqrt(s);
    if (!(norm[p] > T{0}) || !std::isfinite(norm[p])) throw NumericError("zero-norm or non-finite representation");
    for (std::size_t k = 0; k < d; ++k) u[p * d + k] /= norm[p];
  }
  std::vector<T> sim(n * n);
  detail::gemm<T>(false, true, n, n, d, T{1}, u.data(), u.data(), T{0}, sim.data());

  const T inv_tau = static_cast<T>(1.0 / tau);
  const T w = T{1} / static_cast<T>(b * m * (m - 1));
  std::vector<T> g(grad ? n * n : 0, T{0});
  T loss{0};
  std::vector<T> logits;
  logits.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t tp = p / m;
    logits.clear();
    for (std::size_t q = 0; q < n; ++q) {
      if (q / m != tp) logits.push_back(sim[p * n + q] * inv_tau);
    }
    const T lse = log_sum_exp_row(logits.data(), logits.size());
    for (std::size_t q = tp * m; q < (tp + 1) * m; ++q) {
      if (q != p) loss += lse - sim[p * n + q] * inv_tau;
    }
    if (grad) {
      for (std::size_t q = 0; q < n; ++q) {
        if (q / m == tp) {
          if (q != p) g[p * n + q] = -w * inv_tau;
        } else {
          g[p * n + q] = static_cast<T>(m - 1) * w * inv_tau * std::exp(sim[p * n + q] * inv_tau - lse);
        }
      }
    }
  }
  loss *= w;

  if (grad) {
    // sim = U U^T, so dU = (G + G^T) U; then through the row normalization.
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const T s = g[p * n + q] + g[q * n + p];
        g[p * n + q] = s;
        g[q * n + p] = s;
      }
      g[p * n + p] *= T{2};
    }
    Tensor<T> du({n, d});
    detail::gemm<T>(false, false, n, d, n, T{1}, g.data(), u.data(), T{0}, du.data());
    *grad = Tensor<T>({n, d});
    for (std::size_t p = 0; p < n; ++p) {
      T dot{0};
      for (std::size_t k = 0; k < d; ++k) dot += u[p * d + k] * du[p * d + k];
      for (std::size_t k = 0; k < d; ++k) (*grad)[p * d + k] = (du[p * d + k] - u[p * d + k] * dot) / norm[p];
    }
  }
  return loss;
}

// ------------------------------------------------------------------ Urkle

template <typename T>
T urkle_loss(Encoder<T>& encoder, const Tensor<T>& clean, const Tensor<T>& adversaries) {
  require_same_shape(clean, adversaries, "urkle_loss");
  const GaussianBatch<T> p = encoder.forward(clean, nn::Mode::Eval, nullptr);
  const GaussianBatch<T> q = encoder.forward(adversaries, nn::Mode::Eval, nullptr);
  if (p.batch() == 0) throw ContractViolation("urkle_loss needs at least one input");
  return mean_of(kl_rows(p, q));
}

// -------------------------------------------------------------------- VAE

template <typename T>
LossBreakdown vae_loss(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood, const Tensor<T>& x,
                       const Tensor<T>* adversaries, const ObjectiveConfig& cfg, Rng& rng, Pass pass) {
  typename Encoder<T>::Trace trace, adv_trace;
  nn::SequentialCache<T> dcache;
  const GaussianBatch<T> g = encoder.forward(x, pass.mode, &trace);
  const std::size_t n = g.batch();
  Tensor<T> eps;
  const Tensor<T> z = draw_latent(encoder, g, rng, &eps);
  const Tensor<T> out = decoder.forward(z, pass.mode, &dcache);
  if (out.size() != x.size() || out.sample_size() != x.sample_size()) {
    throw ContractViolation("decoder output " + shape_string(out.shape()) + " does not match input " +
                            shape_string(x.shape()));
  }

  const std::size_t px = out.sample_size();
  Tensor<T> d_out(out.shape());
  const T inv_n = T{1} / static_cast<T>(n);
  T nll{0};
  for (std::size_t k = 0; k < out.size(); ++k) {
    const T l = out[k], t = x[k];
    if (likelihood == Likelihood::Bernoulli) {
      nll += std::max(l, T{0}) - l * t + std::log1p(std::exp(-std::abs(l)));
      d_out[k] = inv_n * (T{1} / (T{1} + std::exp(-l)) - t);
    } else {
      nll += T{0.5} * (l - t) * (l - t);
      d_out[k] = inv_n * (l - t);
    }
  }
  LossBreakdown out_loss;
  out_loss.task_term = static_cast<double>(nll) / static_cast<double>(n);
  if (likelihood == Likelihood::Gaussian) {
    out_loss.task_term += 0.5 * static_cast<double>(px) * std::log(2.0 * std::numbers::pi);
  }
  const std::vector<T> prior = prior_kl_rows(g);
  out_loss.prior_term = static_cast<double>(mean_of(prior));

  GaussianBatch<T> ga;
  if (adversaries) {
    ga = encoder.forward(*adversaries, pass.mode, &adv_trace);
    out_loss.robust_term = static_cast<double>(mean_of(kl_rows(g, ga)));
  }
  out_loss.total = out_loss.task_term + cfg.beta_vae * out_loss.prior_term + cfg.beta_robust * out_loss.robust_term;

  if (pass.param_grads) {
    GaussianBatch<T> grad_g = zeros_like(g);
    const Tensor<T> dz = decoder.backward(d_out, dcache, true);
    latent_backward(encoder, g, eps, dz, grad_g);
    if (cfg.beta_vae != 0.0) {
      prior_kl_rows_backward(g, std::vector<T>(n, static_cast<T>(cfg.beta_vae) * inv_n), grad_g);
    }
    if (adversaries) {
      GaussianBatch<T> grad_a = zeros_like(ga);
      kl_rows_backward(g, ga, std::vector<T>(n, static_cast<T>(cfg.beta_robust) * inv_n), &grad_g, &grad_a);
      encoder.backward(grad_a, adv_trace, true);
    }
    encoder.backward(grad_g, trace, true);
  }
  return out_loss;
}

template <typename T>
LossBreakdown vae_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                            const Tensor<T>& x, const ObjectiveConfig& cfg, Rng& rng, Pass pass) {
  return vae_loss<T>(encoder, decoder, likelihood, x, nullptr, cfg, rng, pass);
}

template <typename T>
LossBreakdown vae_urkle_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                  const Tensor<T>& x, const AttackConfig& attack, const ObjectiveConfig& cfg, Rng& rng,
                                  Pass pass) {
  if (cfg.beta_robust == 0.0) return vae_loss<T>(encoder, decoder, likelihood, x, nullptr, cfg, rng, pass);
  const Tensor<T> adv = unsup_adversary(encoder, x, attack, rng);
  return vae_loss(encoder, decoder, likelihood, x, &adv, cfg, rng, pass);
}

// --------------------------------------------------------------- AE+TRADES

template <typename T>
LossBreakdown ae_trades_loss(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                             const Tensor<T>& x, const Tensor<T>* adversaries, double beta, Pass pass) {
  typename Encoder<T>::Trace trace, adv_trace;
  nn::SequentialCache<T> dcache, adv_dcache;
  const GaussianBatch<T> g = encoder.forward(x, pass.mode, &trace);
  const std::size_t n = g.batch();
  const Tensor<T> out = decoder.forward(g.mean, pass.mode, &dcache);
  const Tensor<T> r = reconstruction(out, likelihood);
  if (r.size() != x.size()) throw ContractViolation("decoder output does not match input");

  Tensor<T> out_a, r_a;
  GaussianBatch<T> ga;
  if (adversaries) {
    ga = encoder.forward(*adversaries, pass.mode, &adv_trace);
    out_a = decoder.forward(ga.mean, pass.mode, &adv_dcache);
    r_a = reconstruction(out_a, likelihood);
  }

  const T inv_n = T{1} / static_cast<T>(n);
  const T b = static_cast<T>(beta);
  Tensor<T> dr(r.shape()), dr_a(adversaries ? r.shape() : Shape{0});
  T task{0}, robust{0};
  for (std::size_t k = 0; k < r.size(); ++k) {
    const T e = r[k] - x[k];
    task += e * e;
    dr[k] = T{2} * e * inv_n;
    if (adversaries) {
      const T a = r_a[k] - r[k];
      robust += a * a;
      dr[k] -= b * T{2} * a * inv_n;
      dr_a[k] = b * T{2} * a * inv_n;
    }
  }
  LossBreakdown l;
  l.task_term = static_cast<double>(task * inv_n);
  l.robust_term = static_cast<double>(robust * inv_n);
  l.total = l.task_term + beta * l.robust_term;

  if (pass.param_grads) {
    auto push = [&](Tensor<T>& d, const Tensor<T>& recon, nn::SequentialCache<T>& dc, const GaussianBatch<T>& gg,
                    typename Encoder<T>::Trace& tr) {
      if (likelihood == Likelihood::Bernoulli) {
        for (std::size_t k = 0; k < d.size(); ++k) d[k] *= recon[k] * (T{1} - recon[k]);
      }
      const Tensor<T> dz = decoder.backward(d, dc, true);
      GaussianBatch<T> grad_g = zeros_like(gg);
      for (std::size_t k = 0; k < dz.size(); ++k) grad_g.mean[k] = dz[k];
      encoder.backward(grad_g, tr, true);
    };
    if (adversaries) push(dr_a, r_a, adv_dcache, ga, adv_trace);
    push(dr, r, dcache, g, trace);
  }
  return l;
}

template <typename T>
LossBreakdown ae_trades_objective(Encoder<T>& encoder, nn::Sequential<T>& decoder, Likelihood likelihood,
                                  const Tensor<T>& x, const AttackConfig& attack, double beta, Rng& rng, Pass pass) {
  if (beta == 0.0) return ae_trades_loss<T>(encoder, decoder, likelihood, x, nullptr, beta, pass);
  const Tensor<T> adv = reconstruction_adversary(encoder, decoder, likelihood, x, attack, rng);
  return ae_trades_loss(encoder, decoder, likelihood, x, &adv, beta, pass);
}

// ----------------------------------------------------------- SimCLR+Urkle

template <typename T>
LossBreakdown simclr_urkle_loss(Encoder<T>& encoder, nn::Sequential<T>* projector, const Tensor<T>& view1,
                                const Tensor<T>& view2, const Tensor<T>* adv1, const Tensor<T>* adv2,
                                const ObjectiveConfig& cfg, Rng& rng, Pass pass) {
  require_same_shape(view1, view2, "simclr views");
  const std::size_t b = view1.batch();
  if (b < 2) throw InvalidArgument("SimCLR needs at least 2 pairs per batch");
  if ((adv1 == nullptr) != (adv2 == nullptr)) throw ContractViolation("adversaries must be given for both views");
  const bool adv = adv1 != nullptr;

  typename Encoder<T>::Trace trace, adv_trace;
  const GaussianBatch<T> g = encoder.forward(concat_batch(view1, view2), pass.mode, &trace);
  Tensor<T> eps, eps_a;
  const Tensor<T> z = draw_latent(encoder, g, rng, &eps);
  GaussianBatch<T> ga;
  Tensor<T> za;
  if (adv) {
    ga = encoder.forward(concat_batch(*adv1, *adv2), pass.mode, &adv_trace);
    za = draw_latent(encoder, ga, rng, &eps_a);
  }
  const Tensor<T>& zs = adv ? za : z;

  // Tuple i = (z_i1, z_i2, zadv_i1, zadv_i2), tuple-major rows.
  const std::size_t dz = g.dim();
  Tensor<T> rows({4 * b, dz});
  auto copy_row = [&](const Tensor<T>& src, std::size_t from, std::size_t to) {
    std::copy_n(src.data() + from * dz, dz, rows.data() + to * dz);
  };
  for (std::size_t i = 0; i < b; ++i) {
    copy_row(z, i, 4 * i);
    copy_row(z, b + i, 4 * i + 1);
    copy_row(zs, i, 4 * i + 2);
    copy_row(zs, b + i, 4 * i + 3);
  }
  nn::SequentialCache<T> pcache;
  const Tensor<T> h = projector ? projector->forward(rows, pass.mode, &pcache) : rows;
  Tensor<T> dh;
  LossBreakdown l;
  l.task_term = static_cast<double>(nt_xent(h, 4, cfg.tau, pass.param_grads ? &dh : nullptr));
  std::vector<T> kl;
  if (adv) {
    kl = kl_rows(g, ga);
    l.robust_term = static_cast<double>(mean_of(kl));
  }
  l.total = l.task_term + cfg.beta_robust * l.robust_term;

  if (pass.param_grads) {
    const Tensor<T> drows = projector ? projector->backward(dh, pcache, true) : dh;
    Tensor<T> dzc(z.shape());
    Tensor<T> dza(adv ? za.shape() : Shape{0});
    Tensor<T>& dzs = adv ? dza : dzc;
    auto add_row = [&](Tensor<T>& dst, std::size_t to, std::size_t from) {
      for (std::size_t k = 0; k < dz; ++k) dst[to * dz + k] += drows[from * dz + k];
    };
    for (std::size_t i = 0; i < b; ++i) {
      add_row(dzc, i, 4 * i);
      add_row(dzc, b + i, 4 * i + 1);
      add_row(dzs, i, 4 * i + 2);
      add_row(dzs, b + i, 4 * i + 3);
    }
    GaussianBatch<T> grad_g = zeros_like(g);
    latent_backward(encoder, g, eps, dzc, grad_g);
    if (adv) {
      GaussianBatch<T> grad_a = zeros_like(ga);
      latent_backward(encoder, ga, eps_a, dza, grad_a);
      const T w = static_cast<T>(cfg.beta_robust) / static_cast<T>(2 * b);
      kl_rows_backward(g, ga, std::vector<T>(2 * b, w), &grad_g, &grad_a);
      encoder.backward(grad_a, adv_trace, true);
    }
    encoder.backward(grad_g, trace, true);
  }
  return l;
}

template <typename T>
LossBreakdown simclr_urkle_objective(Encoder<T>& encoder, nn::Sequential<T>* projector, const Tensor<T>& view1,
                                     const Tensor<T>& view2, const AttackConfig& attack, const ObjectiveConfig& cfg,
                                     Rng& rng, Pass pass) {
  if (view1.batch() < 2) throw InvalidArgument("SimCLR needs at least 2 pairs per batch");
  if (cfg.beta_robust == 0.0) {
    return simclr_urkle_loss<T>(encoder, projector, view1, view2, nullptr, nullptr, cfg, rng, pass);
  }
  const Tensor<T> a1 = unsup_adversary(encoder, view1, attack, rng);
  const Tensor<T> a2 = unsup_adversary(encoder, view2, attack, rng);
  return simclr_urkle_loss(encoder, projector, view1, view2, &a1, &a2, cfg, rng, pass);
}

// ------------------------------------------------------------- supervised

template <typename T>
LossBreakdown supervised_loss(Encoder<T>& encoder, nn::Sequential<T>& classifier, Supervision kind,
                              const Tensor<T>& x, const std::vector<int>& labels, const Tensor<T>* adversaries,
                              const ObjectiveConfig& cfg, Rng& rng, Pass pass) {
  if (kind != Supervision::Standard && !adversaries) throw ContractViolation("AT and TRADES need adversaries");
  struct Branch {
    typename Encoder<T>::Trace trace;
    GaussianBatch<T> g;
    Tensor<T> eps;
    nn::SequentialCache<T> cache;
    Tensor<T> logits;
  };
  auto run = [&](const Tensor<T>& input, Branch& br) {
    br.g = encoder.forward(input, pass.mode, &br.trace);
    const Tensor<T> z = draw_latent(encoder, br.g, rng, &br.eps);
    br.logits = classifier.forward(z, pass.mode, &br.cache);
  };
  auto back = [&](Branch& br, const Tensor<T>& dlogits) {
    const Tensor<T> dz = classifier.backward(dlogits, br.cache, true);
    GaussianBatch<T> grad_g = zeros_like(br.g);
    latent_backward(encoder, br.g, br.eps, dz, grad_g);
    encoder.backward(grad_g, br.trace, true);
  };

  Branch main;
  run(kind == Supervision::AT ? *adversaries : x, main);
  const std::size_t n = main.logits.batch(), c = main.logits.dim(1);
  const T inv_n = T{1} / static_cast<T>(n);
  Tensor<T> dmain(main.logits.shape());
  LossBreakdown l;
  l.task_term = static_cast<double>(cross_entropy(main.logits, labels, inv_n, pass.param_grads ? &dmain : nullptr));

  Branch adv;
  Tensor<T> dadv;
  if (kind == Supervision::TRADES) {
    run(*adversaries, adv);
    dadv = Tensor<T>(adv.logits.shape());
    const T beta = static_cast<T>(cfg.beta_robust);
    T kl_sum{0};
    std::vector<T> a(c), p(c), q(c);
    for (std::size_t i = 0; i < n; ++i) {
      const T* lp = main.logits.data() + i * c;
      const T* lq = adv.logits.data() + i * c;
      const T lse_p = log_sum_exp_row(lp, c), lse_q = log_sum_exp_row(lq, c);
      T kl{0};
      for (std::size_t j = 0; j < c; ++j) {
        const T log_p = lp[j] - lse_p, log_q = lq[j] - lse_q;
        p[j] = std::exp(log_p);
        q[j] = std::exp(log_q);
        a[j] = log_p - log_q;
        kl += p[j] * a[j];
      }
      kl_sum += kl;
      if (pass.param_grads) {
        for (std::size_t j = 0; j < c; ++j) {
          dmain[i * c + j] += beta * inv_n * p[j] * (a[j] - kl);
          dadv[i * c + j] = beta * inv_n * (q[j] - p[j]);
        }
      }
    }
    l.robust_term = std::max(0.0, static_cast<double>(kl_sum * inv_n));
  }
  l.total = l.task_term + cfg.beta_robust * l.robust_term;
  if (pass.param_grads) {
    if (kind == Supervision::TRADES) back(adv, dadv);
    back(main, dmain);
  }
  return l;
}

template <typename T>
LossBreakdown supervised_objective(Encoder<T>& encoder, nn::Sequential<T>& classifier, Supervision kind,
                                   const Tensor<T>& x, const std::vector<int>& labels, const AttackConfig& attack,
                                   const ObjectiveConfig& cfg, Rng& rng, Pass pass) {
  if (kind == Supervision::Standard) {
    return supervised_loss<T>(encoder, classifier, kind, x, labels, nullptr, cfg, rng, pass);
  }
  const Tensor<T> adv = kind == Supervision::AT ? sup_adversary(encoder, classifier, x, labels, attack, rng)
                                                : trades_adversary(encoder, classifier, x, attack, rng);
  return supervised_loss(encoder, classifier, kind, x, labels, &adv, cfg, rng, pass);
}

template <typename T>
double probe_loss(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x,
                  const std::vector<int>& labels, Rng& rng, Pass pass) {
  const GaussianBatch<T> g = encoder.forward(x, nn::Mode::Eval, nullptr);
  return probe_loss_codes(classifier, g, encoder.deterministic(), labels, rng, pass);
}

template <typename T>
double probe_loss_codes(nn::Sequential<T>& classifier, const GaussianBatch<T>& g, bool deterministic,
                        const std::vector<int>& labels, Rng& rng, Pass pass) {
  const Tensor<T> z = deterministic ? g.mean : sample_rows<T>(g, rng, nullptr);
  nn::SequentialCache<T> cache;
  const Tensor<T> logits = classifier.forward(z, pass.mode, &cache);
  Tensor<T> d(logits.shape());
  const T loss = cross_entropy(logits, labels, T{1} / static_cast<T>(logits.batch()), pass.param_grads ? &d : nullptr);
  if (!std::isfinite(loss)) throw NumericError("probe loss is not finite");
  if (pass.param_grads) classifier.backward(d, cache, true);
  return static_cast<double>(loss);
}

#define URKLE_INSTANTIATE(T)                                                                                         \
  template T nt_xent(const Tensor<T>&, std::size_t, double, Tensor<T>*);                                             \
  template T urkle_loss(Encoder<T>&, const Tensor<T>&, const Tensor<T>&);                                            \
  template LossBreakdown vae_loss(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&, const Tensor<T>*,   \
                                  const ObjectiveConfig&, Rng&, Pass);                                               \
  template LossBreakdown vae_objective(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&,                \
                                       const ObjectiveConfig&, Rng&, Pass);                                          \
  template LossBreakdown vae_urkle_objective(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&,          \
                                             const AttackConfig&, const ObjectiveConfig&, Rng&, Pass);               \
  template LossBreakdown ae_trades_loss(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&,               \
                                        const Tensor<T>*, double, Pass);                                             \
  template LossBreakdown ae_trades_objective(Encoder<T>&, nn::Sequential<T>&, Likelihood, const Tensor<T>&,          \
                                             const AttackConfig&, double, Rng&, Pass);                               \
  template LossBreakdown simclr_urkle_loss(Encoder<T>&, nn::Sequential<T>*, const Tensor<T>&, const Tensor<T>&,      \
                                           const Tensor<T>*, const Tensor<T>*, const ObjectiveConfig&, Rng&, Pass);  \
  template LossBreakdown simclr_urkle_objective(Encoder<T>&, nn::Sequential<T>*, const Tensor<T>&,                   \
                                                const Tensor<T>&, const AttackConfig&, const ObjectiveConfig&, Rng&, \
                                                Pass);                                                               \
  template LossBreakdown supervised_loss(Encoder<T>&, nn::Sequential<T>&, Supervision, const Tensor<T>&,             \
                                         const std::vector<int>&, const Tensor<T>*, const ObjectiveConfig&, Rng&,    \
                                         Pass);                                                                      \
  template LossBreakdown supervised_objective(Encoder<T>&, nn::Sequential<T>&, Supervision, const Tensor<T>&,        \
                                              const std::vector<int>&, const AttackConfig&, const ObjectiveConfig&,  \
                                              Rng&, Pass);                                                           \
  template double probe_loss(Encoder<T>&, nn::Sequential<T>&, const Tensor<T>&, const std::vector<int>&, Rng&, Pass); \
  template double probe_loss_codes(nn::Sequential<T>&, const GaussianBatch<T>&, bool, const std::vector<int>&, Rng&,  \
                                   Pass);

URKLE_INSTANTIATE(float)
URKLE_INSTANTIATE(double)
#undef URKLE_INSTANTIATE

}  // namespace urkle
