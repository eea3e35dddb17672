// SPDX-License-Identifier: Apache-2.0
#include "urkle/gaussian_repr.hpp"

#include <cmath>

namespace urkle {

namespace {

template <typename T>
void require_finite(const T* v, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) throw InvalidInput(std::string("non-finite ") + what);
  }
}

// Sum over one row; rounding can leave a tiny negative value when p == q.
template <typename T>
T kl_row(const T* mp, const T* lp, const T* mq, const T* lq, std::size_t d) {
  T acc{0};
  for (std::size_t i = 0; i < d; ++i) {
    const T diff = mp[i] - mq[i];
    acc += std::exp(lp[i] - lq[i]) + diff * diff * std::exp(-lq[i]) - T{1} + lq[i] - lp[i];
  }
  acc *= T{0.5};
  if (acc < T{0} && -acc < T(1e-12) * static_cast<T>(d)) acc = T{0};
  return acc;
}

template <typename T>
void kl_row_grad(const T* mp, const T* lp, const T* mq, const T* lq, std::size_t d, T w, T* gmp, T* glp, T* gmq,
                 T* glq) {
  for (std::size_t i = 0; i < d; ++i) {
    const T diff = mp[i] - mq[i];
    const T inv_q = std::exp(-lq[i]);
    const T ratio = std::exp(lp[i] - lq[i]);
    if (gmp) {
      gmp[i] += w * diff * inv_q;
      glp[i] += w * T{0.5} * (ratio - T{1});
    }
    if (gmq) {
      gmq[i] -= w * diff * inv_q;
      glq[i] += w * T{0.5} * (T{1} - ratio - diff * diff * inv_q);
    }
  }
}

template <typename T>
void require_same(const GaussianBatch<T>& p, const GaussianBatch<T>& q) {
  require_same_shape(p.mean, p.log_var, "gaussian batch fields");
  require_same_shape(p.mean, q.mean, "kl between batches");
  require_same_shape(q.mean, q.log_var, "gaussian batch fields");
}

}  // namespace

template <typename T>
void GaussianRepr<T>::validate() const {
  if (mean.empty()) throw ContractViolation("gaussian representation needs d_z >= 1");
  if (mean.size() != log_var.size()) {
    throw ContractViolation("mean has " + std::to_string(mean.size()) + " entries, log_var " +
                            std::to_string(log_var.size()));
  }
  require_finite(mean.data(), mean.size(), "mean");
  require_finite(log_var.data(), log_var.size(), "log_var");
  for (T v : log_var) {
    if (v < T(LOGVAR_MIN) || v > T(LOGVAR_MAX)) throw InvalidInput("log_var outside the clamp range");
  }
}

template <typename T>
GaussianRepr<T> GaussianBatch<T>::at(std::size_t i) const {
  auto m = mean.sample(i);
  auto l = log_var.sample(i);
  return {std::vector<T>(m.begin(), m.end()), std::vector<T>(l.begin(), l.end())};
}

template <typename T>
T kl_divergence(const GaussianRepr<T>& p, const GaussianRepr<T>& q) {
  p.validate();
  q.validate();
  if (p.dim() != q.dim()) {
    throw ContractViolation("kl between d_z=" + std::to_string(p.dim()) + " and d_z=" + std::to_string(q.dim()));
  }
  return kl_row(p.mean.data(), p.log_var.data(), q.mean.data(), q.log_var.data(), p.dim());
}

template <typename T>
T kl_divergence(const GaussianRepr<T>& p, const GaussianRepr<T>& q, KlGrad<T>& grad) {
  const T value = kl_divergence(p, q);
  const std::size_t d = p.dim();
  grad.d_mean_p.assign(d, T{0});
  grad.d_log_var_p.assign(d, T{0});
  grad.d_mean_q.assign(d, T{0});
  grad.d_log_var_q.assign(d, T{0});
  kl_row_grad(p.mean.data(), p.log_var.data(), q.mean.data(), q.log_var.data(), d, T{1}, grad.d_mean_p.data(),
              grad.d_log_var_p.data(), grad.d_mean_q.data(), grad.d_log_var_q.data());
  return value;
}

template <typename T>
std::vector<T> kl_rows(const GaussianBatch<T>& p, const GaussianBatch<T>& q) {
  require_same(p, q);
  const std::size_t n = p.batch(), d = p.dim();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = kl_row(p.mean.data() + i * d, p.log_var.data() + i * d, q.mean.data() + i * d,
                    q.log_var.data() + i * d, d);
    if (!std::isfinite(out[i])) throw InvalidInput("non-finite KL for row " + std::to_string(i));
  }
  return out;
}

template <typename T>
void kl_rows_backward(const GaussianBatch<T>& p, const GaussianBatch<T>& q, const std::vector<T>& weight,
                      GaussianBatch<T>* grad_p, GaussianBatch<T>* grad_q) {
  require_same(p, q);
  const std::size_t n = p.batch(), d = p.dim();
  if (weight.size() != n) throw ContractViolation("kl backward weight count");
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = i * d;
    kl_row_grad(p.mean.data() + o, p.log_var.data() + o, q.mean.data() + o, q.log_var.data() + o, d, weight[i],
                grad_p ? grad_p->mean.data() + o : nullptr, grad_p ? grad_p->log_var.data() + o : nullptr,
                grad_q ? grad_q->mean.data() + o : nullptr, grad_q ? grad_q->log_var.data() + o : nullptr);
  }
}

template <typename T>
std::vector<T> prior_kl_rows(const GaussianBatch<T>& p) {
  require_same_shape(p.mean, p.log_var, "gaussian batch fields");
  const std::size_t n = p.batch(), d = p.dim();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T m = p.mean[i * d + j], l = p.log_var[i * d + j];
      acc += std::exp(l) + m * m - T{1} - l;
    }
    out[i] = std::max(T{0}, T{0.5} * acc);
  }
  return out;
}

template <typename T>
void prior_kl_rows_backward(const GaussianBatch<T>& p, const std::vector<T>& weight, GaussianBatch<T>& grad_p) {
  const std::size_t n = p.batch(), d = p.dim();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = i * d + j;
      grad_p.mean[k] += weight[i] * p.mean[k];
      grad_p.log_var[k] += weight[i] * T{0.5} * (std::exp(p.log_var[k]) - T{1});
    }
  }
}

template <typename T>
std::vector<std::vector<T>> sample(const GaussianRepr<T>& p, std::size_t count, Rng& rng) {
  if (count == 0) throw InvalidArgument("sample count must be at least 1");
  p.validate();
  std::vector<std::vector<T>> out;
  out.reserve(count);
  std::vector<T> eps(p.dim());
  for (std::size_t c = 0; c < count; ++c) {
    for (auto& e : eps) e = static_cast<T>(rng.normal());
    out.push_back(reparameterize(p, eps));
  }
  return out;
}

template <typename T>
std::vector<T> reparameterize(const GaussianRepr<T>& p, const std::vector<T>& eps) {
  if (eps.size() != p.dim()) throw ContractViolation("noise length does not match d_z");
  std::vector<T> z(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) z[i] = p.mean[i] + std::exp(T{0.5} * p.log_var[i]) * eps[i];
  return z;
}

template <typename T>
Tensor<T> sample_rows(const GaussianBatch<T>& p, Rng& rng, Tensor<T>* eps) {
  Tensor<T> z(p.mean.shape());
  Tensor<T> noise(p.mean.shape());
  for (auto& e : noise.values()) e = static_cast<T>(rng.normal());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = p.mean[k] + std::exp(T{0.5} * p.log_var[k]) * noise[k];
  if (eps) *eps = std::move(noise);
  return z;
}

template <typename T>
void sample_rows_backward(const GaussianBatch<T>& p, const Tensor<T>& eps, const Tensor<T>& grad_z,
                          GaussianBatch<T>& grad_p) {
  for (std::size_t k = 0; k < grad_z.size(); ++k) {
    grad_p.mean[k] += grad_z[k];
    grad_p.log_var[k] += grad_z[k] * eps[k] * T{0.5} * std::exp(T{0.5} * p.log_var[k]);
  }
}

double pinsker_tv_bound(double kl) {
  if (!(kl >= 0.0)) throw InvalidArgument("pinsker bound needs a non-negative KL");
  return std::sqrt(kl / 2.0);
}

#define URKLE_INSTANTIATE(T)                                                                                    \
  template struct GaussianRepr<T>;                                                                              \
  template struct GaussianBatch<T>;                                                                             \
  template std::vector<T> reparameterize(const GaussianRepr<T>&, const std::vector<T>&);                       \
  template T kl_divergence(const GaussianRepr<T>&, const GaussianRepr<T>&);                                     \
  template T kl_divergence(const GaussianRepr<T>&, const GaussianRepr<T>&, KlGrad<T>&);                         \
  template std::vector<T> kl_rows(const GaussianBatch<T>&, const GaussianBatch<T>&);                            \
  template void kl_rows_backward(const GaussianBatch<T>&, const GaussianBatch<T>&, const std::vector<T>&,       \
                                 GaussianBatch<T>*, GaussianBatch<T>*);                                         \
  template std::vector<T> prior_kl_rows(const GaussianBatch<T>&);                                               \
  template void prior_kl_rows_backward(const GaussianBatch<T>&, const std::vector<T>&, GaussianBatch<T>&);      \
  template std::vector<std::vector<T>> sample(const GaussianRepr<T>&, std::size_t, Rng&);                       \
  template Tensor<T> sample_rows(const GaussianBatch<T>&, Rng&, Tensor<T>*);                                    \
  template void sample_rows_backward(const GaussianBatch<T>&, const Tensor<T>&, const Tensor<T>&,               \
                                     GaussianBatch<T>&);

URKLE_INSTANTIATE(float)
URKLE_INSTANTIATE(double)
#undef URKLE_INSTANTIATE

}  // namespace urkle
