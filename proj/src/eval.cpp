// SPDX-License-Identifier: Apache-2.0
#include "urkle/eval.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

#include "urkle/training.hpp"

namespace urkle {

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string MetricsRecord::csv_header() {
  return "clean_accuracy,adversarial_accuracy,clean_loss,adv_loss,mean_max_kl,bound_rhs,slack,epsilon,steps,"
         "mc_samples";
}

std::string MetricsRecord::csv_row() const {
  return csv_number(clean_accuracy) + "," + csv_number(adversarial_accuracy) + "," + csv_number(clean_loss) + "," +
         csv_number(adv_loss) + "," + csv_number(mean_max_kl) + "," + csv_number(bound_rhs) + "," +
         csv_number(slack) + "," + csv_number(epsilon) + "," + std::to_string(steps) + "," +
         std::to_string(mc_samples);
}

double pairwise_sum(const double* v, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

// ------------------------------------------------------------ prediction

template <typename T>
Tensor<T> mc_predict(Encoder<T>& encoder, nn::Sequential<T>& classifier, const Tensor<T>& x, std::size_t mc_samples,
                     Rng& rng) {
  if (mc_samples == 0) throw InvalidArgument("mc_samples must be at least 1");
  const GaussianBatch<T> g = encoder.forward(x, nn::Mode::Eval, nullptr);
  if (encoder.deterministic()) return softmax_rows(classifier.forward(g.mean, nn::Mode::Eval, nullptr));
  Tensor<T> acc;
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const Tensor<T> p = softmax_rows(classifier.forward(sample_rows<T>(g, rng, nullptr), nn::Mode::Eval, nullptr));
    if (s == 0) {
      acc = p;
    } else {
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += p[k];
    }
  }
  const T inv = T{1} / static_cast<T>(mc_samples);
  for (auto& v : acc.values()) v *= inv;
  return acc;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& probs) {
  const std::size_t n = probs.batch(), c = probs.sample_size();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (probs[i * c + j] > probs[i * c + best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ------------------------------------------------------------------ probe

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

std::vector<double> row_probs(const Tensor<float>& probs, std::size_t i) {
  const std::size_t c = probs.sample_size();
  std::vector<double> p(c);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) s += (p[j] = probs[i * c + j]);
  // Float rounding can push the row sum a few ulps off 1; renormalize in double.
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

nn::Sequential<float> train_probe(Encoder<float>& encoder, const Dataset& data, const ProbeConfig& cfg) {
  if (!data.labels) throw ConfigError("probe training needs labels");
  for (int y : *data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= data.num_classes) {
      throw InvalidLabel("label " + std::to_string(y) + " outside [0, " + std::to_string(data.num_classes) + ")");
    }
  }
  nn::Sequential<float> classifier = build_classifier<float>(encoder.spec().d_z, cfg.width, data.num_classes);
  Rng init(cfg.seed, {3});
  classifier.initialize(init);
  if (cfg.epochs == 0 || data.size() == 0) return classifier;

  const std::size_t bs = std::min(cfg.batch_size, data.size());
  if (bs < 2) throw ConfigError("probe batches need at least 2 inputs for batch-norm");
  const std::size_t per_epoch = data.size() / bs;
  const std::size_t total = cfg.epochs * per_epoch;
  // The encoder is frozen, so its outputs are computed once and only the
  // latent draws change from step to step.
  const std::size_t dz = encoder.spec().d_z;
  GaussianBatch<float> codes{Tensor<float>({data.size(), dz}), Tensor<float>({data.size(), dz})};
  for (std::size_t start = 0; start < data.size(); start += bs) {
    std::vector<std::size_t> rows(std::min(bs, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto g = encoder.forward(data.gather(rows), nn::Mode::Eval, nullptr);
    std::copy_n(g.mean.data(), g.mean.size(), codes.mean.data() + start * dz);
    std::copy_n(g.log_var.data(), g.log_var.size(), codes.log_var.data() + start * dz);
  }
  const auto gather_codes = [&](const std::vector<std::size_t>& rows) {
    GaussianBatch<float> g{Tensor<float>({rows.size(), dz}), Tensor<float>({rows.size(), dz})};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(codes.mean.data() + rows[i] * dz, dz, g.mean.data() + i * dz);
      std::copy_n(codes.log_var.data() + rows[i] * dz, dz, g.log_var.data() + i * dz);
    }
    return g;
  };

  Sgd opt(cfg.momentum, cfg.weight_decay);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order(cfg.seed, {0x9e0be, epoch});
    const auto idx = shuffled(data.size(), order);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::vector<std::size_t> rows(idx.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                          idx.begin() + static_cast<std::ptrdiff_t>((b + 1) * bs));
      Rng noise(cfg.seed, {0x9e0be, epoch, b});
      classifier.zero_grad();
      probe_loss_codes(classifier, gather_codes(rows), encoder.deterministic(), data.gather_labels(rows), noise,
                       Pass{nn::Mode::Train, true});
      opt.step(classifier.params(), cosine_lr(step, total, cfg.lr0));
    }
  }
  return classifier;
}

// ------------------------------------------------------------- evaluation

namespace {

template <typename Fn>
void for_batches(std::size_t n, std::size_t bs, Fn fn) {
  if (bs == 0) throw ConfigError("batch_size must be positive");
  for (std::size_t start = 0, b = 0; start < n; start += bs, ++b) {
    std::vector<std::size_t> rows(std::min(bs, n - start));
    std::iota(rows.begin(), rows.end(), start);
    fn(b, rows);
  }
}

}  // namespace

double mean_adversarial_kl(Encoder<float>& encoder, const Dataset& data, const AttackConfig& attack,
                           std::size_t batch_size, std::uint64_t seed) {
  std::vector<double> kl;
  kl.reserve(data.size());
  for_batches(data.size(), batch_size, [&](std::size_t b, const std::vector<std::size_t>& rows) {
    const Tensor<float> x = data.gather(rows);
    Rng rng(seed, {b, 3});
    const Tensor<float> xu = unsup_adversary(encoder, x, attack, rng);
    const auto p = encoder.forward(x, nn::Mode::Eval, nullptr);
    const auto q = encoder.forward(xu, nn::Mode::Eval, nullptr);
    // Recompute in double so the audit is not limited by float rounding.
    GaussianBatch<double> pd{p.mean.cast<double>(), p.log_var.cast<double>()};
    GaussianBatch<double> qd{q.mean.cast<double>(), q.log_var.cast<double>()};
    for (double v : kl_rows(pd, qd)) kl.push_back(v);
  });
  return pairwise_mean(kl);
}

MetricsRecord evaluate(Encoder<float>& encoder, nn::Sequential<float>& classifier, const Dataset& data,
                       const EvalConfig& cfg, const ObjectiveConfig& objective) {
  if (!data.labels) throw ConfigError("evaluation needs labels");
  cfg.attack.validate();
  const std::size_t n = data.size();
  std::vector<double> clean_correct(n), adv_correct(n), clean_loss(n), adv_loss(n);
  for_batches(n, cfg.batch_size, [&](std::size_t b, const std::vector<std::size_t>& rows) {
    const Tensor<float> x = data.gather(rows);
    const std::vector<int> y = data.gather_labels(rows);
    // Clean and adversarial predictions share one noise stream per batch.
    Rng clean_noise(cfg.seed, {b, 1});
    const Tensor<float> pc = mc_predict(encoder, classifier, x, cfg.mc_samples, clean_noise);
    Rng attack_rng(cfg.seed, {b, 2});
    const Tensor<float> xa = sup_adversary(encoder, classifier, x, y, cfg.attack, attack_rng);
    Rng adv_noise(cfg.seed, {b, 1});
    const Tensor<float> pa = mc_predict(encoder, classifier, xa, cfg.mc_samples, adv_noise);
    const auto dc = argmax_rows(pc), da = argmax_rows(pa);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      clean_correct[r] = dc[i] == y[i] ? 1.0 : 0.0;
      adv_correct[r] = da[i] == y[i] ? 1.0 : 0.0;
      clean_loss[r] = bounded_nll(row_probs(pc, i), y[i], objective.m_bound);
      adv_loss[r] = bounded_nll(row_probs(pa, i), y[i], objective.m_bound);
    }
  });
  MetricsRecord m;
  m.clean_accuracy = pairwise_mean(clean_correct);
  m.adversarial_accuracy = pairwise_mean(adv_correct);
  m.clean_loss = pairwise_mean(clean_loss);
  m.adv_loss = pairwise_mean(adv_loss);
  m.epsilon = cfg.attack.epsilon;
  m.steps = cfg.attack.steps;
  m.mc_samples = cfg.mc_samples;
  if (cfg.with_kl) {
    m.mean_max_kl = mean_adversarial_kl(encoder, data, cfg.audit_attack, cfg.batch_size, cfg.seed);
    m.bound_rhs = m.clean_loss + objective.m_bound / std::sqrt(2.0) * std::sqrt(m.mean_max_kl);
    m.slack = m.bound_rhs - m.adv_loss;
  }
  return m;
}

template Tensor<float> mc_predict(Encoder<float>&, nn::Sequential<float>&, const Tensor<float>&, std::size_t, Rng&);
template Tensor<double> mc_predict(Encoder<double>&, nn::Sequential<double>&, const Tensor<double>&, std::size_t,
                                   Rng&);
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace urkle
