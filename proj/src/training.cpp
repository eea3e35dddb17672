// SPDX-License-Identifier: Apache-2.0
#include "urkle/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace urkle {

const char* to_string(Method m) {
  switch (m) {
    case Method::Vae: return "vae";
    case Method::VaeUrkle: return "vae_urkle";
    case Method::AeTrades: return "ae_trades";
    case Method::SimclrUrkle: return "simclr_urkle";
    case Method::Standard: return "standard";
    case Method::AT: return "at";
    case Method::TRADES: return "trades";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::Vae, Method::VaeUrkle, Method::AeTrades, Method::SimclrUrkle, Method::Standard, Method::AT,
                   Method::TRADES}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "'");
}

bool is_supervised(Method m) { return m == Method::Standard || m == Method::AT || m == Method::TRADES; }

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw InvalidArgument("total_steps must be at least 1");
  if (step > total_steps) throw InvalidArgument("step beyond the end of the schedule");
  if (step == total_steps) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

template <typename T>
void Sgd::step(const std::vector<nn::Param<T>*>& params, double lr) {
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i]->value.size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->value;
    const auto& g = params[i]->grad;
    auto& v = velocity_[i];
    if (v.size() != w.size()) throw ContractViolation("optimizer state does not match parameter '" + params[i]->name + "'");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double d = static_cast<double>(g[k]) + weight_decay_ * static_cast<double>(w[k]);
      v[k] = momentum_ * v[k] + d;
      w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * v[k]);
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<nn::Param<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (auto* p : params) {
    for (T g : p->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto* p : params) {
      for (auto& g : p->grad.values()) g *= scale;
    }
  }
  return norm;
}

template void Sgd::step(const std::vector<nn::Param<float>*>&, double);
template void Sgd::step(const std::vector<nn::Param<double>*>&, double);
template double clip_grad_norm(const std::vector<nn::Param<float>*>&, double);
template double clip_grad_norm(const std::vector<nn::Param<double>*>&, double);

// --------------------------------------------------------------- config

BundleSpec TrainConfig::bundle_spec() const {
  BundleSpec s = model;
  switch (method) {
    case Method::Vae:
    case Method::VaeUrkle:
      s.heads.decoder = true;
      break;
    case Method::AeTrades:
      s.heads.decoder = true;
      s.encoder.deterministic = true;
      break;
    case Method::SimclrUrkle:
      if (s.heads.projector_width == 0) s.heads.projector_width = 128;
      break;
    case Method::Standard:
    case Method::AT:
    case Method::TRADES:
      s.encoder.deterministic = true;
      if (s.heads.num_classes == 0) s.heads.num_classes = objective.num_classes;
      break;
  }
  return s;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  attack.validate();
  objective.validate();
  augmentation.validate();
  if (method == Method::SimclrUrkle && !augmentation.any()) {
    throw ConfigError("simclr_urkle needs at least one augmentation enabled");
  }
}

// ---------------------------------------------------------------- train

namespace {

std::string snapshot(const LossBreakdown& l) {
  std::ostringstream os;
  os << "task=" << l.task_term << " prior=" << l.prior_term << " robust=" << l.robust_term << " total=" << l.total;
  return os.str();
}

LossBreakdown run_step(ModelBundle<float>& b, const TrainConfig& cfg, const ObjectiveConfig& objective,
                       const Dataset& data, const std::vector<std::size_t>& rows, Rng& rng) {
  const Tensor<float> x = data.gather(rows);
  const BundleSpec& spec = b.spec;
  switch (cfg.method) {
    case Method::Vae:
      return vae_objective(b.encoder, *b.decoder, spec.heads.likelihood, x, objective, rng);
    case Method::VaeUrkle:
      return vae_urkle_objective(b.encoder, *b.decoder, spec.heads.likelihood, x, cfg.attack, objective, rng);
    case Method::AeTrades:
      return ae_trades_objective(b.encoder, *b.decoder, spec.heads.likelihood, x, cfg.attack, objective.beta_robust,
                                 rng);
    case Method::SimclrUrkle: {
      auto [v1, v2] = make_pairs(x, cfg.augmentation, rng, data.value_min, data.value_max);
      return simclr_urkle_objective(b.encoder, b.projector ? &*b.projector : nullptr, v1, v2, cfg.attack,
                                    objective, rng);
    }
    case Method::Standard:
    case Method::AT:
    case Method::TRADES: {
      const Supervision kind = cfg.method == Method::Standard ? Supervision::Standard
                               : cfg.method == Method::AT     ? Supervision::AT
                                                              : Supervision::TRADES;
      return supervised_objective(b.encoder, *b.classifier, kind, x, data.gather_labels(rows), cfg.attack,
                                  objective, rng);
    }
  }
  throw ConfigError("unhandled method");
}

MetricsRecord monitor(ModelBundle<float>& b, const TrainConfig& cfg, const Dataset& held_out, std::size_t epoch) {
  MetricsRecord m;
  std::vector<std::size_t> rows(std::min(cfg.monitor_size, held_out.size()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const Dataset sub = held_out.subset(rows);
  const std::uint64_t seed = cfg.seed ^ (0x6d6f6eull << 32) ^ epoch;
  m.mean_max_kl = mean_adversarial_kl(b.encoder, sub, cfg.attack, 100, seed);
  m.epsilon = cfg.attack.epsilon;
  m.steps = cfg.attack.steps;
  if (is_supervised(cfg.method) && sub.labels) {
    EvalConfig ec;
    ec.attack = cfg.monitor_attack;
    ec.mc_samples = 1;
    ec.with_kl = false;
    ec.seed = seed;
    const MetricsRecord r = evaluate(b.encoder, *b.classifier, sub, ec, cfg.objective);
    m.clean_accuracy = r.clean_accuracy;
    m.adversarial_accuracy = r.adversarial_accuracy;
    m.clean_loss = r.clean_loss;
    m.adv_loss = r.adv_loss;
    m.epsilon = r.epsilon;
    m.steps = r.steps;
    m.mc_samples = r.mc_samples;
  }
  return m;
}

}  // namespace

void train_bundle(ModelBundle<float>& bundle, const TrainConfig& cfg, const Dataset& data, const Dataset* held_out,
                  const EpochSink& sink, const StepSink& step_sink) {
  cfg.validate();
  if (is_supervised(cfg.method) && !data.labels) {
    throw ConfigError(std::string("method '") + to_string(cfg.method) + "' needs labels");
  }
  if (data.size() < 2) throw ConfigError("training needs at least 2 inputs");
  const std::size_t bs = std::min(cfg.batch_size, data.size());
  const std::size_t per_epoch = data.size() / bs;
  const std::size_t total = cfg.epochs * per_epoch;
  Sgd opt(cfg.momentum, cfg.weight_decay);
  const auto params = bundle.params();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng order(cfg.seed, {0x0dde, epoch});
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), order.engine());
    LossBreakdown sum;
    double lr = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const std::vector<std::size_t> rows(idx.begin() + static_cast<std::ptrdiff_t>(b * bs),
                                          idx.begin() + static_cast<std::ptrdiff_t>((b + 1) * bs));
      Rng rng(cfg.seed, {0x57e9, epoch, b});
      bundle.zero_grad();
      ObjectiveConfig objective = cfg.objective;
      if (cfg.beta_warmup_epochs > 0) {
        const double ramp = static_cast<double>(step + 1) / static_cast<double>(cfg.beta_warmup_epochs * per_epoch);
        objective.beta_robust *= std::min(1.0, ramp);
      }
      LossBreakdown l;
      try {
        l = run_step(bundle, cfg, objective, data, rows, rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in training", step + 1);
      }
      if (!std::isfinite(l.total) || !std::isfinite(l.task_term) || !std::isfinite(l.robust_term) ||
          !std::isfinite(l.prior_term)) {
        throw NumericError("non-finite loss (" + snapshot(l) + ")", step + 1);
      }
      if (!std::isfinite(clip_grad_norm(params, cfg.grad_clip))) {
        throw NumericError("non-finite gradient (" + snapshot(l) + ")", step + 1);
      }
      lr = cosine_lr(step, total, cfg.lr0);
      opt.step(params, lr);
      if (step_sink) step_sink(step + 1, l);
      sum.task_term += l.task_term;
      sum.prior_term += l.prior_term;
      sum.robust_term += l.robust_term;
      sum.total += l.total;
    }
    EpochReport rep;
    rep.epoch = epoch + 1;
    rep.lr = lr;
    const double k = per_epoch ? 1.0 / static_cast<double>(per_epoch) : 0.0;
    rep.loss = {sum.task_term * k, sum.prior_term * k, sum.robust_term * k, sum.total * k};
    if (held_out && cfg.monitor_size > 0 && held_out->size() > 0) rep.metrics = monitor(bundle, cfg, *held_out, epoch);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(rep, bundle);
  }
}

ModelBundle<float> train(const TrainConfig& cfg, const Dataset& data, const Dataset* held_out, const EpochSink& sink,
                         const StepSink& step_sink) {
  cfg.validate();
  ModelBundle<float> bundle = init_bundle<float>(cfg.bundle_spec(), cfg.seed);
  train_bundle(bundle, cfg, data, held_out, sink, step_sink);
  return bundle;
}

}  // namespace urkle
