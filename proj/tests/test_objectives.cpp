// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "urkle/objectives.hpp"

using namespace urkle;

namespace {

Encoder<double> micro_encoder(const std::string& backbone, std::size_t d_z, std::uint64_t seed, Shape input = {2, 1, 1}) {
  EncoderSpec s;
  s.input_shape = std::move(input);
  s.backbone = backbone;
  s.d_z = d_z;
  Encoder<double> enc(s);
  Rng rng(seed);
  for (auto* p : enc.net().params()) {
    for (auto& v : p->value.values()) v = rng.uniform(-1, 1);
  }
  return enc;
}

nn::Sequential<double> randomized(nn::Sequential<double> net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : net.params()) {
    for (auto& v : p->value.values()) v = rng.uniform(-1, 1);
  }
  return net;
}

Tensor<double> uniform_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t count(const std::vector<nn::Param<double>*>& ps) {
  std::size_t n = 0;
  for (auto* p : ps) n += p->value.size();
  return n;
}

// Compares accumulated parameter gradients with central differences of `f`.
void check_param_grads(const std::function<double()>& f, const std::vector<nn::Param<double>*>& ps) {
  REQUIRE(count(ps) <= 50);
  for (auto* p : ps) {
    const std::vector<double> analytic = p->grad.storage();
    CHECK(oracle::relative_error(analytic, oracle::numeric_gradient(f, oracle::entries(p->value))) <= 1e-4);
  }
}

double kl_1d(double mp, double lvp, double mq, double lvq) {
  return 0.5 * (lvq - lvp + (std::exp(lvp) + (mp - mq) * (mp - mq)) / std::exp(lvq) - 1.0);
}

std::vector<nn::Param<double>*> join(std::vector<nn::Param<double>*> a, const std::vector<nn::Param<double>*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("bounded NLL") {
    const double e3 = std::exp(-3.0);
    CHECK(bounded_nll(std::vector<double>(10, 0.1), 4, 3.0) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    std::vector<double> one_hot(10, 0.0);
    one_hot[2] = 1.0;
    CHECK(bounded_nll(one_hot, 5, 3.0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(bounded_nll(one_hot, 2, 3.0) == doctest::Approx(-std::log(1.0 - 9.0 * e3)).epsilon(1e-12));
    CHECK(bounded_nll(one_hot, 2, 3.0) == doctest::Approx(0.594359).epsilon(1e-5));

    // Range and argmax preservation on random probability vectors.
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
      std::vector<double> p(10);
      double s = 0;
      for (auto& v : p) s += (v = rng.uniform01());
      for (auto& v : p) v /= s;
      const double k = 1.0 - 10 * e3;
      std::size_t arg_p = 0, arg_a = 0;
      for (std::size_t j = 0; j < 10; ++j) {
        const double l = bounded_nll(p, static_cast<int>(j), 3.0);
        CHECK(l >= 0.0);
        CHECK(l <= 3.0);
        CHECK(std::exp(-l) == doctest::Approx(p[j] * k + e3).epsilon(1e-12));
        if (p[j] > p[arg_p]) arg_p = j;
        if (std::exp(-l) > std::exp(-bounded_nll(p, static_cast<int>(arg_a), 3.0))) arg_a = j;
      }
      CHECK(arg_p == arg_a);
    }
    CHECK_THROWS_AS(bounded_nll(std::vector<double>(30, 1.0 / 30), 0, 3.0), ConfigError);
    CHECK_THROWS_AS(bounded_nll(std::vector<double>(10, 0.1), 10, 3.0), InvalidLabel);
  }

  TEST_CASE("objective configuration invariants") {
    ObjectiveConfig c;
    CHECK_NOTHROW(c.validate());
    c.num_classes = 25;  // e^-3 * 25 > 1
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ObjectiveConfig{};
    c.tau = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ObjectiveConfig{};
    c.beta_robust = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("NT-Xent of identical vectors is log 2") {
    const Tensor<double> reps({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
    CHECK(nt_xent(reps, 2, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  TEST_CASE("NT-Xent matches direct double summation") {
    // Hand-set 2-D vectors with pairwise cosines in {1, 0, -1}.
    const std::vector<std::vector<double>> hand{{1, 0}, {0, 1}, {-1, 0}, {0, -2}};
    Tensor<double> reps({4, 2});
    for (std::size_t i = 0; i < 4; ++i) reps[2 * i] = hand[i][0], reps[2 * i + 1] = hand[i][1];
    CHECK(nt_xent(reps, 2, 0.5) == doctest::Approx(oracle::nt_xent(hand, 2, 0.5)).epsilon(1e-9));

    Rng rng(2);
    for (std::size_t m : {2u, 3u, 4u}) {
      const std::size_t b = 3, d = 5;
      Tensor<double> r({b * m, d});
      std::vector<std::vector<double>> v(b * m, std::vector<double>(d));
      for (std::size_t i = 0; i < b * m; ++i) {
        for (std::size_t k = 0; k < d; ++k) r[i * d + k] = v[i][k] = rng.uniform(-1, 1);
      }
      CHECK(nt_xent(r, m, 0.3) == doctest::Approx(oracle::nt_xent(v, m, 0.3)).epsilon(1e-9));
    }
  }

  TEST_CASE("NT-Xent is invariant to scale and tuple order") {
    Tensor<double> r = uniform_tensor({12, 4}, 3, -1, 1);
    const double base = nt_xent(r, 4, 0.5);
    Tensor<double> scaled = r;
    for (auto& v : scaled.values()) v *= 7.5;
    CHECK(nt_xent(scaled, 4, 0.5) == doctest::Approx(base).epsilon(1e-12));
    Tensor<double> swapped = r;
    for (std::size_t k = 0; k < 16; ++k) std::swap(swapped[k], swapped[32 + k]);  // tuples 0 and 2
    CHECK(nt_xent(swapped, 4, 0.5) == doctest::Approx(base).epsilon(1e-12));
  }

  TEST_CASE("NT-Xent gradient and error contract") {
    Tensor<double> r = uniform_tensor({6, 3}, 4, -1, 1);
    Tensor<double> g;
    nt_xent(r, 3, 0.5, &g);
    auto f = [&] { return nt_xent(r, 3, 0.5); };
    CHECK(oracle::relative_error(g.storage(), oracle::numeric_gradient(f, oracle::entries(r))) <= 1e-4);
    CHECK_THROWS_AS(nt_xent(Tensor<double>({2, 3}), 2, 0.5), InvalidArgument);
    Tensor<double> zero = uniform_tensor({4, 2}, 5);
    zero[0] = zero[1] = 0.0;
    CHECK_THROWS_AS(nt_xent(zero, 2, 0.5), NumericError);
  }

  TEST_CASE("Urkle loss: identity, constant encoder and hand-computed Gaussians") {
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    Encoder<double> enc(s);
    enc.net().params()[0]->value = Tensor<double>({2, 2}, {1.0, 0.5, -0.3, 0.2});
    enc.net().params()[1]->value = Tensor<double>({2}, {0.0, 0.1});
    const Tensor<double> x({2, 2, 1, 1}, {0.2, 0.4, 0.9, 0.1});
    const Tensor<double> xa({2, 2, 1, 1}, {0.3, 0.3, 0.8, 0.2});
    CHECK(urkle_loss(enc, x, x) == 0.0);

    auto gauss = [](double a, double b) {
      return std::pair{1.0 * a + 0.5 * b, 10.0 * std::tanh((-0.3 * a + 0.2 * b + 0.1) / 10.0)};
    };
    double expected = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto [mp, lp] = gauss(x[2 * i], x[2 * i + 1]);
      const auto [mq, lq] = gauss(xa[2 * i], xa[2 * i + 1]);
      expected += kl_1d(mp, lp, mq, lq) / 2;
    }
    CHECK(urkle_loss(enc, x, xa) == doctest::Approx(expected).epsilon(1e-12));

    enc.net().params()[0]->value.fill(0.0);
    CHECK(urkle_loss(enc, x, xa) == 0.0);
    CHECK_THROWS_AS(urkle_loss(enc, x, Tensor<double>({1, 2, 1, 1})), ContractViolation);
  }

  TEST_CASE("VAE prior term") {
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    Encoder<double> enc(s);
    auto dec = randomized(build_decoder<double>(s), 6);
    const Tensor<double> x = uniform_tensor({3, 2, 1, 1}, 7);
    ObjectiveConfig cfg;
    Rng rng(8);
    // Zero weights: N(0, 1) for every input.
    CHECK(vae_objective(enc, dec, Likelihood::Bernoulli, x, cfg, rng, {nn::Mode::Train, false}).prior_term == 0.0);
    enc.net().params()[1]->value = Tensor<double>({2}, {1.0, 0.0});  // N(1, 1)
    CHECK(vae_objective(enc, dec, Likelihood::Bernoulli, x, cfg, rng, {nn::Mode::Train, false}).prior_term ==
          doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("Gaussian decoder task term on a two-pixel example") {
    // Deterministic encoder so z is the mean; decoder maps z to (2z, -z).
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    s.deterministic = true;
    Encoder<double> enc(s);
    enc.net().params()[1]->value = Tensor<double>({2}, {0.5, 0.0});  // z = 0.5
    nn::Sequential<double> dec;
    dec.emplace<nn::Linear<double>>(1, 2);
    dec.emplace<nn::Unflatten<double>>(Shape{2, 1, 1});
    dec.params()[0]->value = Tensor<double>({2, 1}, {2.0, -1.0});
    const Tensor<double> x({1, 2, 1, 1}, {0.3, 0.1});
    Rng rng(9);
    const auto l = vae_objective(enc, dec, Likelihood::Gaussian, x, ObjectiveConfig{}, rng, {nn::Mode::Train, false});
    // Reconstruction (1.0, -0.5): squared error 0.49 + 0.36.
    CHECK(l.task_term == doctest::Approx(0.5 * 0.85 + std::log(2 * std::numbers::pi)).epsilon(1e-12));
  }

  TEST_CASE("decoder shape mismatch is a contract violation") {
    auto enc = micro_encoder("fc2", 1, 10);
    nn::Sequential<double> dec;
    dec.emplace<nn::Linear<double>>(1, 3);
    const Tensor<double> x = uniform_tensor({2, 2, 1, 1}, 11);
    Rng rng(12);
    CHECK_THROWS_AS(vae_objective(enc, dec, Likelihood::Gaussian, x, ObjectiveConfig{}, rng), ContractViolation);
  }

  TEST_CASE("VAE+Urkle reduces to the VAE without the regularizer or without a budget") {
    auto enc = micro_encoder("fc3,tanh,fc2", 1, 13);
    EncoderSpec s = enc.spec();
    auto dec = randomized(build_decoder<double>(s), 14);
    const Tensor<double> x = uniform_tensor({4, 2, 1, 1}, 15);
    ObjectiveConfig cfg;
    cfg.beta_vae = 0.7;
    AttackConfig attack;
    attack.epsilon = 0.1;
    attack.steps = 5;

    cfg.beta_robust = 0.0;
    Rng a(16), b(16);
    const auto u = vae_urkle_objective(enc, dec, Likelihood::Bernoulli, x, attack, cfg, a, {nn::Mode::Train, false});
    const auto v = vae_objective(enc, dec, Likelihood::Bernoulli, x, cfg, b, {nn::Mode::Train, false});
    CHECK(u.total == v.total);
    CHECK(u.robust_term == 0.0);

    cfg.beta_robust = 6.0;
    attack.epsilon = 0.0;
    Rng c(17);
    const auto w = vae_urkle_objective(enc, dec, Likelihood::Bernoulli, x, attack, cfg, c, {nn::Mode::Train, false});
    CHECK(w.robust_term == 0.0);
    CHECK(w.total == doctest::Approx(w.task_term + cfg.beta_vae * w.prior_term).epsilon(1e-14));
  }

  TEST_CASE("VAE+Urkle robust term matches a grid-search adversary") {
    // Input-independent log-variance; see the adversary grid tests.
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    Encoder<double> enc(s);
    enc.net().params()[0]->value = Tensor<double>({2, 2}, {1.5, -0.7, 0.0, 0.0});
    enc.net().params()[1]->value = Tensor<double>({2}, {0.1, -0.5});
    auto dec = randomized(build_decoder<double>(s), 18);
    const double a = 0.4, b = 0.6;
    const Tensor<double> x({1, 2, 1, 1}, {a, b});
    AttackConfig attack;
    attack.epsilon = 0.1;
    attack.alpha = 0.01;
    attack.steps = 40;
    ObjectiveConfig cfg;
    Rng rng(19);
    const auto l = vae_urkle_objective(enc, dec, Likelihood::Gaussian, x, attack, cfg, rng, {nn::Mode::Train, false});
    const double lv = 10.0 * std::tanh(-0.05);
    const double mp = 1.5 * a - 0.7 * b + 0.1;
    const double best = oracle::grid_max_2d(
        [&](double u, double v) { return kl_1d(mp, lv, 1.5 * u - 0.7 * v + 0.1, lv); }, a, b, 0.1, 0.005);
    CHECK(std::abs(l.robust_term - best) <= 1e-3);
  }

  TEST_CASE("AE+TRADES on the identity map") {
    EncoderSpec s;
    s.input_shape = {1, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    s.deterministic = true;
    Encoder<double> enc(s);
    enc.net().params()[0]->value = Tensor<double>({2, 1}, {1.0, 0.0});
    auto dec = build_decoder<double>(s);
    REQUIRE(dec.params().size() == 2);
    dec.params()[0]->value = Tensor<double>({1, 1}, {1.0});
    dec.params()[1]->value.fill(0.0);
    const Tensor<double> x({3, 1, 1, 1}, {0.3, 0.5, 0.7});
    AttackConfig attack;
    attack.epsilon = 0.1;
    attack.alpha = 0.02;
    attack.steps = 10;
    Rng rng(20);
    const auto l = ae_trades_objective(enc, dec, Likelihood::Gaussian, x, attack, 1.0, rng, {nn::Mode::Train, false});
    CHECK(l.task_term == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(l.robust_term == doctest::Approx(0.01).epsilon(1e-12));
    attack.epsilon = 0.0;
    CHECK(ae_trades_objective(enc, dec, Likelihood::Gaussian, x, attack, 1.0, rng, {nn::Mode::Train, false})
              .robust_term == 0.0);
  }

  TEST_CASE("AE+TRADES robust term matches a grid-search adversary") {
    // Linear encoder and decoder on 2-D inputs: the squared distance is a convex
    // quadratic in the perturbation, so the maximum sits on a corner and both
    // signs of a corner give the same value.
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc2";
    s.d_z = 1;
    s.deterministic = true;
    Encoder<double> enc(s);
    enc.net().params()[0]->value = Tensor<double>({2, 2}, {1.2, -0.4, 0.0, 0.0});
    auto dec = build_decoder<double>(s);
    dec.params()[0]->value = Tensor<double>({2, 1}, {0.8, -1.1});
    dec.params()[1]->value = Tensor<double>({2}, {0.1, 0.2});
    const double a = 0.5, b = 0.4;
    const Tensor<double> x({1, 2, 1, 1}, {a, b});
    AttackConfig attack;
    attack.epsilon = 0.1;
    attack.alpha = 0.01;
    attack.steps = 40;
    Rng rng(21);
    const auto l = ae_trades_objective(enc, dec, Likelihood::Gaussian, x, attack, 1.0, rng, {nn::Mode::Train, false});
    const auto dist = [&](double u, double v) {
      const double dz = 1.2 * (u - a) - 0.4 * (v - b);
      return (0.8 * dz) * (0.8 * dz) + (1.1 * dz) * (1.1 * dz);
    };
    CHECK(std::abs(l.robust_term - oracle::grid_max_2d(dist, a, b, 0.1, 0.005)) <= 1e-3);
  }

  TEST_CASE("SimCLR+Urkle without regularizer or budget is plain NT-Xent over duplicated codes") {
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc4";
    s.d_z = 2;
    s.deterministic = true;
    Encoder<double> enc(s);
    Rng init(22);
    for (auto* p : enc.net().params()) {
      for (auto& v : p->value.values()) v = init.uniform(-1, 1);
    }
    const Tensor<double> v1 = uniform_tensor({3, 2, 1, 1}, 23), v2 = uniform_tensor({3, 2, 1, 1}, 24);
    ObjectiveConfig cfg;
    cfg.beta_robust = 0.0;
    AttackConfig attack;
    attack.epsilon = 0.0;
    Rng rng(25);
    const auto l = simclr_urkle_objective<double>(enc, nullptr, v1, v2, attack, cfg, rng, {nn::Mode::Train, false});
    const auto g1 = enc.forward(v1, nn::Mode::Eval, nullptr), g2 = enc.forward(v2, nn::Mode::Eval, nullptr);
    std::vector<std::vector<double>> tuples;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::vector<double> a{g1.mean[2 * i], g1.mean[2 * i + 1]}, b{g2.mean[2 * i], g2.mean[2 * i + 1]};
      tuples.insert(tuples.end(), {a, b, a, b});
    }
    CHECK(l.task_term == doctest::Approx(oracle::nt_xent(tuples, 4, cfg.tau)).epsilon(1e-9));
    CHECK(l.robust_term == 0.0);

    cfg.beta_robust = 2.0;
    Rng rng2(26);
    CHECK(simclr_urkle_objective<double>(enc, nullptr, v1, v2, attack, cfg, rng2, {nn::Mode::Train, false})
              .robust_term == 0.0);
    CHECK_THROWS_AS(simclr_urkle_objective<double>(enc, nullptr, uniform_tensor({1, 2, 1, 1}, 27),
                                                   uniform_tensor({1, 2, 1, 1}, 28), attack, cfg, rng2),
                    InvalidArgument);
  }

  TEST_CASE("SimCLR+Urkle total by independent step-by-step evaluation") {
    // Stochastic linear encoder, d_z = 2, fixed adversaries, no projector.
    EncoderSpec s;
    s.input_shape = {2, 1, 1};
    s.backbone = "fc4";
    s.d_z = 2;
    Encoder<double> enc(s);
    const std::vector<double> w{0.9, -0.2, 0.3, 0.8, -0.5, 0.4, 0.2, -0.6};
    const std::vector<double> c{0.1, -0.1, -0.3, 0.2};
    enc.net().params()[0]->value = Tensor<double>({4, 2}, w);
    enc.net().params()[1]->value = Tensor<double>({4}, c);
    const Tensor<double> v1({2, 2, 1, 1}, {0.1, 0.7, 0.5, 0.2});
    const Tensor<double> v2({2, 2, 1, 1}, {0.2, 0.6, 0.4, 0.3});
    const Tensor<double> a1({2, 2, 1, 1}, {0.15, 0.65, 0.45, 0.25});
    const Tensor<double> a2({2, 2, 1, 1}, {0.25, 0.55, 0.35, 0.35});
    ObjectiveConfig cfg;
    cfg.beta_robust = 3.0;

    // Hand forward pass: rows 0..1 mean, rows 2..3 raw log-variance.
    auto encode = [&](double p, double q) {
      std::array<double, 4> out{};
      for (std::size_t r = 0; r < 4; ++r) out[r] = w[2 * r] * p + w[2 * r + 1] * q + c[r];
      for (std::size_t r = 2; r < 4; ++r) out[r] = 10.0 * std::tanh(out[r] / 10.0);
      return out;
    };
    // Noise is drawn row-major, clean batch [view1; view2] first, then the adversaries.
    Rng noise(29);
    auto draw_all = [&](const Tensor<double>& first, const Tensor<double>& second) {
      std::vector<std::array<double, 4>> g;
      std::vector<std::vector<double>> z;
      for (const Tensor<double>* t : {&first, &second}) {
        for (std::size_t i = 0; i < 2; ++i) g.push_back(encode((*t)[2 * i], (*t)[2 * i + 1]));
      }
      for (const auto& e : g) {
        std::vector<double> zi(2);
        for (std::size_t j = 0; j < 2; ++j) zi[j] = e[j] + std::exp(0.5 * e[2 + j]) * noise.normal();
        z.push_back(zi);
      }
      return std::pair{g, z};
    };
    const auto [gc, zc] = draw_all(v1, v2);
    const auto [ga, za] = draw_all(a1, a2);
    std::vector<std::vector<double>> tuples;
    for (std::size_t i = 0; i < 2; ++i) tuples.insert(tuples.end(), {zc[i], zc[2 + i], za[i], za[2 + i]});
    double kl = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t j = 0; j < 2; ++j) kl += kl_1d(gc[r][j], gc[r][2 + j], ga[r][j], ga[r][2 + j]) / 4;
    }
    const double expected = oracle::nt_xent(tuples, 4, cfg.tau) + cfg.beta_robust * kl;

    Rng rng(29);
    const auto l = simclr_urkle_loss<double>(enc, nullptr, v1, v2, &a1, &a2, cfg, rng, {nn::Mode::Train, false});
    CHECK(l.robust_term == doctest::Approx(kl).epsilon(1e-6));
    CHECK(l.total == doctest::Approx(expected).epsilon(1e-6));
  }

  TEST_CASE("loss totals recombine from their parts") {
    auto enc = micro_encoder("fc3,tanh,fc2", 1, 30);
    auto dec = randomized(build_decoder<double>(enc.spec()), 31);
    const Tensor<double> x = uniform_tensor({4, 2, 1, 1}, 32);
    const Tensor<double> xa = uniform_tensor({4, 2, 1, 1}, 33);
    ObjectiveConfig cfg;
    cfg.beta_vae = 0.3;
    cfg.beta_robust = 2.5;
    Rng rng(34);
    const auto l = vae_loss<double>(enc, dec, Likelihood::Bernoulli, x, &xa, cfg, rng, {nn::Mode::Train, false});
    CHECK(l.robust_term >= 0.0);
    CHECK(l.total == l.task_term + cfg.beta_vae * l.prior_term + cfg.beta_robust * l.robust_term);
    const auto t = ae_trades_loss<double>(enc, dec, Likelihood::Bernoulli, x, &xa, 1.5, {nn::Mode::Train, false});
    CHECK(t.total == t.task_term + 1.5 * t.robust_term);
  }

  TEST_CASE("every objective's gradient matches central differences") {
    const Tensor<double> x = uniform_tensor({4, 2, 1, 1}, 40);
    const Tensor<double> xa = uniform_tensor({4, 2, 1, 1}, 41);
    const std::vector<int> labels{0, 1, 1, 0};
    ObjectiveConfig cfg;
    cfg.beta_vae = 0.5;
    cfg.beta_robust = 2.0;
    cfg.num_classes = 2;
    const Pass eval_only{nn::Mode::Train, false};
    const Pass with_grads{nn::Mode::Train, true};

    SUBCASE("VAE+Urkle") {
      for (Likelihood lik : {Likelihood::Bernoulli, Likelihood::Gaussian}) {
        auto enc = micro_encoder("fc3,tanh,fc2", 1, 42);
        auto dec = randomized(build_decoder<double>(enc.spec()), 43);
        auto f = [&] {
          Rng r(44);
          return vae_loss<double>(enc, dec, lik, x, &xa, cfg, r, eval_only).total;
        };
        enc.net().zero_grad();
        dec.zero_grad();
        Rng r(44);
        vae_loss<double>(enc, dec, lik, x, &xa, cfg, r, with_grads);
        check_param_grads(f, join(enc.net().params(), dec.params()));
      }
    }
    SUBCASE("AE+TRADES") {
      for (Likelihood lik : {Likelihood::Bernoulli, Likelihood::Gaussian}) {
        auto enc = micro_encoder("fc3,tanh,fc2", 1, 45);
        enc.set_deterministic(true);
        auto dec = randomized(build_decoder<double>(enc.spec()), 46);
        auto f = [&] { return ae_trades_loss<double>(enc, dec, lik, x, &xa, 1.5, eval_only).total; };
        enc.net().zero_grad();
        dec.zero_grad();
        ae_trades_loss<double>(enc, dec, lik, x, &xa, 1.5, with_grads);
        check_param_grads(f, join(enc.net().params(), dec.params()));
      }
    }
    SUBCASE("SimCLR+Urkle") {
      auto enc = micro_encoder("fc4", 2, 47);
      auto proj = randomized(build_projector<double>(2, 3), 48);
      const Tensor<double> v2 = uniform_tensor({4, 2, 1, 1}, 49), a2 = uniform_tensor({4, 2, 1, 1}, 50);
      for (bool adversarial : {false, true}) {
        auto f = [&] {
          Rng r(51);
          return simclr_urkle_loss<double>(enc, &proj, x, v2, adversarial ? &xa : nullptr,
                                           adversarial ? &a2 : nullptr, cfg, r, eval_only)
              .total;
        };
        enc.net().zero_grad();
        proj.zero_grad();
        Rng r(51);
        simclr_urkle_loss<double>(enc, &proj, x, v2, adversarial ? &xa : nullptr, adversarial ? &a2 : nullptr, cfg, r,
                                  with_grads);
        check_param_grads(f, join(enc.net().params(), proj.params()));
      }
    }
    SUBCASE("supervised") {
      for (Supervision kind : {Supervision::Standard, Supervision::AT, Supervision::TRADES}) {
        auto enc = micro_encoder("fc2", 1, 52);
        auto cls = randomized(build_classifier<double>(1, 2, 2), 53);
        auto f = [&] {
          Rng r(54);
          return supervised_loss<double>(enc, cls, kind, x, labels, &xa, cfg, r, eval_only).total;
        };
        enc.net().zero_grad();
        cls.zero_grad();
        Rng r(54);
        supervised_loss<double>(enc, cls, kind, x, labels, &xa, cfg, r, with_grads);
        check_param_grads(f, join(enc.net().params(), cls.params()));
      }
    }
    SUBCASE("probe") {
      auto enc = micro_encoder("fc2", 1, 55);
      auto cls = randomized(build_classifier<double>(1, 2, 2), 56);
      auto f = [&] {
        Rng r(57);
        return probe_loss<double>(enc, cls, x, labels, r, eval_only);
      };
      enc.net().zero_grad();
      cls.zero_grad();
      Rng r(57);
      probe_loss<double>(enc, cls, x, labels, r, with_grads);
      check_param_grads(f, cls.params());
      for (auto* p : enc.net().params()) {
        for (double g : p->grad.storage()) CHECK(g == 0.0);
      }
    }
  }
}
