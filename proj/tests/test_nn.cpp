// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "oracles.hpp"
#include "urkle/nn.hpp"

using namespace urkle;
using namespace urkle::nn;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Checks d(r . layer(x))/dx and /dparams against central differences.
void check_layer(Layer<double>& layer, Tensor<double> x, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  layer.initialize(rng);
  for (auto* p : layer.params()) {
    for (auto& v : p->value.values()) v += rng.uniform(-0.3, 0.3);  // move biases and BN affine off their init
  }
  Cache<double> cache;
  const Tensor<double> y = layer.forward(x, mode, &cache);
  const Tensor<double> r = random_tensor(y.shape(), rng);
  for (auto* p : layer.params()) p->grad.fill(0.0);
  const Tensor<double> gx = layer.backward(r, cache, true);

  auto f = [&] { return dot(r, layer.forward(x, mode, nullptr)); };
  CHECK(oracle::relative_error(gx.storage(), oracle::numeric_gradient(f, oracle::entries(x))) <= 1e-4);
  for (auto* p : layer.params()) {
    CAPTURE(p->name);
    CHECK(oracle::relative_error(p->grad.storage(), oracle::numeric_gradient(f, oracle::entries(p->value))) <= 1e-4);
  }
}

/// Direct-summation convolution, weight [out, in, k, k].
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t out,
                          std::size_t k, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  Tensor<double> y({B, out, OH, OW});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = long(i * stride + u) - long(pad), q = long(j * stride + v) - long(pad);
                if (r < 0 || q < 0 || r >= long(H) || q >= long(W)) continue;
                s += w[((o * C + c) * k + u) * k + v] * x[((n * C + c) * H + r) * W + q];
              }
          y[((n * out + o) * OH + i) * OW + j] = s;
        }
  return y;
}

/// Scatter definition of the transposed convolution, weight [in, out, k, k].
Tensor<double> naive_conv_t(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                            std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, std::size_t opad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = (H - 1) * stride + k - 2 * pad + opad, OW = (W - 1) * stride + k - 2 * pad + opad;
  Tensor<double> y({B, out, OH, OW});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t p = 0; p < OH * OW; ++p) y[(n * out + o) * OH * OW + p] = b[o];
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t o = 0; o < out; ++o)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = long(i * stride + u) - long(pad), q = long(j * stride + v) - long(pad);
                if (r < 0 || q < 0 || r >= long(OH) || q >= long(OW)) continue;
                y[((n * out + o) * OH + r) * OW + q] += w[((c * out + o) * k + u) * k + v] * x[((n * C + c) * H + i) * W + j];
              }
  return y;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("convolution matches direct summation") {
    Rng rng(1);
    for (std::size_t stride : {1, 2}) {
      Conv2d<double> conv(2, 3, stride);
      conv.initialize(rng);
      for (auto& v : conv.bias().value.values()) v = rng.uniform(-1, 1);
      const Tensor<double> x = random_tensor({2, 2, 5, 6}, rng);
      const Tensor<double> y = conv.forward(x, Mode::Eval, nullptr);
      const Tensor<double> ref = naive_conv(x, conv.weight().value, conv.bias().value, 3, 3, stride, 1);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("transposed convolution matches the scatter definition") {
    Rng rng(2);
    for (auto [stride, opad] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {2, 0}}) {
      ConvTranspose2d<double> conv(3, 2, stride, opad);
      conv.initialize(rng);
      for (auto* p : conv.params()) {
        for (auto& v : p->value.values()) v = rng.uniform(-1, 1);
      }
      const Tensor<double> x = random_tensor({2, 3, 4, 3}, rng);
      const Tensor<double> y = conv.forward(x, Mode::Eval, nullptr);
      const Tensor<double> ref = naive_conv_t(x, conv.params()[0]->value, conv.params()[1]->value, 2, 3, stride, 1, opad);
      REQUIRE(y.shape() == ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("transposed convolution inverts the stride-2 geometry of the encoder") {
    CHECK(Conv2d<double>(1, 1, 2).output_shape({1, 28, 28}) == Shape{1, 14, 14});
    CHECK(ConvTranspose2d<double>(1, 1, 2, 1).output_shape({1, 14, 14}) == Shape{1, 28, 28});
    CHECK(ConvTranspose2d<double>(1, 1, 2, 0).output_shape({1, 7, 7}) == Shape{1, 13, 13});
  }

  TEST_CASE("linear layer computes W x + b") {
    Linear<double> lin(3, 2);
    auto ps = lin.params();
    ps[0]->value = Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6});
    ps[1]->value = Tensor<double>({2}, {0.5, -1});
    const Tensor<double> y = lin.forward(Tensor<double>({1, 3}, {1, 0, -1}), Mode::Eval, nullptr);
    CHECK(y.storage() == std::vector<double>{-1.5, -3.0});
  }

  TEST_CASE("global average pool and tile") {
    const Tensor<double> x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
    GlobalAvgPool<double> gap;
    CHECK(gap.forward(x, Mode::Eval, nullptr).storage() == std::vector<double>{2.5, 25});
    Tile<double> tile(2, 3);
    const Tensor<double> t = tile.forward(Tensor<double>({1, 2}, {1, 2}), Mode::Eval, nullptr);
    CHECK(t.shape() == Shape{1, 2, 2, 3});
    CHECK(t[5] == 1.0);
    CHECK(t[6] == 2.0);
  }

  TEST_CASE("batch-norm uses batch statistics in training and running ones in evaluation") {
    BatchNorm1d<double> bn(1, 1.0);
    const Tensor<double> x({4, 1}, {1, 2, 3, 4});
    const Tensor<double> y = bn.forward(x, Mode::Train, nullptr);
    double m = 0, v = 0;
    for (double a : y.storage()) m += a;
    for (double a : y.storage()) v += a * a;
    CHECK(m == doctest::Approx(0.0));
    CHECK(v / 4 == doctest::Approx(1.0).epsilon(1e-4));
    // momentum 1: running stats are exactly the last batch's (unbiased variance 5/3).
    const Tensor<double> e = bn.forward(Tensor<double>({1, 1}, {2.5}), Mode::Eval, nullptr);
    CHECK(e[0] == doctest::Approx(0.0));
    const Tensor<double> e2 = bn.forward(Tensor<double>({1, 1}, {2.5 + std::sqrt(5.0 / 3.0)}), Mode::Eval, nullptr);
    CHECK(e2[0] == doctest::Approx(1.0).epsilon(1e-4));
  }

  TEST_CASE("evaluation mode leaves batch-norm state untouched") {
    BatchNorm1d<double> bn(2);
    Rng rng(3);
    const auto before = bn.buffers();
    std::vector<Tensor<double>> saved;
    for (auto& [name, t] : before) saved.push_back(*t);
    bn.forward(random_tensor({5, 2}, rng), Mode::Eval, nullptr);
    for (std::size_t i = 0; i < saved.size(); ++i) CHECK(*bn.buffers()[i].second == saved[i]);
  }

  TEST_CASE("layer gradients match central differences") {
    Rng rng(4);
    SUBCASE("conv stride 1") {
      Conv2d<double> l(2, 3, 1);
      check_layer(l, random_tensor({2, 2, 4, 5}, rng), Mode::Train, 10);
    }
    SUBCASE("conv stride 2") {
      Conv2d<double> l(2, 2, 2);
      check_layer(l, random_tensor({2, 2, 5, 4}, rng), Mode::Train, 11);
    }
    SUBCASE("conv 1x1") {
      Conv2d<double> l(3, 2, 1, 1, 0);
      check_layer(l, random_tensor({2, 3, 2, 2}, rng), Mode::Train, 12);
    }
    SUBCASE("transposed conv") {
      ConvTranspose2d<double> l(2, 3, 2, 1);
      check_layer(l, random_tensor({2, 2, 3, 3}, rng), Mode::Train, 13);
    }
    SUBCASE("linear") {
      Linear<double> l(4, 3);
      check_layer(l, random_tensor({3, 4}, rng), Mode::Train, 14);
    }
    SUBCASE("batch-norm, training") {
      BatchNorm1d<double> l(3);
      check_layer(l, random_tensor({5, 3}, rng), Mode::Train, 15);
    }
    SUBCASE("batch-norm, evaluation") {
      BatchNorm1d<double> l(3);
      check_layer(l, random_tensor({5, 3}, rng), Mode::Eval, 16);
    }
    SUBCASE("relu") {
      ReLU<double> l;
      check_layer(l, random_tensor({3, 7}, rng), Mode::Train, 17);
    }
    SUBCASE("tanh") {
      Tanh<double> l;
      check_layer(l, random_tensor({3, 7}, rng), Mode::Train, 18);
    }
    SUBCASE("global average pool") {
      GlobalAvgPool<double> l;
      check_layer(l, random_tensor({2, 3, 2, 3}, rng), Mode::Train, 19);
    }
    SUBCASE("tile") {
      Tile<double> l(2, 2);
      check_layer(l, random_tensor({2, 3}, rng), Mode::Train, 20);
    }
    SUBCASE("flatten and unflatten") {
      Flatten<double> f;
      check_layer(f, random_tensor({2, 2, 2, 1}, rng), Mode::Train, 21);
      Unflatten<double> u(Shape{2, 3});
      check_layer(u, random_tensor({2, 6}, rng), Mode::Train, 22);
    }
  }

  TEST_CASE("sequential backward chains the layers") {
    Sequential<double> net;
    net.emplace<Conv2d<double>>(1, 2, 2);
    net.emplace<Tanh<double>>();
    net.emplace<GlobalAvgPool<double>>();
    net.emplace<Linear<double>>(2, 3);
    net.emplace<BatchNorm1d<double>>(3);
    Rng rng(5);
    net.initialize(rng);
    Tensor<double> x = random_tensor({4, 1, 4, 4}, rng);
    SequentialCache<double> cache;
    const Tensor<double> y = net.forward(x, Mode::Train, &cache);
    CHECK(y.shape() == Shape{4, 3});
    const Tensor<double> r = random_tensor(y.shape(), rng);
    net.zero_grad();
    const Tensor<double> gx = net.backward(r, cache, true);
    auto f = [&] { return dot(r, net.forward(x, Mode::Train, nullptr)); };
    CHECK(oracle::relative_error(gx.storage(), oracle::numeric_gradient(f, oracle::entries(x))) <= 1e-4);
    for (auto* p : net.params()) {
      CHECK(oracle::relative_error(p->grad.storage(), oracle::numeric_gradient(f, oracle::entries(p->value))) <= 1e-4);
    }
  }

  TEST_CASE("copies are deep and seeded initialization is reproducible") {
    Sequential<double> a;
    a.emplace<Linear<double>>(3, 2);
    Rng r1(7), r2(7);
    a.initialize(r1);
    Sequential<double> b = a;
    b.params()[0]->value[0] += 1.0;
    CHECK(a.params()[0]->value[0] != b.params()[0]->value[0]);
    Sequential<double> c;
    c.emplace<Linear<double>>(3, 2);
    c.initialize(r2);
    CHECK(c.params()[0]->value == a.params()[0]->value);
  }

  TEST_CASE("parameter gradients accumulate only when asked") {
    Linear<double> l(2, 2);
    Rng rng(8);
    l.initialize(rng);
    Cache<double> cache;
    const Tensor<double> x = random_tensor({1, 2}, rng);
    l.forward(x, Mode::Train, &cache);
    for (auto* p : l.params()) p->grad.fill(0.0);
    l.backward(Tensor<double>({1, 2}, {1, 1}), cache, false);
    for (auto* p : l.params()) {
      for (double g : p->grad.storage()) CHECK(g == 0.0);
    }
    l.backward(Tensor<double>({1, 2}, {1, 1}), cache, true);
    const double once = l.params()[1]->grad[0];
    l.backward(Tensor<double>({1, 2}, {1, 1}), cache, true);
    CHECK(l.params()[1]->grad[0] == 2 * once);
  }
}
