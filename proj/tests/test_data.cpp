// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <zlib.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "urkle/data.hpp"

using namespace urkle;
namespace fs = std::filesystem;

namespace {

using Bytes = std::vector<unsigned char>;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "urkle_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string write_bytes(const std::string& name, const Bytes& b) {
  const fs::path p = temp_path(name);
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  return p.string();
}

std::string write_gzip(const std::string& name, const Bytes& b) {
  const fs::path p = temp_path(name);
  gzFile f = gzopen(p.c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
  gzclose(f);
  return p.string();
}

// Two 2x2 images and their labels, byte for byte.
const Bytes kImages{0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02,
                    0x00, 0xff, 0x80, 0x33,  // image 0: 0, 255, 128, 51
                    0x01, 0x02, 0xfe, 0x00};  // image 1: 1, 2, 254, 0
const Bytes kLabels{0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 0x07, 0x03};

std::vector<std::vector<double>> rows(const Dataset& d) {
  std::vector<std::vector<double>> out(d.size());
  const std::size_t n = d.images.sample_size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < n; ++k) out[i].push_back(d.images[i * n + k]);
  }
  return out;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("hand-built IDX pair decodes exactly") {
    for (bool gz : {false, true}) {
      CAPTURE(gz);
      const std::string img = gz ? write_gzip("img.gz", kImages) : write_bytes("img.idx", kImages);
      const std::string lab = gz ? write_gzip("lab.gz", kLabels) : write_bytes("lab.idx", kLabels);
      const Dataset d = load_idx(img, lab);
      REQUIRE(d.images.shape() == Shape{2, 1, 2, 2});
      const std::vector<float> expected{0.0f, 1.0f, 128 / 255.0f, 51 / 255.0f, 1 / 255.0f, 2 / 255.0f, 254 / 255.0f, 0.0f};
      CHECK(d.images.storage() == expected);
      REQUIRE(d.labels.has_value());
      CHECK(*d.labels == std::vector<int>{7, 3});
      CHECK(d.num_classes == 8);
      CHECK(load_idx(img, lab).images == d.images);
    }
  }

  TEST_CASE("wrong magic numbers are format errors") {
    const std::string img = write_bytes("img.idx", kImages), lab = write_bytes("lab.idx", kLabels);
    try {
      load_idx(lab, img);
      FAIL("swapped files loaded");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("0x00000801") != std::string::npos);
    }
  }

  TEST_CASE("count mismatch between files is a consistency error") {
    Bytes lab = kLabels;
    lab[7] = 3;
    lab.push_back(1);
    CHECK_THROWS_AS(load_idx(write_bytes("img.idx", kImages), write_bytes("lab3.idx", lab)), ConsistencyError);
  }

  TEST_CASE("truncation reports the byte offset") {
    const std::string lab = write_bytes("lab.idx", kLabels);
    for (std::size_t keep : {std::size_t{2}, std::size_t{10}, kImages.size() - 1}) {
      const std::string img = write_bytes("cut.idx", Bytes(kImages.begin(), kImages.begin() + static_cast<long>(keep)));
      CAPTURE(keep);
      try {
        load_idx(img, lab);
        FAIL("truncated file loaded");
      } catch (const ParseError& e) {
        CHECK(e.offset() == keep);
      }
    }
    CHECK_THROWS_AS(load_idx(temp_path("missing.idx").string(), lab), IoError);
  }

  TEST_CASE("blobs are reproducible and laid out as images") {
    const Dataset a = synth_blobs(100, 3, 4, 5.0, 1), b = synth_blobs(100, 3, 4, 5.0, 1);
    CHECK(a.images == b.images);
    CHECK(*a.labels == *b.labels);
    CHECK(a.images.shape() == Shape{100, 1, 4, 1});
    CHECK(a.num_classes == 3);
    CHECK_FALSE(synth_blobs(100, 3, 4, 5.0, 2).images == a.images);
    CHECK_THROWS_AS(synth_blobs(10, 3, 2, 1.0, 1), InvalidArgument);
  }

  TEST_CASE("blob class means sit the requested distance apart") {
    const Dataset d = synth_blobs(30000, 3, 3, 6.0, 3);
    const auto x = rows(d);
    std::vector<std::vector<double>> mu(3, std::vector<double>(3, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t k = 0; k < 3; ++k) mu[(*d.labels)[i]][k] += x[i][k] / 10000.0;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t e = c + 1; e < 3; ++e) {
        double s = 0;
        for (std::size_t k = 0; k < 3; ++k) s += (mu[c][k] - mu[e][k]) * (mu[c][k] - mu[e][k]);
        CHECK(std::sqrt(s) == doctest::Approx(6.0).epsilon(0.01));
      }
    }
  }

  TEST_CASE("zero separation gives identical class distributions") {
    // Two-sample z-test on each coordinate's mean (unit variance known),
    // repeated over seeds: rejections at 1% must stay at the chance rate.
    const boost::math::normal_distribution<double> unit;
    int tests = 0, rejections = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const Dataset d = synth_blobs(1000, 2, 2, 0.0, seed);
      const auto x = rows(d);
      for (std::size_t k = 0; k < 2; ++k) {
        double m0 = 0, m1 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) ((*d.labels)[i] == 0 ? m0 : m1) += x[i][k] / 500.0;
        const double z = (m0 - m1) / std::sqrt(2.0 / 500.0);
        ++tests;
        rejections += 2 * boost::math::cdf(boost::math::complement(unit, std::abs(z))) < 0.01;
      }
    }
    // 400 tests at 1%: P(Binomial(400, 0.01) > 12) < 1e-3.
    CAPTURE(rejections);
    CHECK(rejections <= 12);
  }

  TEST_CASE("well separated blobs are nearest-mean separable") {
    const Dataset d = synth_blobs(2000, 2, 2, 10.0, 5);
    CHECK(oracle::nearest_mean_accuracy(rows(d), *d.labels, 2) >= 0.999);
  }

  TEST_CASE("identity policy returns the input twice") {
    Tensor<float> x({1, 5, 5});
    Rng fill(6);
    for (auto& v : x.values()) v = static_cast<float>(fill.uniform01());
    Rng rng(7);
    const auto [a, b] = make_pair(x, AugmentationPolicy{}, rng);
    CHECK(a == x);
    CHECK(b == x);
  }

  TEST_CASE("pairs are seeded, independent and stay in range") {
    Tensor<float> x({1, 8, 8});
    Rng fill(8);
    for (auto& v : x.values()) v = static_cast<float>(fill.uniform01());
    AugmentationPolicy p;
    p.crop = p.flip = p.jitter = p.noise = true;
    p.crop_padding = 2;
    p.noise_std = 0.3;
    Rng r1(9), r2(9);
    const auto [a1, b1] = make_pair(x, p, r1);
    const auto [a2, b2] = make_pair(x, p, r2);
    CHECK(a1 == a2);
    CHECK(b1 == b2);
    CHECK_FALSE(a1 == b1);
    Rng r3(10);
    for (int t = 0; t < 200; ++t) {
      const auto [a, b] = make_pair(x, p, r3);
      for (float v : a.values()) CHECK((v >= 0.0f && v <= 1.0f));
      for (float v : b.values()) CHECK((v >= 0.0f && v <= 1.0f));
    }
    p.flip_probability = 1.5;
    CHECK_THROWS_AS(make_pair(x, p, r3), ConfigError);
  }

  TEST_CASE("crop offsets are uniform over valid shifts") {
    const std::size_t H = 9, pad = 2, k = 2 * pad + 1;
    Tensor<float> delta({1, H, H}, 0.0f);
    delta[4 * H + 4] = 1.0f;
    AugmentationPolicy p;
    p.crop = true;
    p.crop_padding = pad;
    std::vector<double> hist(k * k, 0.0);
    Rng rng(11);
    const int draws = 10000;
    for (int t = 0; t < draws / 2; ++t) {
      const auto [a, b] = make_pair(delta, p, rng);
      for (const Tensor<float>* v : {&a, &b}) {
        std::size_t at = v->size();
        for (std::size_t i = 0; i < v->size(); ++i) {
          if ((*v)[i] == 1.0f) at = i;
        }
        REQUIRE(at < v->size());
        const std::size_t y = at / H, xx = at % H;
        REQUIRE(y + pad >= 4);
        REQUIRE(xx + pad >= 4);
        hist[(y + pad - 4) * k + (xx + pad - 4)] += 1;
      }
    }
    const double expected = static_cast<double>(draws) / static_cast<double>(k * k);
    double chi2 = 0;
    for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
    const boost::math::chi_squared_distribution<double> dist(static_cast<double>(k * k - 1));
    const double p_value = boost::math::cdf(boost::math::complement(dist, chi2));
    CAPTURE(chi2);
    CHECK(p_value > 0.01);
  }
}
