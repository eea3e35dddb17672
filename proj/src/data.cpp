// SPDX-License-Identifier: Apache-2.0
#include "urkle/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace urkle {

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset d = *this;
  d.images = gather(idx);
  if (labels) d.labels = gather_labels(idx);
  return d;
}

Tensor<float> Dataset::gather(const std::vector<std::size_t>& idx) const {
  Shape s = images.shape();
  s[0] = idx.size();
  const std::size_t n = images.sample_size();
  Tensor<float> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= size()) throw ContractViolation("dataset index out of range");
    std::copy_n(images.data() + idx[i] * n, n, out.data() + i * n);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<std::size_t>& idx) const {
  if (!labels) throw ConfigError("dataset '" + name + "' has no labels");
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels->at(idx[i]);
  return out;
}

// ------------------------------------------------------------------ IDX

namespace {

std::string read_maybe_gzip(const std::string& path) {
  // gzread passes plain files through untouched, so one code path handles both.
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string out;
  char buf[1 << 16];
  int got;
  while ((got = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(got));
  int err = Z_OK;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (got < 0 || (err != Z_OK && err != Z_BUF_ERROR)) {
    throw IoError("cannot read '" + path + "': " + (msg ? msg : "zlib error"));
  }
  return out;
}

std::uint32_t be32(const std::string& bytes, std::size_t offset, const std::string& path) {
  if (bytes.size() < offset + 4) throw ParseError("'" + path + "' truncated in header", bytes.size());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::string img = read_maybe_gzip(images_path);
  const std::string lab = read_maybe_gzip(labels_path);

  const std::uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 0x00000803) {
    throw FormatError("'" + images_path + "': expected image magic 0x00000803, found " + hex(img_magic));
  }
  const std::uint32_t lab_magic = be32(lab, 0, labels_path);
  if (lab_magic != 0x00000801) {
    throw FormatError("'" + labels_path + "': expected label magic 0x00000801, found " + hex(lab_magic));
  }
  const std::size_t n = be32(img, 4, images_path);
  const std::size_t rows = be32(img, 8, images_path);
  const std::size_t cols = be32(img, 12, images_path);
  const std::size_t n_labels = be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw ConsistencyError("'" + images_path + "' holds " + std::to_string(n) + " images but '" + labels_path +
                           "' holds " + std::to_string(n_labels) + " labels");
  }
  const std::size_t pixels = n * rows * cols;
  if (img.size() < 16 + pixels) throw ParseError("'" + images_path + "' truncated in pixel data", img.size());
  if (lab.size() < 8 + n) throw ParseError("'" + labels_path + "' truncated in label data", lab.size());

  Dataset d;
  d.images = Tensor<float>({n, 1, rows, cols});
  const auto* px = reinterpret_cast<const unsigned char*>(img.data() + 16);
  for (std::size_t i = 0; i < pixels; ++i) d.images[i] = static_cast<float>(px[i]) / 255.0f;
  std::vector<int> labels(n);
  const auto* lb = reinterpret_cast<const unsigned char*>(lab.data() + 8);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = lb[i];
    max_label = std::max(max_label, labels[i]);
  }
  d.labels = std::move(labels);
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  d.name = images_path;
  return d;
}

// ---------------------------------------------------------------- blobs

Dataset synth_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, double separation, std::uint64_t seed) {
  if (n == 0 || num_classes < 2) throw InvalidArgument("blobs need n >= 1 and at least 2 classes");
  if (dim < num_classes) throw InvalidArgument("blobs need dim >= num_classes to place equidistant means");
  if (!(separation >= 0.0)) throw InvalidArgument("separation must be non-negative");
  // Scaled simplex corners (s / sqrt 2) e_c are pairwise `separation` apart; center them.
  const double a = separation / std::sqrt(2.0);
  std::vector<double> means(num_classes * dim, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t j = 0; j < num_classes; ++j) {
      means[c * dim + j] = (c == j ? a : 0.0) - a / static_cast<double>(num_classes);
    }
  }
  Rng rng(seed, {0xb10b});
  Dataset d;
  d.images = Tensor<float>({n, 1, dim, 1});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % num_classes;
    labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < dim; ++j) d.images[i * dim + j] = static_cast<float>(means[c * dim + j] + rng.normal());
  }
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  d.name = "blobs";
  d.value_min = -std::numeric_limits<double>::infinity();
  d.value_max = std::numeric_limits<double>::infinity();
  return d;
}

// --------------------------------------------------------- augmentation

void AugmentationPolicy::validate() const {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("flip_probability must lie in [0, 1]");
  if (!(jitter_strength >= 0.0 && jitter_strength <= 1.0)) throw ConfigError("jitter_strength must lie in [0, 1]");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
}

namespace {

Tensor<float> augment(const Tensor<float>& x, const AugmentationPolicy& p, Rng& rng, float lo, float hi) {
  if (x.rank() != 3) throw ContractViolation("make_pair expects one [C, H, W] image");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<float> out = x;
  if (p.crop && p.crop_padding > 0) {
    // Zero-pad by `pad`, then cut an HxW window at a uniform offset.
    const std::size_t pad = p.crop_padding;
    const auto oy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    const auto ox = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
    Tensor<float> shifted({C, H, W}, 0.0f);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + oy;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t xx = 0; xx < W; ++xx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx) + ox;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
          shifted[(c * H + y) * W + xx] = out[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
        }
      }
    }
    out = std::move(shifted);
  }
  if (p.flip && rng.bernoulli(p.flip_probability)) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        float* row = out.data() + (c * H + y) * W;
        std::reverse(row, row + W);
      }
    }
  }
  if (p.jitter && p.jitter_strength > 0.0) {
    const double s = p.jitter_strength;
    const auto brightness = static_cast<float>(rng.uniform(-s, s));
    const auto contrast = static_cast<float>(rng.uniform(1.0 - s, 1.0 + s));
    double mean = 0.0;
    for (float v : out.values()) mean += v;
    const auto m = static_cast<float>(mean / static_cast<double>(out.size()));
    for (auto& v : out.values()) v = (v - m) * contrast + m + brightness;
  }
  if (p.noise && p.noise_std > 0.0) {
    for (auto& v : out.values()) v += static_cast<float>(p.noise_std * rng.normal());
  }
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> make_pair(const Tensor<float>& x, const AugmentationPolicy& policy, Rng& rng,
                                                  double lo, double hi) {
  policy.validate();
  const auto l = static_cast<float>(lo), h = static_cast<float>(hi);
  Tensor<float> a = augment(x, policy, rng, l, h);
  Tensor<float> b = augment(x, policy, rng, l, h);
  return {std::move(a), std::move(b)};
}

std::pair<Tensor<float>, Tensor<float>> make_pairs(const Tensor<float>& batch, const AugmentationPolicy& policy,
                                                   Rng& rng, double lo, double hi) {
  if (batch.rank() != 4) throw ContractViolation("make_pairs expects [B, C, H, W]");
  Tensor<float> v1(batch.shape()), v2(batch.shape());
  const Shape one(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = batch.sample_size();
  for (std::size_t i = 0; i < batch.batch(); ++i) {
    auto s = batch.sample(i);
    auto [a, b] = make_pair(Tensor<float>(one, std::vector<float>(s.begin(), s.end())), policy, rng, lo, hi);
    std::copy_n(a.data(), n, v1.data() + i * n);
    std::copy_n(b.data(), n, v2.data() + i * n);
  }
  return {std::move(v1), std::move(v2)};
}

}  // namespace urkle
