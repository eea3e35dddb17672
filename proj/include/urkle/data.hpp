// SPDX-License-Identifier: Apache-2.0
// Datasets: MNIST IDX files, synthetic Gaussian blobs, and positive-pair augmentation.
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "urkle/rng.hpp"
#include "urkle/tensor.hpp"

namespace urkle {

struct Dataset {
  Tensor<float> images;  ///< [N, C, H, W]
  std::optional<std::vector<int>> labels;
  std::size_t num_classes = 0;
  std::string name;
  std::string split;
  /// Range every pixel lies in; [0, 1] for image data. Synthetic blobs keep
  /// raw coordinates and report an unbounded range.
  double value_min = 0.0;
  double value_max = 1.0;

  std::size_t size() const { return images.batch(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  /// Rows `idx` (in that order) as a new dataset.
  Dataset subset(const std::vector<std::size_t>& idx) const;
  /// Images of rows `idx` as one batch.
  Tensor<float> gather(const std::vector<std::size_t>& idx) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& idx) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Gzip-compressed files are detected by their 0x1f8b prefix.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// `n` points, labels i mod num_classes, unit-variance isotropic noise around
/// class means separated pairwise by `separation`, laid out as [n, 1, dim, 1].
Dataset synth_blobs(std::size_t n, std::size_t num_classes, std::size_t dim, double separation, std::uint64_t seed);

struct AugmentationPolicy {
  bool crop = false;
  std::size_t crop_padding = 4;
  bool flip = false;
  double flip_probability = 0.5;
  bool jitter = false;
  double jitter_strength = 0.4;
  /// Additive Gaussian noise; the only transform meaningful for blob data.
  bool noise = false;
  double noise_std = 0.5;

  void validate() const;
  bool any() const { return crop || flip || jitter || noise; }
};

/// Two independent augmentations of one [C, H, W] image, clamped to [lo, hi].
std::pair<Tensor<float>, Tensor<float>> make_pair(const Tensor<float>& x, const AugmentationPolicy& policy, Rng& rng,
                                                  double lo = 0.0, double hi = 1.0);

/// make_pair over a batch [B, C, H, W]; returns the two view batches.
std::pair<Tensor<float>, Tensor<float>> make_pairs(const Tensor<float>& batch, const AugmentationPolicy& policy,
                                                   Rng& rng, double lo = 0.0, double hi = 1.0);

}  // namespace urkle
