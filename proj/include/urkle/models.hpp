// SPDX-License-Identifier: Apache-2.0
// Probabilistic encoder, decoder, classifier and projector networks, and the
// checkpoint container that carries them.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "urkle/gaussian_repr.hpp"
#include "urkle/nn.hpp"

namespace urkle {

/// Backbone descriptors are comma-separated tokens:
///   conv<C>s<S>[k<K>]  KxK convolution (default 3, "same" padding) to C channels
///   fc<N>              fully connected layer to N features
///   relu | tanh | gap | flatten
/// The backbone must end with exactly 2 * d_z values per input, read as
/// (mean, raw log-variance).
struct EncoderSpec {
  Shape input_shape{1, 28, 28};
  std::string backbone = "conv32s1,relu,conv64s2,relu,conv128s2,relu,conv256s1,gap";
  std::size_t d_z = 128;
  /// Mean-only encoder: log_var is pinned at LOGVAR_MIN and samples collapse to the mean.
  bool deterministic = false;
  double logvar_min = LOGVAR_MIN;
  double logvar_max = LOGVAR_MAX;
};

enum class Likelihood { Bernoulli, Gaussian };

const char* to_string(Likelihood l);
Likelihood parse_likelihood(const std::string& s);

struct HeadSpecs {
  bool decoder = false;
  Likelihood likelihood = Likelihood::Bernoulli;
  std::size_t num_classes = 0;  ///< 0: no classifier
  std::size_t classifier_width = 256;
  std::size_t projector_width = 0;  ///< 0: no projector
};

struct BundleSpec {
  EncoderSpec encoder;
  HeadSpecs heads;

  std::string to_manifest() const;
  static BundleSpec from_manifest(const std::string& text);
};

/// Backbone plus the squashing of the raw log-variance into
/// [logvar_min, logvar_max]: lv = mid + half * tanh((raw - mid) / half).
template <typename T>
class Encoder {
 public:
  struct Trace {
    nn::SequentialCache<T> net;
    Tensor<T> squash;  // tanh values, [B, d_z]
  };

  Encoder() = default;
  explicit Encoder(EncoderSpec spec);

  /// Accepts [B, C, H, W] or a single [C, H, W] input.
  GaussianBatch<T> forward(const Tensor<T>& x, nn::Mode mode, Trace* trace);
  /// Returns d input; parameter gradients accumulate only when `param_grads`.
  Tensor<T> backward(const GaussianBatch<T>& grad, const Trace& trace, bool param_grads);

  const EncoderSpec& spec() const { return spec_; }
  bool deterministic() const { return spec_.deterministic; }
  void set_deterministic(bool on) { spec_.deterministic = on; }
  nn::Sequential<T>& net() { return net_; }

 private:
  Tensor<T> batched(const Tensor<T>& x) const;

  EncoderSpec spec_;
  nn::Sequential<T> net_;
};

template <typename T>
nn::Sequential<T> build_backbone(const EncoderSpec& spec);
/// Mirror of the backbone from d_z back to input_shape; emits logits for a
/// Bernoulli likelihood and the mean for a unit-variance Gaussian.
template <typename T>
nn::Sequential<T> build_decoder(const EncoderSpec& spec);
/// Three fully connected layers with batch-norm and ReLU between them; a
/// single linear layer when `width` is 0.
template <typename T>
nn::Sequential<T> build_classifier(std::size_t d_z, std::size_t width, std::size_t num_classes);
/// Two-layer perceptron d_z -> d_z -> width.
template <typename T>
nn::Sequential<T> build_projector(std::size_t d_z, std::size_t width);

/// Decoder output to reconstruction in input space.
template <typename T>
Tensor<T> reconstruction(const Tensor<T>& decoder_out, Likelihood likelihood);

template <typename T>
struct ModelBundle {
  BundleSpec spec;
  std::uint64_t seed = 0;
  Encoder<T> encoder;
  std::optional<nn::Sequential<T>> decoder;
  std::optional<nn::Sequential<T>> classifier;
  std::optional<nn::Sequential<T>> projector;

  /// Every parameter and buffer, keyed "<network>.<layer>.<name>".
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
  std::vector<nn::Param<T>*> params();
  std::size_t parameter_count();
  void zero_grad();
};

template <typename T>
ModelBundle<T> init_bundle(const BundleSpec& spec, std::uint64_t seed);

/// Checkpoint layout (little-endian): "URKL", u32 version, u32 length +
/// UTF-8 manifest, u32 tensor count, then per tensor u32 name length, name,
/// u32 rank, u32 dims, f32 data.
inline constexpr std::uint32_t CHECKPOINT_VERSION = 1;

template <typename T>
void save_bundle(ModelBundle<T>& bundle, const std::string& path);
template <typename T>
ModelBundle<T> load_bundle(const std::string& path);

}  // namespace urkle
