// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "urkle/rng.hpp"
#include "urkle/tensor.hpp"

namespace urkle::nn {

/// Train mode uses batch statistics in batch-norm and updates its running
/// estimates; Eval mode freezes them. Attacks always run in Eval mode.
enum class Mode { Train, Eval };

/// Caps the worker threads used by matrix products (no effect in a build
/// without OpenMP). Results do not depend on the thread count.
void set_num_threads(int n);
int num_threads();

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// What one layer remembers from its forward pass for the matching backward pass.
template <typename T>
struct Cache {
  Mode mode = Mode::Eval;
  Shape input_shape;
  std::vector<Tensor<T>> saved;
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  /// `cache` may be null when no backward pass will follow.
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) = 0;
  /// Returns the gradient with respect to the layer input. Parameter
  /// gradients are accumulated (not overwritten) only when `param_grads`.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  /// Non-trainable state that must survive serialization.
  virtual std::vector<std::pair<std::string, Tensor<T>*>> buffers() { return {}; }

  /// Per-sample output shape for a per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual std::string name() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Fan-in scaled uniform initialization; no-op for parameter-free layers.
  virtual void initialize(Rng& /*rng*/) {}
};

/// 3x3 (by default) convolution with zero padding 1, NCHW layout.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::size_t kernel = 3,
         std::size_t padding = 1);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  Shape output_shape(const Shape& input) const override;
  std::string name() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }
  void initialize(Rng& rng) override;

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  std::size_t in_, out_, stride_, kernel_, pad_;
  Param<T> weight_;  // [out, in * k * k]
  Param<T> bias_;    // [out]
};

/// Transposed convolution (adjoint of Conv2d with the same geometry).
/// Weight layout [in, out * k * k].
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                  std::size_t output_padding, std::size_t kernel = 3, std::size_t padding = 1);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  Shape output_shape(const Shape& input) const override;
  std::string name() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
  void initialize(Rng& rng) override;

 private:
  std::size_t in_, out_, stride_, out_pad_, kernel_, pad_;
  Param<T> weight_;
  Param<T> bias_;
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in_features, std::size_t out_features);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  Shape output_shape(const Shape& input) const override;
  std::string name() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
  void initialize(Rng& rng) override;

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Param<T> weight_;  // [out, in]
  Param<T> bias_;
};

template <typename T>
class BatchNorm1d final : public Layer<T> {
 public:
  explicit BatchNorm1d(std::size_t features, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  Shape output_shape(const Shape& input) const override { return input; }
  std::string name() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm1d>(*this); }

 private:
  std::size_t features_;
  double momentum_, eps_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& input) const override { return input; }
  std::string name() const override { return "relu"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }
};

template <typename T>
class Tanh final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& input) const override { return input; }
  std::string name() const override { return "tanh"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Tanh>(*this); }
};

/// [B, C, H, W] -> [B, C]
template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& input) const override;
  std::string name() const override { return "gap"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

/// [B, C] -> [B, C, H, W] by replication; the decoder-side mirror of GlobalAvgPool.
template <typename T>
class Tile final : public Layer<T> {
 public:
  Tile(std::size_t height, std::size_t width) : height_(height), width_(width) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& input) const override;
  std::string name() const override;
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Tile>(*this); }

 private:
  std::size_t height_, width_;
};

/// [B, ...] -> [B, prod(...)]
template <typename T>
class Flatten final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& input) const override { return {shape_size(input)}; }
  std::string name() const override { return "flatten"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }
};

/// [B, F] -> [B, sample_shape...]; lets dense decoders end in image layout.
template <typename T>
class Unflatten final : public Layer<T> {
 public:
  explicit Unflatten(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {}
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) override;
  Tensor<T> backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) override;
  Shape output_shape(const Shape& /*input*/) const override { return sample_shape_; }
  std::string name() const override { return "unflatten"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Unflatten>(*this); }

 private:
  Shape sample_shape_;
};

template <typename T>
struct SequentialCache {
  std::vector<Cache<T>> layers;
};

/// Ordered stack of layers with value semantics (copying deep-copies layers).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, SequentialCache<T>* cache);
  Tensor<T> backward(const Tensor<T>& grad_out, const SequentialCache<T>& cache, bool param_grads);

  std::vector<Param<T>*> params();
  /// Parameters and buffers keyed "<layer index>.<name>".
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  void zero_grad();
  void initialize(Rng& rng);

  Shape output_shape(Shape input) const;
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace urkle::nn
