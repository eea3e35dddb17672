// SPDX-License-Identifier: Apache-2.0
#include "urkle/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "linalg.hpp"

namespace urkle {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

}  // namespace urkle

namespace urkle::nn {

void set_num_threads(int n) {
  if (n < 1) throw InvalidArgument("thread count must be at least 1");
  Eigen::setNbThreads(n);
}

int num_threads() { return Eigen::nbThreads(); }

namespace {

template <typename T>
void uniform_fill(Tensor<T>& t, double bound, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void require_rank(const Tensor<T>& x, std::size_t rank, const char* layer) {
  if (x.rank() != rank) {
    throw ContractViolation(std::string(layer) + " expects rank-" + std::to_string(rank) + " input, got " +
                            shape_string(x.shape()));
  }
}

std::size_t conv_out(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) throw ContractViolation("convolution input smaller than kernel");
  return (in + 2 * p - k) / s + 1;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t stride, std::size_t kernel,
                  std::size_t padding)
    : in_(in_channels), out_(out_channels), stride_(stride), kernel_(kernel), pad_(padding),
      weight_{"weight", Tensor<T>({out_channels, in_channels * kernel * kernel}),
              Tensor<T>({out_channels, in_channels * kernel * kernel})},
      bias_{"bias", Tensor<T>({out_channels}), Tensor<T>({out_channels})} {
  if (stride == 0) throw InvalidArgument("conv stride must be positive");
}

template <typename T>
Shape Conv2d<T>::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[0] != in_) {
    throw ContractViolation(name() + " cannot take per-sample input " + shape_string(input));
  }
  return {out_, conv_out(input[1], kernel_, stride_, pad_), conv_out(input[2], kernel_, stride_, pad_)};
}

template <typename T>
std::string Conv2d<T>::name() const {
  return "conv" + std::to_string(in_) + "x" + std::to_string(out_) + "s" + std::to_string(stride_);
}

template <typename T>
void Conv2d<T>::initialize(Rng& rng) {
  uniform_fill(weight_.value, std::sqrt(6.0 / static_cast<double>(in_ * kernel_ * kernel_)), rng);
  bias_.value.fill(T{0});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 4, "conv2d");
  const Shape out_sample = output_shape({x.dim(1), x.dim(2), x.dim(3)});
  const detail::ConvGeometry g{in_, x.dim(2), x.dim(3), kernel_, stride_, pad_, out_sample[1], out_sample[2]};
  const std::size_t batch = x.batch();
  const std::size_t ncols = batch * g.plane();

  std::vector<T> cols(g.rows() * ncols);
  detail::im2col(x.data(), batch, g, cols.data());
  std::vector<T> out_cm(out_ * ncols);
  detail::gemm<T>(false, false, out_, ncols, g.rows(), T{1}, weight_.value.data(), cols.data(), T{0},
                  out_cm.data());
  for (std::size_t c = 0; c < out_; ++c) {
    T* row = out_cm.data() + c * ncols;
    const T b = bias_.value[c];
    for (std::size_t i = 0; i < ncols; ++i) row[i] += b;
  }
  Tensor<T> y({batch, out_, g.out_h, g.out_w});
  detail::channel_major_to_batch(out_cm.data(), batch, out_, g.plane(), y.data());

  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {x};
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) {
  const Shape& xs = cache.input_shape;
  const detail::ConvGeometry g{in_, xs[2], xs[3], kernel_, stride_, pad_, grad_out.dim(2), grad_out.dim(3)};
  const std::size_t batch = xs[0];
  const std::size_t ncols = batch * g.plane();

  std::vector<T> grad_cm(out_ * ncols);
  detail::batch_to_channel_major(grad_out.data(), batch, out_, g.plane(), grad_cm.data());

  if (param_grads) {
    std::vector<T> cols(g.rows() * ncols);
    detail::im2col(cache.saved[0].data(), batch, g, cols.data());
    detail::gemm<T>(false, true, out_, g.rows(), ncols, T{1}, grad_cm.data(), cols.data(), T{1},
                    weight_.grad.data());
    for (std::size_t c = 0; c < out_; ++c) {
      const T* row = grad_cm.data() + c * ncols;
      T acc{0};
      for (std::size_t i = 0; i < ncols; ++i) acc += row[i];
      bias_.grad[c] += acc;
    }
  }

  std::vector<T> dcols(g.rows() * ncols);
  detail::gemm<T>(true, false, g.rows(), ncols, out_, T{1}, weight_.value.data(), grad_cm.data(), T{0},
                  dcols.data());
  Tensor<T> dx(xs);
  detail::col2im(dcols.data(), batch, g, dx.data());
  return dx;
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                                    std::size_t output_padding, std::size_t kernel, std::size_t padding)
    : in_(in_channels), out_(out_channels), stride_(stride), out_pad_(output_padding), kernel_(kernel),
      pad_(padding),
      weight_{"weight", Tensor<T>({in_channels, out_channels * kernel * kernel}),
              Tensor<T>({in_channels, out_channels * kernel * kernel})},
      bias_{"bias", Tensor<T>({out_channels}), Tensor<T>({out_channels})} {
  if (stride == 0) throw InvalidArgument("transposed conv stride must be positive");
  if (output_padding >= stride) throw InvalidArgument("output padding must be smaller than stride");
}

template <typename T>
Shape ConvTranspose2d<T>::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[0] != in_) {
    throw ContractViolation(name() + " cannot take per-sample input " + shape_string(input));
  }
  auto grow = [&](std::size_t n) { return (n - 1) * stride_ + kernel_ + out_pad_ - 2 * pad_; };
  return {out_, grow(input[1]), grow(input[2])};
}

template <typename T>
std::string ConvTranspose2d<T>::name() const {
  return "convT" + std::to_string(in_) + "x" + std::to_string(out_) + "s" + std::to_string(stride_);
}

template <typename T>
void ConvTranspose2d<T>::initialize(Rng& rng) {
  const double fan_in = std::max(1.0, static_cast<double>(in_ * kernel_ * kernel_) /
                                          static_cast<double>(stride_ * stride_));
  uniform_fill(weight_.value, std::sqrt(6.0 / fan_in), rng);
  bias_.value.fill(T{0});
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 4, "conv_transpose2d");
  const Shape out_sample = output_shape({x.dim(1), x.dim(2), x.dim(3)});
  // Geometry of the adjoint convolution: its input is our output.
  const detail::ConvGeometry g{out_, out_sample[1], out_sample[2], kernel_, stride_, pad_, x.dim(2), x.dim(3)};
  const std::size_t batch = x.batch();
  const std::size_t ncols = batch * g.plane();

  std::vector<T> x_cm(in_ * ncols);
  detail::batch_to_channel_major(x.data(), batch, in_, g.plane(), x_cm.data());
  std::vector<T> cols(g.rows() * ncols);
  detail::gemm<T>(true, false, g.rows(), ncols, in_, T{1}, weight_.value.data(), x_cm.data(), T{0},
                  cols.data());
  Tensor<T> y({batch, out_, out_sample[1], out_sample[2]});
  detail::col2im(cols.data(), batch, g, y.data());
  const std::size_t plane = out_sample[1] * out_sample[2];
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < out_; ++c) {
      T* p = y.data() + (b * out_ + c) * plane;
      const T bias = bias_.value[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += bias;
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {std::move(Tensor<T>({in_, ncols}, std::move(x_cm)))};
  }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) {
  const Shape& xs = cache.input_shape;
  const detail::ConvGeometry g{out_, grad_out.dim(2), grad_out.dim(3), kernel_, stride_, pad_, xs[2], xs[3]};
  const std::size_t batch = xs[0];
  const std::size_t ncols = batch * g.plane();

  std::vector<T> dcols(g.rows() * ncols);
  detail::im2col(grad_out.data(), batch, g, dcols.data());

  if (param_grads) {
    detail::gemm<T>(false, true, in_, g.rows(), ncols, T{1}, cache.saved[0].data(), dcols.data(), T{1},
                    weight_.grad.data());
    const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < out_; ++c) {
        const T* p = grad_out.data() + (b * out_ + c) * plane;
        T acc{0};
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        bias_.grad[c] += acc;
      }
    }
  }

  std::vector<T> dx_cm(in_ * ncols);
  detail::gemm<T>(false, false, in_, ncols, g.rows(), T{1}, weight_.value.data(), dcols.data(), T{0},
                  dx_cm.data());
  Tensor<T> dx(xs);
  detail::channel_major_to_batch(dx_cm.data(), batch, in_, g.plane(), dx.data());
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::size_t in_features, std::size_t out_features)
    : in_(in_features), out_(out_features),
      weight_{"weight", Tensor<T>({out_features, in_features}), Tensor<T>({out_features, in_features})},
      bias_{"bias", Tensor<T>({out_features}), Tensor<T>({out_features})} {}

template <typename T>
Shape Linear<T>::output_shape(const Shape& input) const {
  if (input.size() != 1 || input[0] != in_) {
    throw ContractViolation(name() + " cannot take per-sample input " + shape_string(input));
  }
  return {out_};
}

template <typename T>
std::string Linear<T>::name() const {
  return "fc" + std::to_string(in_) + "x" + std::to_string(out_);
}

template <typename T>
void Linear<T>::initialize(Rng& rng) {
  uniform_fill(weight_.value, std::sqrt(6.0 / static_cast<double>(in_)), rng);
  bias_.value.fill(T{0});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_) throw ContractViolation(name() + " got input " + shape_string(x.shape()));
  const std::size_t batch = x.batch();
  Tensor<T> y({batch, out_});
  detail::gemm<T>(false, true, batch, out_, in_, T{1}, x.data(), weight_.value.data(), T{0}, y.data());
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = y.data() + b * out_;
    for (std::size_t j = 0; j < out_; ++j) row[j] += bias_.value[j];
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {x};
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) {
  const std::size_t batch = cache.input_shape[0];
  if (param_grads) {
    detail::gemm<T>(true, false, out_, in_, batch, T{1}, grad_out.data(), cache.saved[0].data(), T{1},
                    weight_.grad.data());
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = grad_out.data() + b * out_;
      for (std::size_t j = 0; j < out_; ++j) bias_.grad[j] += row[j];
    }
  }
  Tensor<T> dx({batch, in_});
  detail::gemm<T>(false, false, batch, in_, out_, T{1}, grad_out.data(), weight_.value.data(), T{0}, dx.data());
  return dx;
}

// ----------------------------------------------------------- BatchNorm1d

template <typename T>
BatchNorm1d<T>::BatchNorm1d(std::size_t features, double momentum, double eps)
    : features_(features), momentum_(momentum), eps_(eps),
      gamma_{"gamma", Tensor<T>({features}, T{1}), Tensor<T>({features})},
      beta_{"beta", Tensor<T>({features}), Tensor<T>({features})},
      running_mean_({features}), running_var_({features}, T{1}) {}

template <typename T>
std::string BatchNorm1d<T>::name() const {
  return "bn" + std::to_string(features_);
}

template <typename T>
Tensor<T> BatchNorm1d<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 2, "batchnorm1d");
  if (x.dim(1) != features_) throw ContractViolation(name() + " got input " + shape_string(x.shape()));
  const std::size_t batch = x.batch();
  const std::size_t F = features_;
  Tensor<T> xhat({batch, F});
  Tensor<T> inv_std({F});
  Tensor<T> y({batch, F});

  if (mode == Mode::Train) {
    if (batch < 2) throw ContractViolation("batch-norm in train mode needs at least 2 samples");
    for (std::size_t f = 0; f < F; ++f) {
      double mean = 0.0;
      for (std::size_t b = 0; b < batch; ++b) mean += x[b * F + f];
      mean /= static_cast<double>(batch);
      double var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double d = x[b * F + f] - mean;
        var += d * d;
      }
      var /= static_cast<double>(batch);
      inv_std[f] = static_cast<T>(1.0 / std::sqrt(var + eps_));
      running_mean_[f] = static_cast<T>((1.0 - momentum_) * running_mean_[f] + momentum_ * mean);
      running_var_[f] = static_cast<T>((1.0 - momentum_) * running_var_[f] +
                                       momentum_ * var * static_cast<double>(batch) / static_cast<double>(batch - 1));
      for (std::size_t b = 0; b < batch; ++b) {
        xhat[b * F + f] = static_cast<T>((x[b * F + f] - mean) * inv_std[f]);
      }
    }
  } else {
    for (std::size_t f = 0; f < F; ++f) {
      inv_std[f] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[f]) + eps_));
      for (std::size_t b = 0; b < batch; ++b) xhat[b * F + f] = (x[b * F + f] - running_mean_[f]) * inv_std[f];
    }
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < F; ++f) y[b * F + f] = gamma_.value[f] * xhat[b * F + f] + beta_.value[f];
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {std::move(xhat), std::move(inv_std)};
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm1d<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool param_grads) {
  const std::size_t batch = cache.input_shape[0];
  const std::size_t F = features_;
  const Tensor<T>& xhat = cache.saved[0];
  const Tensor<T>& inv_std = cache.saved[1];
  Tensor<T> dx({batch, F});
  for (std::size_t f = 0; f < F; ++f) {
    T sum_dy{0}, sum_dy_xhat{0};
    for (std::size_t b = 0; b < batch; ++b) {
      sum_dy += grad_out[b * F + f];
      sum_dy_xhat += grad_out[b * F + f] * xhat[b * F + f];
    }
    if (param_grads) {
      gamma_.grad[f] += sum_dy_xhat;
      beta_.grad[f] += sum_dy;
    }
    const T scale = gamma_.value[f] * inv_std[f];
    if (cache.mode == Mode::Train) {
      const T n = static_cast<T>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        dx[b * F + f] = scale / n * (n * grad_out[b * F + f] - sum_dy - xhat[b * F + f] * sum_dy_xhat);
      }
    } else {
      for (std::size_t b = 0; b < batch; ++b) dx[b * F + f] = scale * grad_out[b * F + f];
    }
  }
  return dx;
}

// ------------------------------------------------------ pointwise layers

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = v > T{0} ? v : T{0};
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {y};
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  Tensor<T> dx = grad_out;
  const Tensor<T>& y = cache.saved[0];
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(y[i] > T{0})) dx[i] = T{0};
  }
  return dx;
}

template <typename T>
Tensor<T> Tanh<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  Tensor<T> y = x;
  for (auto& v : y.values()) v = std::tanh(v);
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved = {y};
  }
  return y;
}

template <typename T>
Tensor<T> Tanh<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  Tensor<T> dx = grad_out;
  const Tensor<T>& y = cache.saved[0];
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= T{1} - y[i] * y[i];
  return dx;
}

// ------------------------------------------------------ reshaping layers

template <typename T>
Shape GlobalAvgPool<T>::output_shape(const Shape& input) const {
  if (input.size() != 3) throw ContractViolation("gap expects (C,H,W), got " + shape_string(input));
  return {input[0]};
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t batch = x.batch(), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({batch, channels});
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < batch * channels; ++i) {
    const T* p = x.data() + i * plane;
    T acc{0};
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    y[i] = acc * inv;
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved.clear();
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  const Shape& xs = cache.input_shape;
  const std::size_t plane = xs[2] * xs[3];
  Tensor<T> dx(xs);
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < xs[0] * xs[1]; ++i) {
    T* p = dx.data() + i * plane;
    const T g = grad_out[i] * inv;
    for (std::size_t j = 0; j < plane; ++j) p[j] = g;
  }
  return dx;
}

template <typename T>
Shape Tile<T>::output_shape(const Shape& input) const {
  if (input.size() != 1) throw ContractViolation("tile expects a flat feature vector, got " + shape_string(input));
  return {input[0], height_, width_};
}

template <typename T>
std::string Tile<T>::name() const {
  return "tile" + std::to_string(height_) + "x" + std::to_string(width_);
}

template <typename T>
Tensor<T> Tile<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  require_rank(x, 2, "tile");
  const std::size_t batch = x.batch(), channels = x.dim(1), plane = height_ * width_;
  Tensor<T> y({batch, channels, height_, width_});
  for (std::size_t i = 0; i < batch * channels; ++i) {
    T* p = y.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) p[j] = x[i];
  }
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved.clear();
  }
  return y;
}

template <typename T>
Tensor<T> Tile<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  const Shape& xs = cache.input_shape;
  const std::size_t plane = height_ * width_;
  Tensor<T> dx(xs);
  for (std::size_t i = 0; i < xs[0] * xs[1]; ++i) {
    const T* p = grad_out.data() + i * plane;
    T acc{0};
    for (std::size_t j = 0; j < plane; ++j) acc += p[j];
    dx[i] = acc;
  }
  return dx;
}

template <typename T>
Tensor<T> Flatten<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved.clear();
  }
  return x.reshaped({x.batch(), x.sample_size()});
}

template <typename T>
Tensor<T> Flatten<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  return grad_out.reshaped(cache.input_shape);
}

template <typename T>
Tensor<T> Unflatten<T>::forward(const Tensor<T>& x, Mode mode, Cache<T>* cache) {
  Shape s{x.batch()};
  s.insert(s.end(), sample_shape_.begin(), sample_shape_.end());
  if (cache) {
    cache->mode = mode;
    cache->input_shape = x.shape();
    cache->saved.clear();
  }
  return x.reshaped(std::move(s));
}

template <typename T>
Tensor<T> Unflatten<T>::backward(const Tensor<T>& grad_out, const Cache<T>& cache, bool) {
  return grad_out.reshaped(cache.input_shape);
}

// ------------------------------------------------------------ Sequential

template <typename T>
Sequential<T>::Sequential(const Sequential& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
Sequential<T>& Sequential<T>::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Mode mode, SequentialCache<T>* cache) {
  if (cache) cache->layers.assign(layers_.size(), Cache<T>{});
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, mode, cache ? &cache->layers[i] : nullptr);
  }
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, const SequentialCache<T>& cache, bool param_grads) {
  if (cache.layers.size() != layers_.size()) throw ContractViolation("backward without a matching forward cache");
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, cache.layers[i], param_grads);
  return g;
}

template <typename T>
std::vector<Param<T>*> Sequential<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_) {
    for (Param<T>* p : l->params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Sequential<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto& [n, t] : layers_[i]->buffers()) out.emplace_back(std::to_string(i) + "." + n, t);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Sequential<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (Param<T>* p : layers_[i]->params()) out.emplace_back(std::to_string(i) + "." + p->name, &p->value);
    for (auto& [n, t] : layers_[i]->buffers()) out.emplace_back(std::to_string(i) + "." + n, t);
  }
  return out;
}

template <typename T>
void Sequential<T>::zero_grad() {
  for (Param<T>* p : params()) p->grad.fill(T{0});
}

template <typename T>
void Sequential<T>::initialize(Rng& rng) {
  for (auto& l : layers_) l->initialize(rng);
}

template <typename T>
Shape Sequential<T>::output_shape(Shape input) const {
  for (const auto& l : layers_) input = l->output_shape(input);
  return input;
}

#define URKLE_INSTANTIATE(T)        \
  template class Conv2d<T>;         \
  template class ConvTranspose2d<T>; \
  template class Linear<T>;         \
  template class BatchNorm1d<T>;    \
  template class ReLU<T>;           \
  template class Tanh<T>;           \
  template class GlobalAvgPool<T>;  \
  template class Tile<T>;           \
  template class Flatten<T>;        \
  template class Unflatten<T>;      \
  template class Sequential<T>;

URKLE_INSTANTIATE(float)
URKLE_INSTANTIATE(double)
#undef URKLE_INSTANTIATE

}  // namespace urkle::nn
