// SPDX-License-Identifier: Apache-2.0
// Internal dense kernels shared by the layer implementations.
#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace urkle::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C, where op(A) is
/// m x k and op(B) is k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Map = Eigen::Map<const RowMatrix<T>>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Eigen::Map<RowMatrix<T>> C(c, M, N);
  if (beta == T{0}) {
    C.setZero();
  } else if (beta != T{1}) {
    C *= beta;
  }
  if (!trans_a && !trans_b) {
    C.noalias() += alpha * (Map(a, M, K) * Map(b, K, N));
  } else if (trans_a && !trans_b) {
    C.noalias() += alpha * (Map(a, K, M).transpose() * Map(b, K, N));
  } else if (!trans_a && trans_b) {
    C.noalias() += alpha * (Map(a, M, K) * Map(b, N, K).transpose());
  } else {
    C.noalias() += alpha * (Map(a, K, M).transpose() * Map(b, N, K).transpose());
  }
}

/// Geometry of a square-kernel convolution from an input plane
/// (channels, height, width) to an output plane (out_h, out_w).
struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t plane() const { return out_h * out_w; }
};

/// x [batch, C, H, W] -> cols [C*k*k, batch*out_h*out_w]
template <typename T>
void im2col(const T* x, std::size_t batch, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = batch * g.plane();
  const std::size_t in_plane = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = x + (b * g.channels + c) * in_plane;
          T* dst = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            T* out = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) out[ox] = T{0};
              continue;
            }
            const T* line = src + static_cast<std::size_t>(iy) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T{0}
                                                                               : line[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates cols into x (caller zeroes x).
template <typename T>
void col2im(const T* cols, std::size_t batch, const ConvGeometry& g, T* x) {
  const std::size_t ncols = batch * g.plane();
  const std::size_t in_plane = g.height * g.width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (std::size_t b = 0; b < batch; ++b) {
          T* dst = x + (b * g.channels + c) * in_plane;
          const T* src = row + b * g.plane();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            T* line = dst + static_cast<std::size_t>(iy) * g.width;
            const T* in = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) line[static_cast<std::size_t>(ix)] += in[ox];
            }
          }
        }
      }
    }
  }
}

/// [batch, channels, plane] <-> [channels, batch * plane]
template <typename T>
void batch_to_channel_major(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* s = src + (b * channels + c) * plane;
      T* d = dst + c * batch * plane + b * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] = s[i];
    }
  }
}

template <typename T>
void channel_major_to_batch(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* s = src + c * batch * plane + b * plane;
      T* d = dst + (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) d[i] = s[i];
    }
  }
}

}  // namespace urkle::detail
