#pragma once

// 3D convolution with kernel (kt, 3, 3), stride (1, 2, 2).
// Spatial padding is zero (1 pixel); temporal padding replicates the edge
// frames, so a clip of identical frames stays constant along time.

#include <algorithm>
#include <cstddef>

#include <Eigen/Core>

namespace vthcl::conv {

struct Geometry {
  std::size_t in_ch = 0, out_ch = 0, kt = 1;
  std::size_t frames = 0, in_h = 0, in_w = 0;

  std::size_t out_h() const { return (in_h + 1) / 2; }
  std::size_t out_w() const { return (in_w + 1) / 2; }
  std::size_t patch() const { return in_ch * kt * 9; }               // K
  std::size_t out_positions() const { return frames * out_h() * out_w(); }  // P
  std::size_t in_size() const { return in_ch * frames * in_h * in_w; }
  std::size_t out_size() const { return out_ch * out_positions(); }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col[K x P] from one sample x[Ci, T, H, W].
template <typename T>
void im2col(const Geometry& g, const T* x, T* col) {
  const std::ptrdiff_t T_ = g.frames, H = g.in_h, W = g.in_w;
  const std::ptrdiff_t Ho = g.out_h(), Wo = g.out_w(), kt = g.kt, half = kt / 2;
  T* dst = col;
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    const T* xc = x + ci * T_ * H * W;
    for (std::ptrdiff_t dt = 0; dt < kt; ++dt) {
      for (std::ptrdiff_t kh = 0; kh < 3; ++kh) {
        for (std::ptrdiff_t kw = 0; kw < 3; ++kw) {
          for (std::ptrdiff_t t = 0; t < T_; ++t) {
            const std::ptrdiff_t st = std::clamp<std::ptrdiff_t>(t + dt - half, 0, T_ - 1);
            const T* xt = xc + st * H * W;
            for (std::ptrdiff_t ho = 0; ho < Ho; ++ho) {
              const std::ptrdiff_t h = 2 * ho + kh - 1;
              if (h < 0 || h >= H) {
                std::fill_n(dst, Wo, T(0));
                dst += Wo;
                continue;
              }
              const T* xr = xt + h * W;
              for (std::ptrdiff_t wo = 0; wo < Wo; ++wo) {
                const std::ptrdiff_t w = 2 * wo + kw - 1;
                *dst++ = (w >= 0 && w < W) ? xr[w] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col[K x P] into dx[Ci, T, H, W].
template <typename T>
void col2im_add(const Geometry& g, const T* col, T* dx) {
  const std::ptrdiff_t T_ = g.frames, H = g.in_h, W = g.in_w;
  const std::ptrdiff_t Ho = g.out_h(), Wo = g.out_w(), kt = g.kt, half = kt / 2;
  const T* src = col;
  for (std::size_t ci = 0; ci < g.in_ch; ++ci) {
    T* xc = dx + ci * T_ * H * W;
    for (std::ptrdiff_t dt = 0; dt < kt; ++dt) {
      for (std::ptrdiff_t kh = 0; kh < 3; ++kh) {
        for (std::ptrdiff_t kw = 0; kw < 3; ++kw) {
          for (std::ptrdiff_t t = 0; t < T_; ++t) {
            const std::ptrdiff_t st = std::clamp<std::ptrdiff_t>(t + dt - half, 0, T_ - 1);
            T* xt = xc + st * H * W;
            for (std::ptrdiff_t ho = 0; ho < Ho; ++ho) {
              const std::ptrdiff_t h = 2 * ho + kh - 1;
              if (h < 0 || h >= H) {
                src += Wo;
                continue;
              }
              T* xr = xt + h * W;
              for (std::ptrdiff_t wo = 0; wo < Wo; ++wo, ++src) {
                const std::ptrdiff_t w = 2 * wo + kw - 1;
                if (w >= 0 && w < W) xr[w] += *src;
              }
            }
          }
        }
      }
    }
  }
}

// y[Co x P] = weight[Co x K] * col[K x P]
template <typename T>
void forward(const Geometry& g, const T* weight, const T* col, T* y) {
  const Eigen::Index Co = g.out_ch, K = g.patch(), P = g.out_positions();
  Eigen::Map<const RowMat<T>> Wm(weight, Co, K);
  Eigen::Map<const RowMat<T>> Cm(col, K, P);
  Eigen::Map<RowMat<T>> Ym(y, Co, P);
  Ym.noalias() = Wm * Cm;
}

// dweight += dy * col^T
template <typename T>
void backward_weight(const Geometry& g, const T* dy, const T* col, T* dweight) {
  const Eigen::Index Co = g.out_ch, K = g.patch(), P = g.out_positions();
  Eigen::Map<const RowMat<T>> dYm(dy, Co, P);
  Eigen::Map<const RowMat<T>> Cm(col, K, P);
  Eigen::Map<RowMat<T>> dWm(dweight, Co, K);
  dWm.noalias() += dYm * Cm.transpose();
}

// dcol = weight^T * dy
template <typename T>
void backward_col(const Geometry& g, const T* weight, const T* dy, T* dcol) {
  const Eigen::Index Co = g.out_ch, K = g.patch(), P = g.out_positions();
  Eigen::Map<const RowMat<T>> Wm(weight, Co, K);
  Eigen::Map<const RowMat<T>> dYm(dy, Co, P);
  Eigen::Map<RowMat<T>> dCm(dcol, K, P);
  dCm.noalias() = Wm.transpose() * dYm;
}

}  // namespace vthcl::conv
