#pragma once

#include <cstdint>
#include <vector>

#include "aggfov/common.hpp"

namespace aggfov::kern {

/// Geometry of one convolution: input (n,cin,h,w), square kernel k, and the
/// same-padding contract pad = dilation*(k-1)/2, oh = ceil(h/stride).
struct ConvGeom {
  int64_t n, cin, h, w;
  int64_t cout, k;
  int64_t stride, dilation;

  int64_t pad() const { return dilation * (k - 1) / 2; }
  int64_t oh() const { return (h + stride - 1) / stride; }
  int64_t ow() const { return (w + stride - 1) / stride; }
};

// Naive bounds-checked kernels. These are the semantic reference: the
// optimized float paths must match them bitwise-modulo-summation-order and
// are tested against them.

template <typename T>
void conv_fwd_ref(const ConvGeom& g, const T* in, const T* weight,
                  const T* bias, T* out, bool accumulate) {
  const int64_t p = g.pad(), oh = g.oh(), ow = g.ow();
  for (int64_t n = 0; n < g.n; ++n)
    for (int64_t co = 0; co < g.cout; ++co)
      for (int64_t y = 0; y < oh; ++y)
        for (int64_t x = 0; x < ow; ++x) {
          T acc = bias ? bias[co] : T(0);
          for (int64_t ci = 0; ci < g.cin; ++ci)
            for (int64_t dy = 0; dy < g.k; ++dy) {
              const int64_t iy = y * g.stride + dy * g.dilation - p;
              if (iy < 0 || iy >= g.h) continue;
              for (int64_t dx = 0; dx < g.k; ++dx) {
                const int64_t ix = x * g.stride + dx * g.dilation - p;
                if (ix < 0 || ix >= g.w) continue;
                acc += weight[((co * g.cin + ci) * g.k + dy) * g.k + dx] *
                       in[((n * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
          T& o = out[((n * g.cout + co) * oh + y) * ow + x];
          o = accumulate ? o + acc : acc;
        }
}

/// Accumulates dW (and dB when non-null) for the geometry above, given the
/// upstream gradient dout of shape (n,cout,oh,ow).
template <typename T>
void conv_bwd_weight_ref(const ConvGeom& g, const T* in, const T* dout,
                         T* dweight, T* dbias) {
  const int64_t p = g.pad(), oh = g.oh(), ow = g.ow();
  for (int64_t n = 0; n < g.n; ++n)
    for (int64_t co = 0; co < g.cout; ++co) {
      const T* dout_base = dout + (n * g.cout + co) * oh * ow;
      if (dbias)
        for (int64_t i = 0; i < oh * ow; ++i) dbias[co] += dout_base[i];
      for (int64_t ci = 0; ci < g.cin; ++ci)
        for (int64_t dy = 0; dy < g.k; ++dy)
          for (int64_t dx = 0; dx < g.k; ++dx) {
            T acc = T(0);
            for (int64_t y = 0; y < oh; ++y) {
              const int64_t iy = y * g.stride + dy * g.dilation - p;
              if (iy < 0 || iy >= g.h) continue;
              for (int64_t x = 0; x < ow; ++x) {
                const int64_t ix = x * g.stride + dx * g.dilation - p;
                if (ix < 0 || ix >= g.w) continue;
                acc += dout_base[y * ow + x] *
                       in[((n * g.cin + ci) * g.h + iy) * g.w + ix];
              }
            }
            dweight[((co * g.cin + ci) * g.k + dy) * g.k + dx] += acc;
          }
    }
}

// Optimized float implementations (src/kernels.cpp). They dispatch to an
// AVX-512 register-tiled path for stride-1 convolutions when available and
// otherwise to a cache-friendly padded-buffer loop.
void conv_fwd_fast(const ConvGeom& g, const float* in, const float* weight,
                   const float* bias, float* out, bool accumulate);
void conv_bwd_weight_fast(const ConvGeom& g, const float* in,
                          const float* dout, float* dweight, float* dbias);

template <typename T>
void conv_fwd(const ConvGeom& g, const T* in, const T* weight, const T* bias,
              T* out, bool accumulate = false) {
  if constexpr (std::is_same_v<T, float>)
    conv_fwd_fast(g, in, weight, bias, out, accumulate);
  else
    conv_fwd_ref(g, in, weight, bias, out, accumulate);
}

/// Transposed-convolution forward for stride 2: out (n,cout,2h,2w) from
/// in (n,cin,h,w) and weight (cin,cout,k,k), same-padding, odd k.
void conv_tr_fwd_fast(int64_t n, int64_t cin, int64_t cout, int64_t h,
                      int64_t w, int64_t k, const float* in,
                      const float* weight, const float* bias, float* out);

template <typename T>
void conv_bwd_weight(const ConvGeom& g, const T* in, const T* dout,
                     T* dweight, T* dbias) {
  if constexpr (std::is_same_v<T, float>)
    conv_bwd_weight_fast(g, in, dout, dweight, dbias);
  else
    conv_bwd_weight_ref(g, in, dout, dweight, dbias);
}

/// Transposed-convolution forward: spreads the input on the stride lattice
/// and convolves with the flipped weight; the float stride-2 path avoids
/// materializing the lattice zeros.
template <typename T>
void conv_tr_fwd(int64_t n, int64_t cin, int64_t cout, int64_t h, int64_t w,
                 int64_t k, int64_t stride, const T* in, const T* weight,
                 const T* bias, T* out);

/// weight[cout][cin][k][k] -> flipped[cin][cout][k][k] with both kernel axes
/// reversed; turns the input-gradient of a convolution into a convolution.
template <typename T>
std::vector<T> flip_swap_weight(const T* weight, int64_t cout, int64_t cin,
                                int64_t k) {
  std::vector<T> out(static_cast<size_t>(cout * cin * k * k));
  for (int64_t co = 0; co < cout; ++co)
    for (int64_t ci = 0; ci < cin; ++ci)
      for (int64_t dy = 0; dy < k; ++dy)
        for (int64_t dx = 0; dx < k; ++dx)
          out[((ci * cout + co) * k + dy) * k + dx] =
              weight[((co * cin + ci) * k + (k - 1 - dy)) * k + (k - 1 - dx)];
  return out;
}

/// Spreads src (n,c,h,w) onto a stride-spaced lattice in a zero image of
/// spatial size (out_h, out_w); src[y][x] lands at (y*stride, x*stride).
template <typename T>
std::vector<T> zero_stuff(const T* src, int64_t n, int64_t c, int64_t h,
                          int64_t w, int64_t stride, int64_t out_h,
                          int64_t out_w) {
  std::vector<T> out(static_cast<size_t>(n * c * out_h * out_w), T(0));
  for (int64_t i = 0; i < n * c; ++i)
    for (int64_t y = 0; y < h && y * stride < out_h; ++y) {
      const T* s = src + (i * h + y) * w;
      T* d = out.data() + (i * out_h + y * stride) * out_w;
      for (int64_t x = 0; x < w && x * stride < out_w; ++x)
        d[x * stride] = s[x];
    }
  return out;
}

template <typename T>
void conv_tr_fwd(int64_t n, int64_t cin, int64_t cout, int64_t h, int64_t w,
                 int64_t k, int64_t stride, const T* in, const T* weight,
                 const T* bias, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    if (stride == 2) {
      conv_tr_fwd_fast(n, cin, cout, h, w, k, in, weight, bias, out);
      return;
    }
  }
  const int64_t oh = stride * h, ow = stride * w;
  auto stuffed = zero_stuff(in, n, cin, h, w, stride, oh, ow);
  auto wf = flip_swap_weight(weight, cin, cout, k);
  ConvGeom gf{n, cin, oh, ow, cout, k, 1, 1};
  conv_fwd<T>(gf, stuffed.data(), wf.data(), bias, out);
}

}  // namespace aggfov::kern
