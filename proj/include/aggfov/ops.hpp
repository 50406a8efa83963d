#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "aggfov/kernels.hpp"
#include "aggfov/tensor.hpp"

namespace aggfov {

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(TensorNode<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from_data(shape, std::move(data));
  bool rg = false;
  if (NoGradGuard::grad_enabled())
    for (const auto& in : inputs) rg = rg || in.requires_grad();
  if (rg) {
    out.set_requires_grad(true);
    auto node = out.node();
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  if (debug_checks()) {
    for (T v : out.data())
      if (!std::isfinite(v))
        throw numeric_error("non-finite value in op output " + shape.str());
  }
  return out;
}

template <typename T>
void accumulate_into(TensorNode<T>& dst, const T* src) {
  dst.ensure_grad();
  T* g = dst.grad.data();
  const size_t n = dst.data.size();
  for (size_t i = 0; i < n; ++i) g[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int64_t stride, int64_t dilation) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0)
    throw config_error("conv2d kernel must be odd and square, got " +
                       ws.str());
  if (ws.c != xs.c)
    throw shape_error("conv2d channel mismatch: input " + xs.str() +
                      " vs weight " + ws.str());
  if (bias.shape().numel() != ws.n)
    throw shape_error("conv2d bias length must equal output channels");
  if (stride < 1 || dilation < 1)
    throw config_error("conv2d stride and dilation must be positive");

  kern::ConvGeom g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, stride, dilation};
  Shape os{g.n, g.cout, g.oh(), g.ow()};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  kern::conv_fwd(g, input.data().data(), weight.data().data(),
                 bias.data().data(), out.data());

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return detail::make_op<T>(
      os, std::move(out), {input, weight, bias},
      [g, xn, wn, bn](TensorNode<T>& node) {
        const T* dout = node.grad.data();
        if (wn->requires_grad || bn->requires_grad) {
          std::vector<T> wsink;
          T* dw;
          if (wn->requires_grad) {
            wn->ensure_grad();
            dw = wn->grad.data();
          } else {
            wsink.assign(wn->data.size(), T(0));
            dw = wsink.data();
          }
          if (bn->requires_grad) bn->ensure_grad();
          kern::conv_bwd_weight(g, xn->data.data(), dout, dw,
                                bn->requires_grad ? bn->grad.data() : nullptr);
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          std::vector<T> stuffed;
          const T* src = dout;
          if (g.stride != 1) {
            stuffed = kern::zero_stuff(dout, g.n, g.cout, g.oh(), g.ow(),
                                       g.stride, g.h, g.w);
            src = stuffed.data();
          }
          auto wf = kern::flip_swap_weight(wn->data.data(), g.cout, g.cin, g.k);
          kern::ConvGeom gi{g.n, g.cout, g.h, g.w, g.cin, g.k, 1, g.dilation};
          kern::conv_fwd<T>(gi, src, wf.data(), nullptr, xn->grad.data(),
                            /*accumulate=*/true);
        }
      });
}

// stride "0.5" upsampling: adjoint of a same-padded stride-s convolution.
// weight layout (cin, cout, k, k); output is exactly (stride*H, stride*W).
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, int64_t stride) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0)
    throw config_error("conv2d_transpose kernel must be odd and square");
  if (ws.n != xs.c)
    throw shape_error("conv2d_transpose channel mismatch: input " + xs.str() +
                      " vs weight " + ws.str());
  if (bias.shape().numel() != ws.c)
    throw shape_error("conv2d_transpose bias length must equal output channels");
  if (stride < 1) throw config_error("conv2d_transpose stride must be positive");

  const int64_t cin = xs.c, cout = ws.c, k = ws.h;
  const int64_t oh = stride * xs.h, ow = stride * xs.w;
  Shape os{xs.n, cout, oh, ow};

  std::vector<T> out(static_cast<size_t>(os.numel()));
  kern::conv_tr_fwd<T>(xs.n, cin, cout, xs.h, xs.w, k, stride,
                       input.data().data(), weight.data().data(),
                       bias.data().data(), out.data());

  // the paired forward convolution this op is the adjoint of
  kern::ConvGeom ga{xs.n, cout, oh, ow, cin, k, stride, 1};

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return detail::make_op<T>(
      os, std::move(out), {input, weight, bias},
      [ga, xn, wn, bn](TensorNode<T>& node) {
        const T* dout = node.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
          kern::conv_fwd<T>(ga, dout, wn->data.data(), nullptr,
                            xn->grad.data(), /*accumulate=*/true);
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kern::conv_bwd_weight<T>(ga, dout, xn->data.data(), wn->grad.data(),
                                   nullptr);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          const int64_t per = ga.h * ga.w;
          for (int64_t n = 0; n < ga.n; ++n)
            for (int64_t co = 0; co < ga.cin; ++co) {
              T s = T(0);
              const T* d = dout + (n * ga.cin + co) * per;
              for (int64_t i = 0; i < per; ++i) s += d[i];
              bn->grad[co] += s;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// concatenation along channels

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.size() < 2)
    throw shape_error("concat_channels requires at least two inputs");
  const Shape& s0 = inputs[0].shape();
  int64_t ctotal = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      throw shape_error("concat_channels spatial/batch mismatch: " + s.str() +
                        " vs " + s0.str());
    ctotal += s.c;
  }
  Shape os{s0.n, ctotal, s0.h, s0.w};
  std::vector<T> out(static_cast<size_t>(os.numel()));
  const int64_t plane = s0.h * s0.w;
  int64_t coff = 0;
  for (const auto& t : inputs) {
    const int64_t c = t.shape().c;
    for (int64_t n = 0; n < s0.n; ++n)
      std::copy_n(t.data().data() + n * c * plane, c * plane,
                  out.data() + (n * ctotal + coff) * plane);
    coff += c;
  }

  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  for (const auto& t : inputs) nodes.push_back(t.node());
  return detail::make_op<T>(
      os, std::move(out), inputs, [nodes, ctotal, plane](TensorNode<T>& node) {
        const int64_t n_batch = node.shape.n;
        int64_t coff = 0;
        for (auto& pn : nodes) {
          const int64_t c = pn->shape.c;
          if (pn->requires_grad) {
            pn->ensure_grad();
            for (int64_t n = 0; n < n_batch; ++n) {
              const T* src = node.grad.data() + (n * ctotal + coff) * plane;
              T* dst = pn->grad.data() + n * c * plane;
              for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
            }
          }
          coff += c;
        }
      });
}

// ---------------------------------------------------------------------------
// batch normalization

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean, running_var;
  // statistics of the most recent train-mode forward, before momentum
  // blending (the trainer aggregates these across workers)
  std::vector<T> batch_mean, batch_var;

  explicit BatchNormState(int64_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

enum class BnMode { train, eval };

// Train mode normalizes each sample independently over its spatial extent
// (per channel), so a worker's forward never depends on its shard mates;
// eval mode applies the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     BnMode mode, T momentum = T(0.9), T eps = T(1e-5)) {
  const Shape& xs = input.shape();
  if (gamma.shape().numel() != xs.c || beta.shape().numel() != xs.c)
    throw shape_error("batch_norm parameter length must match channels");
  if (static_cast<int64_t>(state.running_mean.size()) != xs.c)
    throw shape_error("batch_norm state length must match channels");
  if (xs.n == 0 || xs.numel() == 0)
    throw shape_error("batch_norm on an empty batch");

  const int64_t plane = xs.h * xs.w;
  const T* x = input.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  std::vector<T> out(static_cast<size_t>(xs.numel()));
  // per (n,c) normalization constants, saved for backward
  std::vector<T> mean, inv_std;

  if (mode == BnMode::train) {
    mean.resize(static_cast<size_t>(xs.n * xs.c));
    inv_std.resize(static_cast<size_t>(xs.n * xs.c));
    state.batch_mean.assign(static_cast<size_t>(xs.c), T(0));
    state.batch_var.assign(static_cast<size_t>(xs.c), T(0));
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        const T* p = x + (n * xs.c + c) * plane;
        T mu = T(0);
        for (int64_t i = 0; i < plane; ++i) mu += p[i];
        mu /= T(plane);
        T var = T(0);
        for (int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
        var /= T(plane);
        const T is = T(1) / std::sqrt(var + eps);
        mean[n * xs.c + c] = mu;
        inv_std[n * xs.c + c] = is;
        state.batch_mean[c] += mu / T(xs.n);
        state.batch_var[c] += var / T(xs.n);
        T* o = out.data() + (n * xs.c + c) * plane;
        for (int64_t i = 0; i < plane; ++i)
          o[i] = gm[c] * (p[i] - mu) * is + bt[c];
      }
    for (int64_t c = 0; c < xs.c; ++c) {
      state.running_mean[c] =
          momentum * state.running_mean[c] + (T(1) - momentum) * state.batch_mean[c];
      state.running_var[c] =
          momentum * state.running_var[c] + (T(1) - momentum) * state.batch_var[c];
    }
  } else {
    for (int64_t n = 0; n < xs.n; ++n)
      for (int64_t c = 0; c < xs.c; ++c) {
        const T* p = x + (n * xs.c + c) * plane;
        T* o = out.data() + (n * xs.c + c) * plane;
        const T is = T(1) / std::sqrt(state.running_var[c] + eps);
        for (int64_t i = 0; i < plane; ++i)
          o[i] = gm[c] * (p[i] - state.running_mean[c]) * is + bt[c];
      }
  }

  auto xn = input.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  std::vector<T> run_mean = state.running_mean;
  std::vector<T> run_var = state.running_var;
  const bool train = (mode == BnMode::train);
  return detail::make_op<T>(
      xs, std::move(out), {input, gamma, beta},
      [xn, gn, bn, mean = std::move(mean), inv_std = std::move(inv_std),
       run_mean = std::move(run_mean), run_var = std::move(run_var), train,
       eps, plane](TensorNode<T>& node) {
        const Shape& xs = xn->shape;
        const T* dy = node.grad.data();
        const T* x = xn->data.data();
        const T* gm = gn->data.data();
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (int64_t n = 0; n < xs.n; ++n)
          for (int64_t c = 0; c < xs.c; ++c) {
            const int64_t base = (n * xs.c + c) * plane;
            const T mu = train ? mean[n * xs.c + c] : run_mean[c];
            const T is = train ? inv_std[n * xs.c + c]
                               : T(1) / std::sqrt(run_var[c] + eps);
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (int64_t i = 0; i < plane; ++i) {
              const T xhat = (x[base + i] - mu) * is;
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
            if (gn->requires_grad) gn->grad[c] += sum_dy_xhat;
            if (bn->requires_grad) bn->grad[c] += sum_dy;
            if (xn->requires_grad) {
              T* dx = xn->grad.data() + base;
              const T scale = gm[c] * is;
              if (train) {
                const T m_dy = sum_dy / T(plane);
                const T m_dyx = sum_dy_xhat / T(plane);
                for (int64_t i = 0; i < plane; ++i) {
                  const T xhat = (x[base + i] - mu) * is;
                  dx[i] += scale * (dy[base + i] - m_dy - xhat * m_dyx);
                }
              } else {
                for (int64_t i = 0; i < plane; ++i)
                  dx[i] += scale * dy[base + i];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& input, FwdFn f, BwdFn df) {
  const T* x = input.data().data();
  std::vector<T> out(static_cast<size_t>(input.numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  auto xn = input.node();
  return detail::make_op<T>(input.shape(), std::move(out), {input},
                            [xn, df](TensorNode<T>& node) {
                              if (!xn->requires_grad) return;
                              xn->ensure_grad();
                              const T* x = xn->data.data();
                              const T* y = node.data.data();
                              const T* dy = node.grad.data();
                              T* dx = xn->grad.data();
                              for (size_t i = 0; i < node.data.size(); ++i)
                                dx[i] += dy[i] * df(x[i], y[i]);
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp_(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> abs_(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt_(const Tensor<T>& x) {
  return unary_op(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
  return unary_op(
      x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary_op(
      x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// Huber penalty: quadratic inside |x| <= delta, linear outside; C1 at the
/// threshold.
template <typename T>
Tensor<T> huber(const Tensor<T>& x, T delta) {
  if (!(delta > T(0))) throw config_error("huber delta must be positive");
  return unary_op(
      x,
      [delta](T v) {
        const T a = std::abs(v);
        return a <= delta ? T(0.5) * v * v : delta * (a - T(0.5) * delta);
      },
      [delta](T v, T) {
        const T a = std::abs(v);
        return a <= delta ? v : (v > T(0) ? delta : -delta);
      });
}

template <typename T, typename Fn>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Fn f,
                    std::function<void(TensorNode<T>&, TensorNode<T>&,
                                       TensorNode<T>&)> bwd,
                    const char* name) {
  if (!(a.shape() == b.shape()))
    throw shape_error(std::string(name) + " shape mismatch: " +
                      a.shape().str() + " vs " + b.shape().str());
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<T> out(static_cast<size_t>(a.numel()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(pa[i], pb[i]);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op<T>(a.shape(), std::move(out), {a, b},
                            [an, bn, bwd](TensorNode<T>& node) {
                              bwd(node, *an, *bn);
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x + y; },
      [](TensorNode<T>& node, TensorNode<T>& an, TensorNode<T>& bn) {
        if (an.requires_grad) detail::accumulate_into(an, node.grad.data());
        if (bn.requires_grad) detail::accumulate_into(bn, node.grad.data());
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x - y; },
      [](TensorNode<T>& node, TensorNode<T>& an, TensorNode<T>& bn) {
        if (an.requires_grad) detail::accumulate_into(an, node.grad.data());
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (size_t i = 0; i < node.grad.size(); ++i)
            bn.grad[i] -= node.grad[i];
        }
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x * y; },
      [](TensorNode<T>& node, TensorNode<T>& an, TensorNode<T>& bn) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (size_t i = 0; i < node.grad.size(); ++i)
            an.grad[i] += node.grad[i] * bn.data[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (size_t i = 0; i < node.grad.size(); ++i)
            bn.grad[i] += node.grad[i] * an.data[i];
        }
      },
      "mul");
}

// ---------------------------------------------------------------------------
// reductions

enum class Reduce { all, per_image };

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, Reduce over) {
  const Shape& xs = x.shape();
  const int64_t group = over == Reduce::all ? xs.numel() : xs.c * xs.h * xs.w;
  const int64_t ngroups = over == Reduce::all ? 1 : xs.n;
  std::vector<T> out(static_cast<size_t>(ngroups), T(0));
  const T* p = x.data().data();
  for (int64_t g = 0; g < ngroups; ++g)
    for (int64_t i = 0; i < group; ++i) out[g] += p[g * group + i];
  Shape os = over == Reduce::all ? scalar_shape() : Shape{xs.n, 1, 1, 1};
  auto xn = x.node();
  return detail::make_op<T>(os, std::move(out), {x},
                            [xn, group, ngroups](TensorNode<T>& node) {
                              if (!xn->requires_grad) return;
                              xn->ensure_grad();
                              for (int64_t g = 0; g < ngroups; ++g) {
                                const T dy = node.grad[g];
                                T* dx = xn->grad.data() + g * group;
                                for (int64_t i = 0; i < group; ++i) dx[i] += dy;
                              }
                            });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, Reduce over) {
  const Shape& xs = x.shape();
  const int64_t group = over == Reduce::all ? xs.numel() : xs.c * xs.h * xs.w;
  Tensor<T> s = reduce_sum(x, over);
  return scalar_mul(s, T(1) / T(group));
}

// ---------------------------------------------------------------------------
// image gradients (forward differences, zero last column/row)

template <typename T>
Tensor<T> image_gradient(const Tensor<T>& img) {
  const Shape& s = img.shape();
  Shape os{s.n, 2 * s.c, s.h, s.w};
  std::vector<T> out(static_cast<size_t>(os.numel()), T(0));
  const T* p = img.data().data();
  const int64_t plane = s.h * s.w;
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      const T* src = p + (n * s.c + c) * plane;
      T* gx = out.data() + (n * 2 * s.c + c) * plane;
      T* gy = out.data() + (n * 2 * s.c + s.c + c) * plane;
      for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x + 1 < s.w; ++x)
          gx[y * s.w + x] = src[y * s.w + x + 1] - src[y * s.w + x];
      for (int64_t y = 0; y + 1 < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x)
          gy[y * s.w + x] = src[(y + 1) * s.w + x] - src[y * s.w + x];
    }
  auto xn = img.node();
  return detail::make_op<T>(
      os, std::move(out), {img}, [xn, plane](TensorNode<T>& node) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const Shape& s = xn->shape;
        for (int64_t n = 0; n < s.n; ++n)
          for (int64_t c = 0; c < s.c; ++c) {
            const T* gx = node.grad.data() + (n * 2 * s.c + c) * plane;
            const T* gy = node.grad.data() + (n * 2 * s.c + s.c + c) * plane;
            T* dx = xn->grad.data() + (n * s.c + c) * plane;
            for (int64_t y = 0; y < s.h; ++y)
              for (int64_t x = 0; x + 1 < s.w; ++x) {
                dx[y * s.w + x + 1] += gx[y * s.w + x];
                dx[y * s.w + x] -= gx[y * s.w + x];
              }
            for (int64_t y = 0; y + 1 < s.h; ++y)
              for (int64_t x = 0; x < s.w; ++x) {
                dx[(y + 1) * s.w + x] += gy[y * s.w + x];
                dx[y * s.w + x] -= gy[y * s.w + x];
              }
          }
      });
}

}  // namespace aggfov
