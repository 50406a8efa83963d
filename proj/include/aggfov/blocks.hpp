#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aggfov/ops.hpp"

namespace aggfov {

// (kernel, dilation) branch tables of the aggregated-field-of-view blocks
struct Branch {
  int64_t kernel;
  int64_t dilation;
};

inline constexpr std::array<Branch, 6> kAggConvBranches = {
    Branch{3, 1}, Branch{11, 1}, Branch{5, 2},
    Branch{7, 2}, Branch{9, 3},  Branch{11, 3}};

inline constexpr std::array<Branch, 3> kAggTrConvBranches = {
    Branch{3, 1}, Branch{7, 1}, Branch{11, 1}};

/// Span, in input pixels, of a k x k kernel dilated by d.
inline int64_t effective_receptive_field(int64_t kernel, int64_t dilation) {
  return dilation * (kernel - 1) + 1;
}

/// Fraction of weights saved versus a dense kernel covering the same span.
inline double param_savings(int64_t kernel, int64_t dilation) {
  const double erf =
      static_cast<double>(effective_receptive_field(kernel, dilation));
  return 1.0 - static_cast<double>(kernel * kernel) / (erf * erf);
}

/// Visitor over a module's named state: trainable parameters and persistent
/// (non-trainable) buffers such as normalization running statistics.
template <typename T>
struct StateVisitor {
  std::function<void(const std::string&, Tensor<T>&)> param;
  std::function<void(const std::string&, std::vector<T>&)> buffer;
  /// Optional: direct access to normalization state (the trainer uses the
  /// per-forward batch statistics when merging worker results).
  std::function<void(const std::string&, BatchNormState<T>&)> bn_state;
};

namespace detail {

template <typename T>
Tensor<T> uniform_init(Shape s, int64_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from_data(s, std::move(v), /*requires_grad=*/true);
}

inline std::string branch_name(const Branch& b) {
  return "k" + std::to_string(b.kernel) + "d" + std::to_string(b.dilation);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// plain convolution layer

template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // (cout, cin, k, k)
  Tensor<T> bias;    // (cout)
  int64_t stride = 1;
  int64_t dilation = 1;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_,
              int64_t dilation_, std::mt19937_64& rng)
      : weight(detail::uniform_init<T>({cout, cin, k, k}, cin * k * k, rng)),
        bias(Tensor<T>::zeros({1, 1, 1, cout}, /*requires_grad=*/true)),
        stride(stride_),
        dilation(dilation_) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, dilation);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    v.param(prefix + ".weight", weight);
    v.param(prefix + ".bias", bias);
  }
};

// transposed convolution layer, weight (cin, cout, k, k)
template <typename T>
struct TrConv2dLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  int64_t stride = 1;

  TrConv2dLayer() = default;
  TrConv2dLayer(int64_t cin, int64_t cout, int64_t k, int64_t stride_,
                std::mt19937_64& rng)
      : weight(detail::uniform_init<T>({cin, cout, k, k}, cin * k * k, rng)),
        bias(Tensor<T>::zeros({1, 1, 1, cout}, /*requires_grad=*/true)),
        stride(stride_) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d_transpose(x, weight, bias, stride);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    v.param(prefix + ".weight", weight);
    v.param(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;
  BatchNormState<T> state;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int64_t channels)
      : gamma(Tensor<T>::filled({1, 1, 1, channels}, T(1),
                                /*requires_grad=*/true)),
        beta(Tensor<T>::zeros({1, 1, 1, channels}, /*requires_grad=*/true)),
        state(channels) {}

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    return batch_norm(x, gamma, beta, state, mode);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    v.param(prefix + ".gamma", gamma);
    v.param(prefix + ".beta", beta);
    v.buffer(prefix + ".running_mean", state.running_mean);
    v.buffer(prefix + ".running_var", state.running_var);
    if (v.bn_state) v.bn_state(prefix, state);
  }
};

// ---------------------------------------------------------------------------
// aggregated-field-of-view blocks: parallel branches with different
// receptive fields, concatenated channel-wise and batch-normalized

template <typename T>
struct AggConv {
  std::vector<Conv2dLayer<T>> branches;  // one per kAggConvBranches entry
  BatchNormLayer<T> bn;
  int64_t out_filters = 0;

  AggConv() = default;
  AggConv(int64_t cin, int64_t d, int64_t stride, std::mt19937_64& rng)
      : bn(d), out_filters(d) {
    if (d % 6 != 0)
      throw config_error("AggConv filters must be divisible by 6, got " +
                         std::to_string(d));
    branches.reserve(kAggConvBranches.size());
    for (const Branch& b : kAggConvBranches)
      branches.emplace_back(cin, d / 6, b.kernel, stride, b.dilation, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    std::vector<Tensor<T>> outs;
    outs.reserve(branches.size());
    for (const auto& br : branches) outs.push_back(br(x));
    return bn(concat_channels(outs), mode);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    for (size_t i = 0; i < branches.size(); ++i)
      branches[i].visit(prefix + "." + detail::branch_name(kAggConvBranches[i]),
                        v);
    bn.visit(prefix + ".bn", v);
  }
};

template <typename T>
struct AggTrConv {
  std::vector<TrConv2dLayer<T>> branches;
  BatchNormLayer<T> bn;
  int64_t out_filters = 0;

  AggTrConv() = default;
  AggTrConv(int64_t cin, int64_t d, int64_t stride, std::mt19937_64& rng)
      : bn(d), out_filters(d) {
    if (d % 3 != 0)
      throw config_error("AggTrConv filters must be divisible by 3, got " +
                         std::to_string(d));
    branches.reserve(kAggTrConvBranches.size());
    for (const Branch& b : kAggTrConvBranches)
      branches.emplace_back(cin, d / 3, b.kernel, stride, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    std::vector<Tensor<T>> outs;
    outs.reserve(branches.size());
    for (const auto& br : branches) outs.push_back(br(x));
    return bn(concat_channels(outs), mode);
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    for (size_t i = 0; i < branches.size(); ++i)
      branches[i].visit(
          prefix + "." + detail::branch_name(kAggTrConvBranches[i]), v);
    bn.visit(prefix + ".bn", v);
  }
};

// ---------------------------------------------------------------------------
// encoder block: two aggregated stages with a residual connection, then a
// plain 3x3 stride-2 convolution halving the spatial dims

template <typename T>
struct EncoderBlock {
  AggConv<T> agg1, agg2;
  Conv2dLayer<T> down;
  int64_t out_filters = 0;

  EncoderBlock() = default;
  EncoderBlock(int64_t cin, int64_t d, std::mt19937_64& rng)
      : agg1(cin, d, 1, rng),
        agg2(d, d, 1, rng),
        down(d, d, 3, /*stride=*/2, /*dilation=*/1, rng),
        out_filters(d) {}

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    Tensor<T> r1 = relu(agg1(x, mode));
    Tensor<T> a2 = add(agg2(r1, mode), r1);
    return down(relu(a2));
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    agg1.visit(prefix + ".agg1", v);
    agg2.visit(prefix + ".agg2", v);
    down.visit(prefix + ".down", v);
  }
};

// decoder block: upsampling aggregated stage, then a stride-1 aggregated
// stage with a residual connection; doubles the spatial dims

template <typename T>
struct DecoderBlock {
  AggTrConv<T> up, agg2;
  int64_t out_filters = 0;

  DecoderBlock() = default;
  DecoderBlock(int64_t cin, int64_t d, std::mt19937_64& rng)
      : up(cin, d, /*stride=*/2, rng),
        agg2(d, d, /*stride=*/1, rng),
        out_filters(d) {}

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    Tensor<T> r1 = relu(up(x, mode));
    return relu(add(agg2(r1, mode), r1));
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) {
    up.visit(prefix + ".up", v);
    agg2.visit(prefix + ".agg2", v);
  }
};

}  // namespace aggfov
