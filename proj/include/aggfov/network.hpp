#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aggfov/blocks.hpp"

namespace aggfov {

/// Depth-to-RGB hallucination network: four encoder blocks (filters
/// 48/60/192/288), four decoder blocks (96/30/24/3) with channel-concat
/// skips from the three shallower encoders, and a linear 5x5 + 3x3
/// convolutional head. Input (N,1,H,W) depth, output (N,3,H,W) YUV.
template <typename T>
struct HallucinationNet {
  EncoderBlock<T> enc1, enc2, enc3, enc4;
  DecoderBlock<T> dec4, dec3, dec2, dec1;
  Conv2dLayer<T> logits, out;

  HallucinationNet() = default;

  explicit HallucinationNet(std::mt19937_64& rng)
      : enc1(1, 48, rng),
        enc2(48, 60, rng),
        enc3(60, 192, rng),
        enc4(192, 288, rng),
        dec4(288, 96, rng),
        dec3(96 + 192, 30, rng),
        dec2(30 + 60, 24, rng),
        dec1(24 + 48, 3, rng),
        logits(3, 3, 5, 1, 1, rng),
        out(3, 3, 3, 1, 1, rng) {}

  Tensor<T> forward(const Tensor<T>& depth, BnMode mode) {
    const Shape& s = depth.shape();
    if (s.c != 1)
      throw shape_error("network input must have 1 channel, got " + s.str());
    if (s.h % 16 != 0)
      throw shape_error("input height " + std::to_string(s.h) +
                        " is not divisible by 16");
    if (s.w % 16 != 0)
      throw shape_error("input width " + std::to_string(s.w) +
                        " is not divisible by 16");

    Tensor<T> e1 = enc1(depth, mode);
    Tensor<T> e2 = enc2(e1, mode);
    Tensor<T> e3 = enc3(e2, mode);
    Tensor<T> e4 = enc4(e3, mode);
    Tensor<T> d4 = dec4(e4, mode);
    Tensor<T> d3 = dec3(concat_channels<T>({d4, e3}), mode);
    Tensor<T> d2 = dec2(concat_channels<T>({d3, e2}), mode);
    Tensor<T> d1 = dec1(concat_channels<T>({d2, e1}), mode);
    return out(logits(d1));
  }

  void visit(const StateVisitor<T>& v) {
    enc1.visit("enc1", v);
    enc2.visit("enc2", v);
    enc3.visit("enc3", v);
    enc4.visit("enc4", v);
    dec4.visit("dec4", v);
    dec3.visit("dec3", v);
    dec2.visit("dec2", v);
    dec1.visit("dec1", v);
    logits.visit("logits", v);
    out.visit("out", v);
  }

  /// Trainable parameters in lexicographic name order.
  std::vector<std::pair<std::string, Tensor<T>>> params() {
    std::vector<std::pair<std::string, Tensor<T>>> ps;
    StateVisitor<T> v{
        [&](const std::string& n, Tensor<T>& t) { ps.emplace_back(n, t); },
        [](const std::string&, std::vector<T>&) {}};
    visit(v);
    std::sort(ps.begin(), ps.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return ps;
  }

  /// Persistent non-trainable buffers (normalization running statistics) in
  /// lexicographic name order.
  std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> bs;
    StateVisitor<T> v{[](const std::string&, Tensor<T>&) {},
                      [&](const std::string& n, std::vector<T>& b) {
                        bs.emplace_back(n, &b);
                      }};
    visit(v);
    std::sort(bs.begin(), bs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return bs;
  }

  /// Normalization states in visit order (stable across replicas).
  std::vector<std::pair<std::string, BatchNormState<T>*>> bn_states() {
    std::vector<std::pair<std::string, BatchNormState<T>*>> ss;
    StateVisitor<T> v{[](const std::string&, Tensor<T>&) {},
                      [](const std::string&, std::vector<T>&) {},
                      [&](const std::string& n, BatchNormState<T>& s) {
                        ss.emplace_back(n, &s);
                      }};
    visit(v);
    return ss;
  }

  int64_t count_params() {
    int64_t n = 0;
    for (auto& [name, t] : params()) n += t.numel();
    return n;
  }

  std::vector<std::pair<std::string, Shape>> list_params() {
    std::vector<std::pair<std::string, Shape>> ls;
    for (auto& [name, t] : params()) ls.emplace_back(name, t.shape());
    return ls;
  }

  /// Copies every parameter and buffer value from another network of the
  /// same architecture (used for per-worker replicas).
  void copy_state_from(HallucinationNet& src) {
    auto sp = src.params();
    auto dp = params();
    for (size_t i = 0; i < dp.size(); ++i)
      std::copy(sp[i].second.data().begin(), sp[i].second.data().end(),
                dp[i].second.data().begin());
    auto sb = src.buffers();
    auto db = buffers();
    for (size_t i = 0; i < db.size(); ++i) *db[i].second = *sb[i].second;
  }
};

template <typename T = float>
HallucinationNet<T> build_network(uint64_t seed) {
  std::mt19937_64 rng(seed);
  return HallucinationNet<T>(rng);
}

}  // namespace aggfov
