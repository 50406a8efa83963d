#pragma once

#include <cmath>
#include <vector>

#include "aggfov/ops.hpp"

namespace aggfov {

/// Weights of the training objective: total = rmse + lambda * smoothness,
/// with delta the Huber threshold inside the smoothness term.
template <typename T>
struct LossConfig {
  T lambda = T(50);
  T delta = T(0.001);

  void validate() const {
    if (!(lambda >= T(0)))
      throw config_error("loss lambda must be non-negative");
    if (!(delta > T(0))) throw config_error("loss delta must be positive");
  }
};

/// Per-image root-mean-squared error, averaged over the batch. A tiny
/// epsilon inside the square root keeps the derivative finite when an image
/// is reconstructed exactly.
template <typename T>
Tensor<T> rmse_loss(const Tensor<T>& hal, const Tensor<T>& gt) {
  Tensor<T> d = sub(hal, gt);  // checks matching shapes
  Tensor<T> per_image = reduce_mean(mul(d, d), Reduce::per_image);
  Tensor<T> r = sqrt_(add_scalar(per_image, T(1e-12)));
  return reduce_mean(r, Reduce::all);
}

/// Edge-aware smoothness: mean over every gradient entry (both directions,
/// all channels) of huber(grad hal) * exp(-huber(grad gt)), so hallucinated
/// gradients are penalized except where the ground truth itself has edges.
template <typename T>
Tensor<T> smoothness_loss(const Tensor<T>& hal, const Tensor<T>& gt,
                          const LossConfig<T>& cfg) {
  cfg.validate();
  if (!(hal.shape() == gt.shape()))
    throw shape_error("smoothness_loss shape mismatch: " + hal.shape().str() +
                      " vs " + gt.shape().str());
  Tensor<T> ph = huber(image_gradient(hal), cfg.delta);
  Tensor<T> wgt =
      exp_(scalar_mul(huber(image_gradient(gt), cfg.delta), T(-1)));
  return reduce_mean(mul(ph, wgt), Reduce::all);
}

/// Training objective: rmse + lambda * smoothness. With lambda = 0 the
/// smoothness term is skipped entirely, so the result equals rmse_loss
/// bit for bit.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& hal, const Tensor<T>& gt,
                     const LossConfig<T>& cfg) {
  cfg.validate();
  Tensor<T> r = rmse_loss(hal, gt);
  if (cfg.lambda == T(0)) return r;
  return add(r, scalar_mul(smoothness_loss(hal, gt, cfg), cfg.lambda));
}

/// Mean absolute pixel difference between two image collections (images in
/// 0-255 scale): mean over all images, pixels, and channels of |p - p_ref|.
template <typename T>
double mean_abs_pixel_diff(const std::vector<Tensor<T>>& hal,
                           const std::vector<Tensor<T>>& gt) {
  if (hal.empty()) throw config_error("mean_abs_pixel_diff: empty image set");
  if (hal.size() != gt.size())
    throw shape_error("mean_abs_pixel_diff: collection sizes differ");
  double sum = 0.0;
  int64_t count = 0;
  for (size_t i = 0; i < hal.size(); ++i) {
    if (!(hal[i].shape() == gt[i].shape()))
      throw shape_error("mean_abs_pixel_diff shape mismatch at image " +
                        std::to_string(i) + ": " + hal[i].shape().str() +
                        " vs " + gt[i].shape().str());
    const T* a = hal[i].data().data();
    const T* b = gt[i].data().data();
    const int64_t n = hal[i].numel();
    for (int64_t j = 0; j < n; ++j)
      sum += std::abs(static_cast<double>(a[j]) - static_cast<double>(b[j]));
    count += n;
  }
  return sum / static_cast<double>(count);
}

}  // namespace aggfov
