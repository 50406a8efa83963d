#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "aggfov/tensor.hpp"

namespace aggfov {

/// Compares the tape gradient of scalar-valued f at x against central finite
/// differences. Returns the max relative error over the checked coordinates
/// (all of them by default; a subset when max_coords limits the sweep).
/// Meaningful only at 64-bit precision.
inline double gradcheck(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x0, double h = 1e-6, int64_t max_coords = -1,
    uint64_t pick_seed = 17) {
  Tensor<double> x = x0.detach_copy();
  x.set_requires_grad(true);

  Tensor<double> loss = f(x);
  loss.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<int64_t> coords(static_cast<size_t>(x.numel()));
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (max_coords > 0 && max_coords < x.numel()) {
    std::mt19937_64 rng(pick_seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<size_t>(max_coords));
  }

  double max_rel = 0.0;
  for (int64_t i : coords) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f(x).item();
    x.data()[i] = orig - h;
    const double fm = f(x).item();
    x.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace aggfov
