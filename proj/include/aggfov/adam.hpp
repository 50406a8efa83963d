#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aggfov/tensor.hpp"

namespace aggfov {

/// Thrown when a gradient turns non-finite; carries the parameter name so
/// the trainer can report which tensor diverged.
struct nan_gradient_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction; no weight decay, no gradient clipping.
template <typename T>
struct Adam {
  T lr = T(0.0005);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  int64_t t = 0;                   // completed steps
  std::vector<std::vector<T>> m;   // first moments, one per parameter
  std::vector<std::vector<T>> v;   // second moments

  /// One update over the parameter list (name, tensor) using each tensor's
  /// accumulated gradient. Moment slots are allocated lazily on first use.
  void step(std::vector<std::pair<std::string, Tensor<T>>>& params) {
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(static_cast<size_t>(params[i].second.numel()), T(0));
        v[i].assign(static_cast<size_t>(params[i].second.numel()), T(0));
      }
    }
    if (m.size() != params.size())
      throw config_error("adam state holds " + std::to_string(m.size()) +
                         " parameters, step got " +
                         std::to_string(params.size()));
    ++t;
    const T c1 = T(1) - std::pow(beta1, static_cast<T>(t));
    const T c2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].second;
      if (!p.has_grad() || static_cast<int64_t>(m[i].size()) != p.numel())
        throw config_error("adam: parameter " + params[i].first +
                           " has no gradient or mismatched state");
      T* pd = p.data().data();
      const T* g = p.grad().data();
      T* mi = m[i].data();
      T* vi = v[i].data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        if (!std::isfinite(g[j]))
          throw nan_gradient_error("non-finite gradient in parameter " +
                                   params[i].first + " at element " +
                                   std::to_string(j));
        mi[j] = beta1 * mi[j] + (T(1) - beta1) * g[j];
        vi[j] = beta2 * vi[j] + (T(1) - beta2) * g[j] * g[j];
        const T mhat = mi[j] / c1;
        const T vhat = vi[j] / c2;
        pd[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace aggfov
