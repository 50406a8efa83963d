#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "aggfov/blocks.hpp"
#include "aggfov/gradcheck.hpp"
#include "aggfov/loss.hpp"

using namespace aggfov;

namespace {

template <typename T>
Tensor<T> rand_tensor(Shape s, uint64_t seed, T lo = T(0), T hi = T(1)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(static_cast<size_t>(s.numel()));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>::from_data(s, std::move(v));
}

}  // namespace

TEST_CASE("huber analytic values") {
  auto x = Tensor<double>::from_data({1, 1, 1, 3}, {0.0, 0.0005, 0.1});
  Tensor<double> y = huber(x, 0.001);
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(1.25e-7).epsilon(1e-9));
  CHECK(y.data()[2] == doctest::Approx(9.95e-5).epsilon(1e-9));
  CHECK_THROWS_AS(huber(x, 0.0), config_error);
  CHECK_THROWS_AS(huber(x, -1.0), config_error);
}

TEST_CASE("rmse of a perfect reconstruction is zero (up to sqrt-eps)") {
  Tensor<float> a = rand_tensor<float>({2, 3, 8, 8}, 1);
  CHECK(rmse_loss(a, a).item() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(rmse_loss(a, a).item() <= 1e-6f);
}

TEST_CASE("rmse of a uniform offset equals the offset magnitude") {
  Tensor<float> gt = rand_tensor<float>({2, 3, 8, 8}, 2);
  for (float c : {0.25f, -0.5f}) {
    Tensor<float> hal = add_scalar(gt, c);
    CHECK(rmse_loss(hal, gt).item() ==
          doctest::Approx(std::abs(c)).epsilon(1e-6));
  }
}

TEST_CASE("rmse of a single differing pixel is d/sqrt(M)") {
  Tensor<double> gt = Tensor<double>::zeros({1, 3, 8, 8});
  Tensor<double> hal = Tensor<double>::zeros({1, 3, 8, 8});
  const double d = 0.7;
  hal.data()[13] = d;
  const double M = 3 * 8 * 8;
  CHECK(rmse_loss(hal, gt).item() ==
        doctest::Approx(d / std::sqrt(M)).epsilon(1e-9));
}

TEST_CASE("rmse is symmetric in its arguments and rejects shape mismatch") {
  Tensor<float> a = rand_tensor<float>({2, 3, 4, 4}, 3);
  Tensor<float> b = rand_tensor<float>({2, 3, 4, 4}, 4);
  CHECK(rmse_loss(a, b).item() == doctest::Approx(rmse_loss(b, a).item()));
  Tensor<float> c = rand_tensor<float>({2, 3, 4, 5}, 5);
  CHECK_THROWS_AS(rmse_loss(a, c), shape_error);
}

TEST_CASE("rmse batches as the mean of per-image values") {
  Tensor<double> gt = Tensor<double>::zeros({2, 1, 2, 2});
  Tensor<double> hal = Tensor<double>::zeros({2, 1, 2, 2});
  // image 0: uniform 1 -> rmse 1; image 1: uniform 3 -> rmse 3; mean = 2
  for (int i = 0; i < 4; ++i) hal.data()[i] = 1.0;
  for (int i = 4; i < 8; ++i) hal.data()[i] = 3.0;
  CHECK(rmse_loss(hal, gt).item() == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("smoothness of any constant hallucination is exactly zero") {
  Tensor<float> gt = rand_tensor<float>({1, 3, 8, 8}, 6);
  Tensor<float> hal = Tensor<float>::filled({1, 3, 8, 8}, 0.37f);
  LossConfig<float> cfg;
  CHECK(smoothness_loss(hal, gt, cfg).item() == 0.0f);
}

TEST_CASE("smoothness single step edge against constant gt") {
  // hal has one unit step between two columns in one channel; gt constant.
  const int64_t H = 4, W = 4, C = 3;
  Tensor<double> gt = Tensor<double>::filled({1, C, H, W}, 0.5);
  Tensor<double> hal = Tensor<double>::zeros({1, C, H, W});
  for (int64_t y = 0; y < H; ++y) hal.data()[y * W + 3] = 1.0;  // channel 0
  LossConfig<double> cfg;  // delta 0.001
  // gx = 1 at (x=2) for H rows of channel 0; huber(1) = delta*(1-delta/2)
  const double hub = 0.001 * (1.0 - 0.0005);
  const double count = 1.0 * (2 * C) * H * W;
  CHECK(smoothness_loss(hal, gt, cfg).item() ==
        doctest::Approx(H * hub / count).epsilon(1e-9));
}

TEST_CASE("smoothness is non-increasing in |grad gt| (10-point sweep)") {
  const int64_t H = 6, W = 6;
  Tensor<double> hal = rand_tensor<double>({1, 3, H, W}, 7);
  LossConfig<double> cfg;
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10; ++i) {
    // gt is a horizontal ramp of increasing slope: |grad gt| grows each step
    const double slope = 0.02 * i;
    Tensor<double> gt = Tensor<double>::zeros({1, 3, H, W});
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          gt.data()[(c * H + y) * W + x] = slope * x;
    const double s = smoothness_loss(hal, gt, cfg).item();
    CHECK(s <= prev + 1e-15);
    prev = s;
  }
}

TEST_CASE("smoothness is invariant to adding a constant to hal") {
  Tensor<double> hal = rand_tensor<double>({1, 3, 6, 6}, 8);
  Tensor<double> gt = rand_tensor<double>({1, 3, 6, 6}, 9);
  LossConfig<double> cfg;
  const double a = smoothness_loss(hal, gt, cfg).item();
  const double b = smoothness_loss(add_scalar(hal, 3.25), gt, cfg).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("smoothness is not symmetric (directional weighting)") {
  // a: strong edges, b: smooth -> penalizing a's gradients against b's flat
  // weight differs from penalizing b's (zero) gradients.
  Tensor<double> a = Tensor<double>::zeros({1, 1, 4, 4});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 2; x < 4; ++x) a.data()[y * 4 + x] = 1.0;
  Tensor<double> b = Tensor<double>::filled({1, 1, 4, 4}, 0.2);
  LossConfig<double> cfg;
  const double ab = smoothness_loss(a, b, cfg).item();
  const double ba = smoothness_loss(b, a, cfg).item();
  CHECK(ab != ba);
}

TEST_CASE("total loss equals rmse exactly when lambda is zero") {
  Tensor<float> hal = rand_tensor<float>({2, 3, 8, 8}, 10);
  Tensor<float> gt = rand_tensor<float>({2, 3, 8, 8}, 11);
  LossConfig<float> cfg;
  cfg.lambda = 0.0f;
  CHECK(total_loss(hal, gt, cfg).item() == rmse_loss(hal, gt).item());
}

TEST_CASE("total loss of a perfect constant reconstruction is ~0") {
  Tensor<float> img = Tensor<float>::filled({1, 3, 8, 8}, 0.4f);
  LossConfig<float> cfg;
  CHECK(total_loss(img, img, cfg).item() <= 1e-6f);
}

TEST_CASE("total loss rejects invalid config") {
  Tensor<float> a = rand_tensor<float>({1, 3, 4, 4}, 12);
  LossConfig<float> bad;
  bad.lambda = -1.0f;
  CHECK_THROWS_AS(total_loss(a, a, bad), config_error);
  LossConfig<float> bad2;
  bad2.delta = 0.0f;
  CHECK_THROWS_AS(total_loss(a, a, bad2), config_error);
}

TEST_CASE("gradcheck: total loss wrt hal on a random 1x3x8x8 pair") {
  Tensor<double> hal = rand_tensor<double>({1, 3, 8, 8}, 13);
  Tensor<double> gt = rand_tensor<double>({1, 3, 8, 8}, 14);
  LossConfig<double> cfg;
  const double err = gradcheck(
      [&](const Tensor<double>& x) { return total_loss(x, gt, cfg); }, hal,
      1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("gradcheck: rmse and smoothness separately") {
  Tensor<double> hal = rand_tensor<double>({1, 3, 6, 6}, 15);
  Tensor<double> gt = rand_tensor<double>({1, 3, 6, 6}, 16);
  LossConfig<double> cfg;
  CHECK(gradcheck([&](const Tensor<double>& x) { return rmse_loss(x, gt); },
                  hal, 1e-6) < 1e-6);
  CHECK(gradcheck(
            [&](const Tensor<double>& x) {
              return smoothness_loss(x, gt, cfg);
            },
            hal, 1e-6) < 1e-6);
}

TEST_CASE("mean absolute pixel difference") {
  std::vector<Tensor<float>> a, b;
  for (int i = 0; i < 3; ++i) {
    a.push_back(rand_tensor<float>({1, 3, 4, 4}, 20 + i, 0.0f, 255.0f));
    b.push_back(a.back().detach_copy());
  }
  CHECK(mean_abs_pixel_diff(a, b) == doctest::Approx(0.0));
  for (auto& t : b)
    for (auto& v : t.data()) v += 5.0f;
  CHECK(mean_abs_pixel_diff(a, b) == doctest::Approx(5.0).epsilon(1e-6));

  std::vector<Tensor<float>> empty;
  CHECK_THROWS_AS(mean_abs_pixel_diff(empty, empty), config_error);
  std::vector<Tensor<float>> shorter(a.begin(), a.begin() + 2);
  CHECK_THROWS_AS(mean_abs_pixel_diff(a, shorter), shape_error);
  std::vector<Tensor<float>> wrong = b;
  wrong[1] = rand_tensor<float>({1, 3, 4, 5}, 30);
  CHECK_THROWS_AS(mean_abs_pixel_diff(a, wrong), shape_error);
}
