#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "aggfov/kernels.hpp"

using namespace aggfov::kern;

namespace {

std::vector<float> randu(size_t n, std::mt19937_64& rng) {
  std::vector<float> v(n);
  for (auto& x : v)
    x = static_cast<float>((rng() >> 11) * (2.0 / 9007199254740992.0) - 1.0);
  return v;
}

void check_fwd_matches_ref(const ConvGeom& g, std::mt19937_64& rng,
                           bool accumulate) {
  auto in = randu(static_cast<size_t>(g.n * g.cin * g.h * g.w), rng);
  auto w = randu(static_cast<size_t>(g.cout * g.cin * g.k * g.k), rng);
  auto b = randu(static_cast<size_t>(g.cout), rng);
  const size_t osz = static_cast<size_t>(g.n * g.cout * g.oh() * g.ow());
  auto seed_out = randu(osz, rng);
  auto out_ref = seed_out, out_fast = seed_out;
  conv_fwd_ref(g, in.data(), w.data(), b.data(), out_ref.data(), accumulate);
  conv_fwd_fast(g, in.data(), w.data(), b.data(), out_fast.data(), accumulate);
  for (size_t i = 0; i < osz; ++i)
    CHECK(out_fast[i] == doctest::Approx(out_ref[i]).epsilon(1e-4));
}

void check_bwd_weight_matches_ref(const ConvGeom& g, std::mt19937_64& rng) {
  auto in = randu(static_cast<size_t>(g.n * g.cin * g.h * g.w), rng);
  auto dout = randu(static_cast<size_t>(g.n * g.cout * g.oh() * g.ow()), rng);
  const size_t wsz = static_cast<size_t>(g.cout * g.cin * g.k * g.k);
  std::vector<float> dw_ref(wsz, 0.5f), dw_fast(wsz, 0.5f);
  std::vector<float> db_ref(g.cout, 0.25f), db_fast(g.cout, 0.25f);
  conv_bwd_weight_ref(g, in.data(), dout.data(), dw_ref.data(), db_ref.data());
  conv_bwd_weight_fast(g, in.data(), dout.data(), dw_fast.data(),
                       db_fast.data());
  for (size_t i = 0; i < wsz; ++i)
    CHECK(dw_fast[i] == doctest::Approx(dw_ref[i]).epsilon(2e-4));
  for (int64_t i = 0; i < g.cout; ++i)
    CHECK(db_fast[i] == doctest::Approx(db_ref[i]).epsilon(2e-4));
}

}  // namespace

TEST_CASE("fast forward matches reference across geometries") {
  std::mt19937_64 rng(1234);
  const ConvGeom geoms[] = {
      {1, 1, 5, 5, 1, 3, 1, 1},    {2, 3, 8, 10, 5, 3, 1, 1},
      {1, 4, 9, 13, 7, 5, 1, 2},   {2, 2, 16, 16, 3, 11, 1, 3},
      {1, 3, 12, 20, 6, 11, 1, 1}, {2, 4, 8, 8, 4, 3, 2, 1},
      {1, 2, 16, 24, 5, 5, 2, 1},  {1, 1, 33, 33, 1, 11, 1, 3},
      {1, 6, 6, 80, 4, 7, 1, 2},   {1, 3, 10, 37, 2, 9, 1, 3},
  };
  for (const auto& g : geoms) {
    CAPTURE(g.h);
    CAPTURE(g.w);
    CAPTURE(g.k);
    CAPTURE(g.stride);
    check_fwd_matches_ref(g, rng, false);
    check_fwd_matches_ref(g, rng, true);
  }
}

TEST_CASE("fast weight gradient matches reference across geometries") {
  std::mt19937_64 rng(99);
  const ConvGeom geoms[] = {
      {1, 1, 5, 5, 1, 3, 1, 1},   {2, 3, 8, 10, 5, 3, 1, 1},
      {1, 4, 9, 13, 7, 5, 1, 2},  {2, 2, 16, 16, 3, 11, 1, 3},
      {2, 4, 8, 8, 4, 3, 2, 1},   {1, 2, 16, 24, 5, 5, 2, 1},
      {1, 6, 6, 80, 4, 7, 1, 2},  {1, 3, 10, 37, 2, 9, 1, 3},
      {1, 2, 20, 20, 3, 11, 2, 1},
  };
  for (const auto& g : geoms) {
    CAPTURE(g.h);
    CAPTURE(g.w);
    CAPTURE(g.k);
    CAPTURE(g.stride);
    check_bwd_weight_matches_ref(g, rng);
  }
}

TEST_CASE("zero_stuff places values on the stride lattice") {
  std::vector<float> src = {1, 2, 3, 4};
  auto out = zero_stuff(src.data(), 1, 1, 2, 2, 2, 4, 4);
  REQUIRE(out.size() == 16);
  CHECK(out[0] == 1);
  CHECK(out[2] == 2);
  CHECK(out[8] == 3);
  CHECK(out[10] == 4);
  float total = 0;
  for (float v : out) total += v;
  CHECK(total == 10);
}

TEST_CASE("flip_swap_weight reverses both kernel axes and swaps channels") {
  // weight[1][2][2x2... use k=3 with distinct entries
  std::vector<float> w(2 * 1 * 9);
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(i);
  auto f = flip_swap_weight(w.data(), 2, 1, 3);
  // f[ci=0][co][dy][dx] = w[co][0][2-dy][2-dx]
  CHECK(f[(0 * 2 + 0) * 9 + 0] == w[0 * 9 + 8]);
  CHECK(f[(0 * 2 + 1) * 9 + 0] == w[1 * 9 + 8]);
  CHECK(f[(0 * 2 + 0) * 9 + 4] == w[0 * 9 + 4]);
  CHECK(f[(0 * 2 + 1) * 9 + 8] == w[1 * 9 + 0]);
}
