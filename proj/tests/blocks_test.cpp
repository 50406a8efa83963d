#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "aggfov/blocks.hpp"

using namespace aggfov;

TEST_CASE("effective receptive field and parameter savings") {
  CHECK(effective_receptive_field(3, 1) == 3);
  CHECK(effective_receptive_field(11, 3) == 31);
  CHECK(effective_receptive_field(9, 3) == 25);
  CHECK(param_savings(11, 3) == doctest::Approx(1.0 - 121.0 / 961.0));
  CHECK(param_savings(3, 1) == doctest::Approx(0.0));
  CHECK(param_savings(5, 2) == doctest::Approx(1.0 - 25.0 / 81.0));
}

TEST_CASE("AggConv output shape and parameter count") {
  std::mt19937_64 rng(7);
  AggConv<float> agg(/*cin=*/1, /*d=*/48, /*stride=*/1, rng);
  Tensor<float> x = Tensor<float>::filled({1, 1, 64, 80}, 0.25f);
  Tensor<float> y = agg(x, BnMode::eval);
  CHECK(y.shape() == Shape{1, 48, 64, 80});

  // conv weights + biases, excluding batch-norm affine:
  // (9+121+25+49+81+121) * 1 * 8 + 48 = 3296
  int64_t nconv = 0;
  StateVisitor<float> v{
      [&](const std::string& name, Tensor<float>& t) {
        if (name.find(".bn.") == std::string::npos) nconv += t.numel();
      },
      [](const std::string&, std::vector<float>&) {}};
  agg.visit("agg", v);
  CHECK(nconv == 3296);
}

TEST_CASE("AggConv rejects filter counts not divisible by 6") {
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(AggConv<float>(1, 20, 1, rng), config_error);
  CHECK_THROWS_AS(AggTrConv<float>(1, 20, 1, rng), config_error);
}

TEST_CASE("single-pixel influence footprint is 31x31 in eval mode") {
  std::mt19937_64 rng(11);
  AggConv<double> agg(1, 6, 1, rng);
  const int64_t hw = 41;  // room around a centered 31x31 footprint
  Tensor<double> zero = Tensor<double>::zeros({1, 1, hw, hw});
  Tensor<double> impulse = Tensor<double>::zeros({1, 1, hw, hw});
  impulse.data()[(hw / 2) * hw + hw / 2] = 1.0;

  NoGradGuard ng;
  Tensor<double> y0 = agg(zero, BnMode::eval);
  Tensor<double> y1 = agg(impulse, BnMode::eval);

  const int64_t lo = hw / 2 - 15, hi = hw / 2 + 15;
  bool corner_hit = true;
  for (int64_t c = 0; c < 6; ++c) {
    bool c_corner = false;
    for (int64_t yy = 0; yy < hw; ++yy)
      for (int64_t xx = 0; xx < hw; ++xx) {
        const double d = std::abs(y1.data()[(c * hw + yy) * hw + xx] -
                                  y0.data()[(c * hw + yy) * hw + xx]);
        const bool inside = yy >= lo && yy <= hi && xx >= lo && xx <= hi;
        if (!inside) CHECK(d == 0.0);
        if ((yy == lo || yy == hi) && (xx == lo || xx == hi) && d != 0.0)
          c_corner = true;
      }
    // corner taps reached only by the widest (11,3) branch
    if (c == 5) corner_hit = c_corner;
  }
  CHECK(corner_hit);
}

TEST_CASE("AggTrConv shapes: stride 1 preserves, upsample doubles") {
  std::mt19937_64 rng(3);
  AggTrConv<float> s1(/*cin=*/4, /*d=*/3, /*stride=*/1, rng);
  AggTrConv<float> up(/*cin=*/8, /*d=*/6, /*stride=*/2, rng);
  Tensor<float> a = Tensor<float>::filled({1, 4, 12, 16}, 0.5f);
  Tensor<float> b = Tensor<float>::filled({2, 8, 6, 10}, -0.25f);
  CHECK(s1(a, BnMode::eval).shape() == Shape{1, 3, 12, 16});
  CHECK(up(b, BnMode::eval).shape() == Shape{2, 6, 12, 20});
}

TEST_CASE("encoder block halves and decoder block doubles spatial dims") {
  std::mt19937_64 rng(5);
  EncoderBlock<float> enc(/*cin=*/2, /*d=*/12, rng);
  DecoderBlock<float> dec(/*cin=*/12, /*d=*/12, rng);
  std::vector<float> xv(2 * 16 * 24);
  std::mt19937_64 r2(9);
  for (auto& v : xv) v = (r2() % 1000) / 500.0f - 1.0f;
  Tensor<float> x = Tensor<float>::from_data({1, 2, 16, 24}, std::move(xv));
  Tensor<float> e = enc(x, BnMode::train);
  CHECK(e.shape() == Shape{1, 12, 8, 12});
  Tensor<float> d = dec(e, BnMode::train);
  CHECK(d.shape() == Shape{1, 12, 16, 24});
}

TEST_CASE("residual identity path when second-stage weights are zero") {
  std::mt19937_64 rng(21);
  EncoderBlock<float> enc(1, 6, rng);
  for (auto& br : enc.agg2.branches) {
    for (auto& w : br.weight.data()) w = 0.0f;
    for (auto& b : br.bias.data()) b = 0.0f;
  }
  std::vector<float> xv(10 * 12);
  std::mt19937_64 r2(33);
  for (auto& v : xv) v = (r2() % 1000) / 500.0f - 1.0f;
  Tensor<float> x = Tensor<float>::from_data({1, 1, 10, 12}, std::move(xv));

  // a2 = bn(0) + relu(a1) = relu(a1) exactly, so the block output equals
  // the downsampling conv applied to relu(a1)
  Tensor<float> r1 = relu(enc.agg1(x, BnMode::train));
  Tensor<float> expect = enc.down(r1);
  Tensor<float> got = enc(x, BnMode::train);
  REQUIRE(got.shape() == expect.shape());
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(got.data()[i] == expect.data()[i]);

  DecoderBlock<float> dec(1, 6, rng);
  for (auto& br : dec.agg2.branches) {
    for (auto& w : br.weight.data()) w = 0.0f;
    for (auto& b : br.bias.data()) b = 0.0f;
  }
  Tensor<float> t1 = relu(dec.up(x, BnMode::train));
  Tensor<float> out = dec(x, BnMode::train);
  REQUIRE(out.shape() == t1.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == t1.data()[i]);
}

TEST_CASE("visit reports stable names covering every parameter") {
  std::mt19937_64 rng(2);
  EncoderBlock<float> enc(1, 6, rng);
  std::vector<std::string> names;
  StateVisitor<float> v{
      [&](const std::string& n, Tensor<float>&) { names.push_back(n); },
      [&](const std::string& n, std::vector<float>&) { names.push_back(n); }};
  enc.visit("enc1", v);
  // 2 aggconvs * (6 branches * 2 + bn 4) + down 2 = 34
  CHECK(names.size() == 34);
  CHECK(std::count(names.begin(), names.end(), "enc1.agg1.k11d3.weight") == 1);
  CHECK(std::count(names.begin(), names.end(), "enc1.agg2.bn.running_var") ==
        1);
  CHECK(std::count(names.begin(), names.end(), "enc1.down.bias") == 1);
}
