#include <doctest.h>

#include "testutil.hpp"
#include "waveden/wavelet.hpp"

using namespace waveden;
using testutil::check_gradients;
using testutil::rand_tensor;
using testutil::weighted_sum;

TEST_SUITE_BEGIN("wavelet");

TEST_CASE("all-ones block concentrates in ll") {
  Tensor<float> x = Tensor<float>::filled({1, 2, 2}, 1.0f);
  Subbands<float> s = haar_dwt(x);
  CHECK(s.ll.item() == doctest::Approx(4));
  CHECK(s.lh.item() == doctest::Approx(0));
  CHECK(s.hl.item() == doctest::Approx(0));
  CHECK(s.hh.item() == doctest::Approx(0));
}

TEST_CASE("hand-evaluated 2x2 block") {
  Tensor<float> x = Tensor<float>::from({1, 2, 2}, {1, 2, 3, 4});
  Subbands<float> s = haar_dwt(x);
  CHECK(s.ll.item() == doctest::Approx(10));
  CHECK(s.lh.item() == doctest::Approx(4));
  CHECK(s.hl.item() == doctest::Approx(2));
  CHECK(s.hh.item() == doctest::Approx(0));

  // synthesis formulas by hand: (10-4-2+0)/4 = 1, (10-4+2-0)/4 = 2, ...
  Tensor<float> back = haar_idwt(s);
  CHECK(back.at({0, 0, 0}) == doctest::Approx(1));
  CHECK(back.at({0, 0, 1}) == doctest::Approx(2));
  CHECK(back.at({0, 1, 0}) == doctest::Approx(3));
  CHECK(back.at({0, 1, 1}) == doctest::Approx(4));
}

TEST_CASE("constant input of any even size") {
  Tensor<float> x = Tensor<float>::filled({2, 6, 4}, 2.5f);
  Subbands<float> s = haar_dwt(x);
  for (float v : s.ll.data()) CHECK(v == doctest::Approx(10.0f));
  for (float v : s.lh.data()) CHECK(v == 0.0f);
  for (float v : s.hl.data()) CHECK(v == 0.0f);
  for (float v : s.hh.data()) CHECK(v == 0.0f);
}

TEST_CASE("synthesis of a pure ll impulse spreads evenly") {
  Subbands<float> s;
  s.ll = Tensor<float>::filled({1, 1, 1}, 4.0f);
  s.lh = Tensor<float>::zeros({1, 1, 1});
  s.hl = Tensor<float>::zeros({1, 1, 1});
  s.hh = Tensor<float>::zeros({1, 1, 1});
  Tensor<float> y = haar_idwt(s);
  CHECK(y.shape() == Shape{1, 2, 2});
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("zero subbands give zero output") {
  Subbands<float> s;
  s.ll = s.lh = s.hl = s.hh = Tensor<float>::zeros({3, 4, 4});
  Tensor<float> y = haar_idwt(s);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("odd extents and mismatched subbands are rejected") {
  CHECK_THROWS_AS(haar_dwt(Tensor<float>::zeros({1, 3, 4})), std::invalid_argument);
  CHECK_THROWS_AS(haar_dwt(Tensor<float>::zeros({1, 4, 5})), std::invalid_argument);
  Subbands<float> s;
  s.ll = Tensor<float>::zeros({1, 2, 2});
  s.lh = Tensor<float>::zeros({1, 2, 2});
  s.hl = Tensor<float>::zeros({1, 2, 3});
  s.hh = Tensor<float>::zeros({1, 2, 2});
  CHECK_THROWS_AS(haar_idwt(s), std::invalid_argument);
}

TEST_CASE("perfect reconstruction: exact on small integers, 1e-5 on reals") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t c = 1 + rng.uniform_int(4);
    const int64_t h = 2 * (1 + rng.uniform_int(8));
    const int64_t w = 2 * (1 + rng.uniform_int(8));
    Tensor<float> xi = Tensor<float>::zeros({c, h, w});
    for (float& v : xi.mutable_data()) v = float(rng.uniform_int(17) - 8);
    Tensor<float> back = haar_idwt(haar_dwt(xi));
    for (int64_t i = 0; i < xi.numel(); ++i)
      CHECK(back.data()[size_t(i)] == xi.data()[size_t(i)]);

    Tensor<float> xr = rand_tensor<float>({c, h, w}, rng, -1.0, 1.0);
    Tensor<float> br = haar_idwt(haar_dwt(xr));
    float max_err = 0;
    for (int64_t i = 0; i < xr.numel(); ++i)
      max_err = std::max(max_err, std::abs(br.data()[size_t(i)] - xr.data()[size_t(i)]));
    CHECK(max_err < 1e-5f);
  }
}

TEST_CASE("white noise energy lands mostly in the high-frequency subbands") {
  Rng rng(7);
  int hf_wins = 0;
  const int trials = 120;
  for (int t = 0; t < trials; ++t) {
    Tensor<float> x = Tensor<float>::zeros({1, 16, 16});
    for (float& v : x.mutable_data()) v = float(rng.normal());
    Subbands<float> s = haar_dwt(x);
    double hf = 0;
    for (float v : s.lh.data()) hf += double(v) * v;
    for (float v : s.hl.data()) hf += double(v) * v;
    for (float v : s.hh.data()) hf += double(v) * v;
    double mean_ll = 0;
    for (float v : s.ll.data()) mean_ll += v;
    mean_ll /= double(s.ll.numel());
    double ll_dev = 0;
    for (float v : s.ll.data()) ll_dev += (double(v) - mean_ll) * (double(v) - mean_ll);
    if (hf > ll_dev) ++hf_wins;
  }
  CHECK(hf_wins >= trials * 95 / 100);
}

TEST_CASE("analysis is linear") {
  Rng rng(11);
  Tensor<float> x = rand_tensor<float>({2, 8, 8}, rng);
  Tensor<float> y = rand_tensor<float>({2, 8, 8}, rng);
  const float alpha = 0.7f, beta = -1.3f;
  Subbands<float> mix = haar_dwt(add(scale(x, alpha), scale(y, beta)));
  Subbands<float> sx = haar_dwt(x);
  Subbands<float> sy = haar_dwt(y);
  auto check_band = [&](const Tensor<float>& m, const Tensor<float>& a, const Tensor<float>& b) {
    for (int64_t i = 0; i < m.numel(); ++i)
      CHECK(m.data()[size_t(i)] ==
            doctest::Approx(alpha * a.data()[size_t(i)] + beta * b.data()[size_t(i)])
                .epsilon(1e-5));
  };
  check_band(mix.ll, sx.ll, sy.ll);
  check_band(mix.lh, sx.lh, sy.lh);
  check_band(mix.hl, sx.hl, sy.hl);
  check_band(mix.hh, sx.hh, sy.hh);
}

TEST_CASE("analysis and synthesis pass the finite-difference check") {
  Rng rng(13);
  Tensor<double> x = rand_tensor<double>({2, 4, 6}, rng, -1, 1, true);
  auto fd = check_gradients({x}, [&] {
    Subbands<double> s = haar_dwt(x);
    return add(add(weighted_sum(s.ll, 1), weighted_sum(s.lh, 2)),
               add(weighted_sum(s.hl, 3), weighted_sum(s.hh, 4)));
  }, Rng(5), 8);
  CHECK(fd.max_rel_err < 1e-4);

  Tensor<double> ll = rand_tensor<double>({2, 3, 3}, rng, -1, 1, true);
  Tensor<double> lh = rand_tensor<double>({2, 3, 3}, rng, -1, 1, true);
  Tensor<double> hl = rand_tensor<double>({2, 3, 3}, rng, -1, 1, true);
  Tensor<double> hh = rand_tensor<double>({2, 3, 3}, rng, -1, 1, true);
  auto fd2 = check_gradients({ll, lh, hl, hh}, [&] {
    return weighted_sum(haar_idwt<double>({ll, lh, hl, hh}), 6);
  }, Rng(6), 6);
  CHECK(fd2.max_rel_err < 1e-4);
}

TEST_SUITE_END();
