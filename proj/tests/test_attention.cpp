#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "waveden/attention.hpp"

using namespace waveden;
using testutil::check_gradients;
using testutil::rand_tensor;
using testutil::weighted_sum;

namespace {

// Independent region labeling for the shifted layout, derived from the
// pre-shift side: a post-shift coordinate holds wrapped content iff its
// pre-shift coordinate is below the shift amount.
int region_of(int64_t post_r, int64_t post_c, int64_t h, int64_t w, int64_t s) {
  const int64_t pre_r = (post_r + s) % h;
  const int64_t pre_c = (post_c + s) % w;
  return int(pre_r < s) * 2 + int(pre_c < s);
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("window partition enumerations") {
  Rng rng(1);
  SUBCASE("8x8 with window 4 gives 4 windows of 16 tokens") {
    Tensor<float> x = rand_tensor<float>({3, 8, 8}, rng);
    Tensor<float> t = window_partition(x, 4);
    CHECK(t.shape() == Shape{4, 16, 3});
  }
  SUBCASE("window equal to the map is one window in scan order") {
    Tensor<float> x = rand_tensor<float>({2, 4, 4}, rng);
    Tensor<float> t = window_partition(x, 4);
    CHECK(t.shape() == Shape{1, 16, 2});
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t xx = 0; xx < 4; ++xx)
        for (int64_t c = 0; c < 2; ++c)
          CHECK(t.at({0, y * 4 + xx, c}) == x.at({c, y, xx}));
  }
  SUBCASE("non-divisible extents are rejected") {
    Tensor<float> x = Tensor<float>::zeros({1, 6, 6});
    CHECK_THROWS_AS(window_partition(x, 4), std::invalid_argument);
  }
}

TEST_CASE("single-token windows reduce attention to the value path") {
  Rng rng(2);
  const int64_t c = 6;
  AttentionConfig cfg{1, 2, c, 0};
  AttentionWeights<float> w = AttentionWeights<float>::create(c, 2, 1, rng.split(1));
  Tensor<float> x = rand_tensor<float>({c, 3, 3}, rng);
  Tensor<float> y = wsa(x, cfg, w);
  // expected: per site, out = x * Wv * Wo
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t cc = 0; cc < 3; ++cc)
      for (int64_t j = 0; j < c; ++j) {
        double v = 0;
        for (int64_t e = 0; e < c; ++e) {
          double ve = 0;
          for (int64_t i = 0; i < c; ++i)
            ve += double(x.at({i, r, cc})) * double(w.wv.at({i, e}));
          v += ve * double(w.wo.at({e, j}));
        }
        CHECK(double(y.at({j, r, cc})) == doctest::Approx(v).epsilon(1e-4));
      }
}

TEST_CASE("zero query weights give uniform attention over the window") {
  Rng rng(3);
  const int64_t c = 4, m = 2;
  AttentionConfig cfg{m, 1, c, 0};
  AttentionWeights<float> w = AttentionWeights<float>::create(c, 1, m, rng.split(1));
  for (float& v : w.wq.mutable_data()) v = 0.0f;  // bias table is already zero
  Tensor<float> x = rand_tensor<float>({c, 4, 4}, rng);
  Tensor<float> y = wsa(x, cfg, w);

  // expected: every token of a window carries (window mean of V) * Wo
  Tensor<float> tokens = window_partition(x, m);
  for (int64_t win = 0; win < 4; ++win) {
    std::vector<double> mean_v(size_t(c), 0.0);
    for (int64_t tok = 0; tok < m * m; ++tok)
      for (int64_t e = 0; e < c; ++e) {
        double ve = 0;
        for (int64_t i = 0; i < c; ++i)
          ve += double(tokens.at({win, tok, i})) * double(w.wv.at({i, e}));
        mean_v[size_t(e)] += ve / double(m * m);
      }
    for (int64_t j = 0; j < c; ++j) {
      double expect = 0;
      for (int64_t e = 0; e < c; ++e) expect += mean_v[size_t(e)] * double(w.wo.at({e, j}));
      const int64_t wr = win / 2, wc = win % 2;
      for (int64_t tr = 0; tr < m; ++tr)
        for (int64_t tc = 0; tc < m; ++tc)
          CHECK(double(y.at({j, wr * m + tr, wc * m + tc})) ==
                doctest::Approx(expect).epsilon(1e-4));
    }
  }
}

TEST_CASE("two-token scalar attention matches the hand-evaluated softmax") {
  Tensor<float> q = Tensor<float>::from({1, 2, 1}, {1, 0});
  Tensor<float> k = Tensor<float>::from({1, 2, 1}, {1, 0});
  Tensor<float> v = Tensor<float>::from({1, 2, 1}, {1, 0});
  AttentionResult<float> r = attention_tokens(q, k, v, Tensor<float>(), Tensor<float>());
  const double e = std::exp(1.0);
  CHECK(double(r.weights.at({0, 0, 0})) == doctest::Approx(e / (e + 1)).epsilon(1e-5));
  CHECK(double(r.weights.at({0, 0, 1})) == doctest::Approx(1 / (e + 1)).epsilon(1e-5));
  CHECK(double(r.out.at({0, 0, 0})) == doctest::Approx(0.7310586).epsilon(1e-5));
  CHECK(double(r.out.at({0, 1, 0})) == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("shift mask") {
  SUBCASE("zero shift means no masking") {
    Tensor<float> m = build_shift_mask<float>(4, 4, 2, 0);
    for (float v : m.data()) CHECK(v == 0.0f);
  }
  SUBCASE("single 2x2 window with shift 1 isolates every token") {
    Tensor<float> m = build_shift_mask<float>(2, 2, 2, 1);
    CHECK(m.shape() == Shape{1, 4, 4});
    int masked = 0;
    for (float v : m.data()) masked += (v == kMaskValue);
    CHECK(masked == 12);
    for (int64_t p = 0; p < 4; ++p) CHECK(m.at({0, p, p}) == 0.0f);
  }
  SUBCASE("on 2Mx2M only the windows touching the wrap bands mask anything") {
    for (int64_t mwin : {2, 4}) {
      const int64_t h = 2 * mwin, s = mwin / 2;
      Tensor<float> mask = build_shift_mask<float>(h, h, mwin, s);
      const int64_t t = mwin * mwin;
      // brute-force check against the independent region labeling
      for (int64_t win = 0; win < 4; ++win) {
        const int64_t wr = win / 2, wc = win % 2;
        int nonzero = 0;
        for (int64_t p1 = 0; p1 < t; ++p1)
          for (int64_t p2 = 0; p2 < t; ++p2) {
            const int r1 = region_of(wr * mwin + p1 / mwin, wc * mwin + p1 % mwin, h, h, s);
            const int r2 = region_of(wr * mwin + p2 / mwin, wc * mwin + p2 % mwin, h, h, s);
            const float expect = (r1 != r2) ? kMaskValue : 0.0f;
            CHECK(mask.at({win, p1, p2}) == expect);
            nonzero += (expect != 0.0f);
          }
        if (win == 0) CHECK(nonzero == 0);
        else CHECK(nonzero > 0);
      }
    }
  }
  SUBCASE("invalid shift is rejected") {
    CHECK_THROWS_AS(build_shift_mask<float>(4, 4, 2, 2), std::invalid_argument);
  }
}

TEST_CASE("bias table indexing is a bijection onto relative offsets") {
  const int64_t m = 2, span = 2 * m - 1;
  Tensor<float> table = Tensor<float>::zeros({1, span, span});
  for (int64_t i = 0; i < span * span; ++i) table.mutable_data()[size_t(i)] = float(i);
  Tensor<float> bias = bias_from_table(table, m);
  std::vector<int> seen(size_t(span * span), 0);
  for (int64_t p1 = 0; p1 < m * m; ++p1)
    for (int64_t p2 = 0; p2 < m * m; ++p2) {
      const int64_t di = p1 / m - p2 / m + m - 1;
      const int64_t dj = p1 % m - p2 % m + m - 1;
      CHECK(bias.at({0, p1, p2}) == float(di * span + dj));
      seen[size_t(di * span + dj)] = 1;
    }
  int covered = 0;
  for (int v : seen) covered += v;
  CHECK(covered == span * span);  // all 9 offsets realized
}

TEST_CASE("attention softmax rows sum to one, masked or not") {
  Rng rng(4);
  const int64_t c = 8, m = 4, h = 8;
  AttentionWeights<float> w = AttentionWeights<float>::create(c, 2, m, rng.split(9));
  Tensor<float> x = rand_tensor<float>({c, h, h}, rng);
  for (int shift : {0, 2}) {
    AttentionConfig cfg{m, 2, c, shift};
    AttentionResult<float> r = swsa_probe(x, cfg, w);
    const int64_t rows = r.weights.extent(0) * r.weights.extent(1);
    for (int64_t row = 0; row < rows; ++row) {
      float total = 0;
      for (int64_t j = 0; j < m * m; ++j)
        total += r.weights.data()[size_t(row * m * m + j)];
      CHECK(std::abs(total - 1.0f) < 1e-6f);
    }
  }
}

TEST_CASE("masked pairs receive negligible post-softmax weight") {
  Rng rng(5);
  const int64_t c = 8, m = 4, h = 8, s = 2, heads = 2;
  AttentionWeights<float> w = AttentionWeights<float>::create(c, heads, m, rng.split(3));
  Tensor<float> x = rand_tensor<float>({c, h, h}, rng);
  AttentionConfig cfg{m, heads, c, s};
  AttentionResult<float> r = swsa_probe(x, cfg, w);
  Tensor<float> mask = build_shift_mask<float>(h, h, m, s);
  const int64_t t = m * m;
  int masked_pairs = 0;
  for (int64_t win = 0; win < mask.extent(0); ++win)
    for (int64_t q = 0; q < heads; ++q)
      for (int64_t p1 = 0; p1 < t; ++p1)
        for (int64_t p2 = 0; p2 < t; ++p2)
          if (mask.at({win, p1, p2}) == kMaskValue) {
            ++masked_pairs;
            CHECK(r.weights.at({win * heads + q, p1, p2}) < 1e-6f);
          }
  CHECK(masked_pairs > 0);
}

TEST_CASE("swsa with zero shift equals wsa bit for bit") {
  Rng rng(6);
  const int64_t c = 8, m = 4;
  AttentionWeights<float> w = AttentionWeights<float>::create(c, 2, m, rng.split(4));
  Tensor<float> x = rand_tensor<float>({c, 8, 8}, rng);
  Tensor<float> a = wsa(x, AttentionConfig{m, 2, c, 0}, w);
  Tensor<float> b = swsa(x, AttentionConfig{m, 2, c, 0}, w);
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[size_t(i)] == b.data()[size_t(i)]);

  // the deeper degeneracy: an explicit all-zero mask and a zero roll change
  // nothing either
  Tensor<float> rolled = roll2d(roll2d(x, 0, 0), 0, 0);
  Tensor<float> zero_mask = build_shift_mask<float>(8, 8, m, 0);
  Tensor<float> c2 =
      detail::window_attention_core(rolled, AttentionConfig{m, 2, c, 0}, w, zero_mask).out;
  for (int64_t i = 0; i < a.numel(); ++i)
    CHECK(a.data()[size_t(i)] == c2.data()[size_t(i)]);
}

TEST_CASE("sliding attention matches the contiguous-region brute-force oracle") {
  Rng rng(8);
  for (int64_t m : {2, 4}) {
    const int64_t c = 8, h = 2 * m;
    const int64_t heads = 2;
    AttentionWeights<float> w =
        AttentionWeights<float>::create(c, heads, m, rng.split(uint64_t(m)));
    // nonzero bias tables so the oracle exercises the offset indexing
    {
      Rng br = rng.split(100 + uint64_t(m));
      for (float& v : w.bias_table.mutable_data()) v = float(br.uniform(-0.5, 0.5));
    }
    Tensor<float> x = rand_tensor<float>({c, h, h}, rng);
    AttentionConfig cfg{m, heads, c, m / 2};
    Tensor<float> got = swsa(x, cfg, w);
    const std::vector<double> expect = testutil::swsa_oracle(x, cfg, w);
    double max_err = 0;
    for (int64_t i = 0; i < got.numel(); ++i)
      max_err = std::max(max_err, std::abs(double(got.data()[size_t(i)]) - expect[size_t(i)]));
    CHECK(max_err < 1e-5);
  }
}

TEST_CASE("window contents are independent under window swaps") {
  Rng rng(9);
  const int64_t c = 4, m = 2, h = 6;
  AttentionWeights<float> w = AttentionWeights<float>::create(c, 1, m, rng.split(2));
  Tensor<float> x = rand_tensor<float>({c, h, h}, rng);
  Tensor<float> y = wsa(x, AttentionConfig{m, 1, c, 0}, w);

  // swap two window blocks, run, swap the outputs back
  auto swap_windows = [&](const Tensor<float>& t, int64_t wa_r, int64_t wa_c, int64_t wb_r,
                          int64_t wb_c) {
    Tensor<float> out = Tensor<float>::from(
        t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
    auto span = out.mutable_data();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t r = 0; r < m; ++r)
        for (int64_t cc = 0; cc < m; ++cc) {
          const size_t ia = size_t((ch * h + wa_r * m + r) * h + wa_c * m + cc);
          const size_t ib = size_t((ch * h + wb_r * m + r) * h + wb_c * m + cc);
          std::swap(span[ia], span[ib]);
        }
    return out;
  };
  Tensor<float> swapped = swap_windows(x, 0, 0, 2, 1);
  Tensor<float> y_swapped = wsa(swapped, AttentionConfig{m, 1, c, 0}, w);
  Tensor<float> back = swap_windows(y_swapped, 0, 0, 2, 1);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(back.data()[size_t(i)] == y.data()[size_t(i)]);
}

TEST_CASE("complexity formulas") {
  CHECK(flops_wsa(64, 64, 32, 8) == 33554432ull);
  CHECK(flops_msa(64, 64, 32) == 1090519040ull);
  CHECK(double(flops_msa(64, 64, 32)) / double(flops_wsa(64, 64, 32, 8)) ==
        doctest::Approx(32.5));
  CHECK(flops_wsa(8, 8, 4, 2) == 6144ull);  // 4096 + 2048
  // one global window: both formulas coincide
  CHECK(flops_wsa(8, 8, 4, 8) == flops_msa(8, 8, 4));
}

TEST_CASE("instrumented mac count equals the windowed formula exactly") {
  struct Setting {
    int64_t h, w, c, m, heads;
  };
  const Setting settings[] = {
      {64, 64, 32, 8, 4}, {8, 8, 4, 2, 1}, {16, 16, 8, 4, 2},
      {32, 32, 16, 8, 4}, {8, 8, 8, 8, 2}, {8, 8, 4, 4, 1},
  };
  for (const auto& s : settings) {
    Rng rng(uint64_t(s.h * 131 + s.c));
    AttentionWeights<float> w = AttentionWeights<float>::create(s.c, s.heads, s.m, rng.split(1));
    Tensor<float> x = rand_tensor<float>({s.c, s.h, s.w}, rng);
    NoGradGuard no_grad;
    reset_matmul_mac_count();
    wsa(x, AttentionConfig{s.m, s.heads, s.c, 0}, w);
    CHECK(matmul_mac_count() ==
          flops_wsa(uint64_t(s.h), uint64_t(s.w), uint64_t(s.c), uint64_t(s.m)));
  }
}

TEST_CASE("channel/head mismatch is rejected") {
  Rng rng(10);
  AttentionWeights<float> w = AttentionWeights<float>::create(6, 2, 2, rng.split(1));
  Tensor<float> x = rand_tensor<float>({6, 4, 4}, rng);
  CHECK_THROWS_AS(wsa(x, AttentionConfig{2, 4, 6, 0}, w), std::invalid_argument);
  CHECK_THROWS_AS(wsa(x, AttentionConfig{2, 2, 8, 0}, w), std::invalid_argument);
}

TEST_CASE("wsa and swsa pass the finite-difference check") {
  Rng rng(11);
  const int64_t c = 4, m = 2, h = 4;
  AttentionWeights<double> w = AttentionWeights<double>::create(c, 2, m, rng.split(1));
  {
    Rng br = rng.split(55);
    for (double& v : w.bias_table.mutable_data()) v = br.uniform(-0.3, 0.3);
  }
  Tensor<double> x = rand_tensor<double>({c, h, h}, rng, -1, 1, true);
  auto fd = check_gradients({x, w.wq, w.wk, w.wv, w.wo, w.bias_table}, [&] {
    return weighted_sum(wsa(x, AttentionConfig{m, 2, c, 0}, w), 1);
  }, Rng(12), 5);
  CHECK(fd.max_rel_err < 1e-4);

  auto fd2 = check_gradients({x, w.wq, w.wk, w.wv, w.wo, w.bias_table}, [&] {
    return weighted_sum(swsa(x, AttentionConfig{m, 2, c, 1}, w), 2);
  }, Rng(13), 5);
  CHECK(fd2.max_rel_err < 1e-4);
}

TEST_SUITE_END();
