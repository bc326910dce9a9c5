#pragma once

// Single-level Haar subband split and its inverse. The analysis filters are
// applied unnormalized as 2x2 stride-2 cross-correlations; the 1/4 lives
// entirely in the synthesis step, so the round trip is exact.

#include <array>

#include "waveden/tensor.hpp"

namespace waveden {

// The four subbands of a CxHxW feature map, each Cx(H/2)x(W/2).
template <class S>
struct Subbands {
  Tensor<S> ll, lh, hl, hh;
};

namespace detail {

// Filter taps in (row, col) scan order over the 2x2 block
// {x(2i,2j), x(2i,2j+1), x(2i+1,2j), x(2i+1,2j+1)}.
template <class S>
constexpr std::array<std::array<S, 4>, 4> haar_taps() {
  return {{{S(1), S(1), S(1), S(1)},      // ll
           {S(-1), S(-1), S(1), S(1)},    // lh
           {S(-1), S(1), S(-1), S(1)},    // hl
           {S(1), S(-1), S(-1), S(1)}}};  // hh
}

template <class S>
Tensor<S> haar_analysis(const Tensor<S>& x, int band, const char* op) {
  check(x.ndim() == 3, "haar_dwt: expects CxHxW, got " + shape_str(x.shape()));
  const int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  check(h % 2 == 0 && w % 2 == 0,
        "haar_dwt: spatial extents must be even, got " + shape_str(x.shape()));
  const auto f = haar_taps<S>()[size_t(band)];
  const int64_t oh = h / 2, ow = w / 2;
  auto out = std::vector<S>(size_t(c * oh * ow));
  const S* px = x.data().data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < oh; ++i) {
      const S* r0 = px + (ch * h + 2 * i) * w;
      const S* r1 = r0 + w;
      S* po = out.data() + (ch * oh + i) * ow;
      for (int64_t j = 0; j < ow; ++j)
        po[j] = f[0] * r0[2 * j] + f[1] * r0[2 * j + 1] + f[2] * r1[2 * j] + f[3] * r1[2 * j + 1];
    }
  return make_result<S>({c, oh, ow}, std::move(out), op, {x},
                        [x, f, c, h, w, oh, ow](Storage<S>& o) {
                          if (!x.st_->requires_grad) return;
                          auto& g = x.st_->grad_buffer();
                          for (int64_t ch = 0; ch < c; ++ch)
                            for (int64_t i = 0; i < oh; ++i) {
                              S* r0 = g.data() + (ch * h + 2 * i) * w;
                              S* r1 = r0 + w;
                              const S* po = o.grad.data() + (ch * oh + i) * ow;
                              for (int64_t j = 0; j < ow; ++j) {
                                r0[2 * j] += f[0] * po[j];
                                r0[2 * j + 1] += f[1] * po[j];
                                r1[2 * j] += f[2] * po[j];
                                r1[2 * j + 1] += f[3] * po[j];
                              }
                            }
                        });
}

}  // namespace detail

template <class S>
Subbands<S> haar_dwt(const Tensor<S>& x) {
  return {detail::haar_analysis(x, 0, "haar_ll"), detail::haar_analysis(x, 1, "haar_lh"),
          detail::haar_analysis(x, 2, "haar_hl"), detail::haar_analysis(x, 3, "haar_hh")};
}

template <class S>
Tensor<S> haar_idwt(const Subbands<S>& s) {
  detail::check(s.ll.defined() && s.lh.defined() && s.hl.defined() && s.hh.defined(),
                "haar_idwt: missing subband");
  const Shape& sh = s.ll.shape();
  detail::check(s.lh.shape() == sh && s.hl.shape() == sh && s.hh.shape() == sh,
                "haar_idwt: subband shape mismatch " + detail::shape_str(sh) + " vs " +
                    detail::shape_str(s.lh.shape()) + " / " + detail::shape_str(s.hl.shape()) +
                    " / " + detail::shape_str(s.hh.shape()));
  detail::check(s.ll.ndim() == 3, "haar_idwt: subbands must be CxHxW");
  const int64_t c = sh[0], hh = sh[1], hw = sh[2];
  const int64_t oh = hh * 2, ow = hw * 2;
  auto out = std::vector<S>(size_t(c * oh * ow));
  const S* a = s.ll.data().data();
  const S* b = s.lh.data().data();
  const S* cc = s.hl.data().data();
  const S* d = s.hh.data().data();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < hh; ++i) {
      const int64_t base = (ch * hh + i) * hw;
      S* r0 = out.data() + (ch * oh + 2 * i) * ow;
      S* r1 = r0 + ow;
      for (int64_t j = 0; j < hw; ++j) {
        const S ll = a[base + j], lh = b[base + j], hl = cc[base + j], hhv = d[base + j];
        r0[2 * j] = (ll - lh - hl + hhv) / S(4);
        r0[2 * j + 1] = (ll - lh + hl - hhv) / S(4);
        r1[2 * j] = (ll + lh - hl - hhv) / S(4);
        r1[2 * j + 1] = (ll + lh + hl + hhv) / S(4);
      }
    }
  return detail::make_result<S>(
      {c, oh, ow}, std::move(out), "haar_idwt", {s.ll, s.lh, s.hl, s.hh},
      [s, c, hh, hw, oh, ow](detail::Storage<S>& o) {
        S* ga = s.ll.st_->requires_grad ? s.ll.st_->grad_buffer().data() : nullptr;
        S* gb = s.lh.st_->requires_grad ? s.lh.st_->grad_buffer().data() : nullptr;
        S* gc = s.hl.st_->requires_grad ? s.hl.st_->grad_buffer().data() : nullptr;
        S* gd = s.hh.st_->requires_grad ? s.hh.st_->grad_buffer().data() : nullptr;
        for (int64_t ch = 0; ch < c; ++ch)
          for (int64_t i = 0; i < hh; ++i) {
            const int64_t base = (ch * hh + i) * hw;
            const S* r0 = o.grad.data() + (ch * oh + 2 * i) * ow;
            const S* r1 = r0 + ow;
            for (int64_t j = 0; j < hw; ++j) {
              const S g00 = r0[2 * j] / S(4), g01 = r0[2 * j + 1] / S(4);
              const S g10 = r1[2 * j] / S(4), g11 = r1[2 * j + 1] / S(4);
              if (ga) ga[base + j] += g00 + g01 + g10 + g11;
              if (gb) gb[base + j] += -g00 - g01 + g10 + g11;
              if (gc) gc[base + j] += -g00 + g01 - g10 + g11;
              if (gd) gd[base + j] += g00 - g01 - g10 + g11;
            }
          }
      });
}

}  // namespace waveden
