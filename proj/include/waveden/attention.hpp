#pragma once

// Multi-head attention inside non-overlapping MxM windows, plus the sliding
// variant: a cyclic half-window shift of the feature map with an additive
// logit mask that confines attention to tokens from the same pre-shift
// region. Window sliding toward the bottom-right is realized as a content
// shift toward the top-left with the window grid kept fixed.

#include <cmath>
#include <functional>

#include "waveden/ops.hpp"
#include "waveden/rng.hpp"
#include "waveden/tensor.hpp"

namespace waveden {

constexpr float kMaskValue = -1e9f;

struct AttentionConfig {
  int64_t window = 8;
  int64_t heads = 1;
  int64_t channels = 32;
  int64_t shift = 0;  // 0 or window/2

  int64_t head_dim() const { return channels / heads; }

  void validate() const {
    detail::check(window >= 1 && heads >= 1 && channels >= 1, "attention: non-positive config");
    detail::check(channels % heads == 0, "attention: channels " + std::to_string(channels) +
                                             " not divisible by heads " + std::to_string(heads));
    detail::check(shift == 0 || shift == window / 2,
                  "attention: shift must be 0 or floor(window/2), got " + std::to_string(shift));
  }
};

template <class S>
struct AttentionWeights {
  Tensor<S> wq, wk, wv, wo;  // [C, C]
  Tensor<S> bias_table;      // [heads, 2M-1, 2M-1], one slice per head

  static AttentionWeights create(int64_t channels, int64_t heads, int64_t window, Rng rng) {
    AttentionWeights w;
    const S bound = S(1) / std::sqrt(S(channels));
    auto proj = [&](uint64_t tag) {
      Rng r = rng.split(tag);
      Tensor<S> t = Tensor<S>::zeros({channels, channels}, true);
      for (S& v : t.mutable_data()) v = S(r.uniform(-double(bound), double(bound)));
      return t;
    };
    w.wq = proj(0);
    w.wk = proj(1);
    w.wv = proj(2);
    w.wo = proj(3);
    w.bias_table = Tensor<S>::zeros({heads, 2 * window - 1, 2 * window - 1}, true);
    return w;
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bias_table", bias_table);
  }
};

// Additive logit mask for the shifted layout, shape [N, M*M, M*M] with
// entries 0 or kMaskValue. After the content shift by (-s, -s) the last s
// rows/columns hold wrapped content; a token pair is masked iff the two
// tokens' (row band, col band) region ids differ. Entries are constants, not
// graph participants.
template <class S>
Tensor<S> build_shift_mask(int64_t h, int64_t w, int64_t m, int64_t s) {
  detail::check(h % m == 0 && w % m == 0, "build_shift_mask: extents " + std::to_string(h) + "x" +
                                              std::to_string(w) + " not divisible by window " +
                                              std::to_string(m));
  detail::check(s == 0 || s == m / 2,
                "build_shift_mask: shift must be 0 or floor(M/2), got " + std::to_string(s));
  const int64_t gh = h / m, gw = w / m, nwin = gh * gw, t = m * m;
  auto mask = std::vector<S>(size_t(nwin * t * t), S(0));
  if (s > 0) {
    auto region = [&](int64_t row, int64_t col) {
      return (row < h - s ? 0 : 1) * 2 + (col < w - s ? 0 : 1);
    };
    for (int64_t wr = 0; wr < gh; ++wr)
      for (int64_t wc = 0; wc < gw; ++wc) {
        S* block = mask.data() + (wr * gw + wc) * t * t;
        for (int64_t p1 = 0; p1 < t; ++p1)
          for (int64_t p2 = 0; p2 < t; ++p2) {
            const int64_t r1 = region(wr * m + p1 / m, wc * m + p1 % m);
            const int64_t r2 = region(wr * m + p2 / m, wc * m + p2 % m);
            if (r1 != r2) block[p1 * t + p2] = S(kMaskValue);
          }
      }
  }
  return Tensor<S>::from({nwin, t, t}, std::move(mask));
}

template <class S>
struct AttentionResult {
  Tensor<S> out;      // same shape as the input feature map
  Tensor<S> weights;  // post-softmax attention, [N*heads, M*M, M*M]
};

// Scaled dot-product attention over token matrices [B, T, d]; bias and mask
// (optional, [B, T, T]) are added to the logits before the softmax.
template <class S>
AttentionResult<S> attention_tokens(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                    const Tensor<S>& bias, const Tensor<S>& mask) {
  const int64_t d = q.extent(2);
  Tensor<S> logits = scale(bmm(q, permute(k, {0, 2, 1})), S(1) / std::sqrt(S(d)));
  if (bias.defined()) logits = add(logits, bias);
  if (mask.defined()) logits = add(logits, mask);
  Tensor<S> w = softmax(logits, 2);
  return {bmm(w, v), w};
}

namespace detail {

// Replicates a per-window mask [N, T, T] across heads into [N*heads, T, T].
template <class S>
Tensor<S> expand_mask_heads(const Tensor<S>& mask, int64_t heads) {
  const int64_t n = mask.extent(0), t = mask.extent(1);
  auto out = std::vector<S>(size_t(n * heads * t * t));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t q = 0; q < heads; ++q)
      std::memcpy(out.data() + (i * heads + q) * t * t, mask.data().data() + i * t * t,
                  size_t(t * t) * sizeof(S));
  return Tensor<S>::from({n * heads, t, t}, std::move(out));
}

// [N, T, C] -> [N*heads, T, d]
template <class S>
Tensor<S> split_heads(const Tensor<S>& x, int64_t heads) {
  const int64_t n = x.extent(0), t = x.extent(1), c = x.extent(2);
  return reshape(permute(reshape(x, {n, t, heads, c / heads}), {0, 2, 1, 3}),
                 {n * heads, t, c / heads});
}

template <class S>
AttentionResult<S> window_attention_core(const Tensor<S>& x, const AttentionConfig& cfg,
                                         const AttentionWeights<S>& w, const Tensor<S>& mask) {
  cfg.validate();
  check(x.ndim() == 3 && x.extent(0) == cfg.channels,
        "attention: input " + shape_str(x.shape()) + " does not carry " +
            std::to_string(cfg.channels) + " channels");
  const int64_t c = cfg.channels, h = x.extent(1), ww = x.extent(2);
  const int64_t m = cfg.window, t = m * m;
  const int64_t nwin = (h / m) * (ww / m);

  Tensor<S> tokens = window_partition(x, m);  // checks divisibility
  Tensor<S> flat = reshape(tokens, {nwin * t, c});
  Tensor<S> q = split_heads(reshape(matmul(flat, w.wq), {nwin, t, c}), cfg.heads);
  Tensor<S> k = split_heads(reshape(matmul(flat, w.wk), {nwin, t, c}), cfg.heads);
  Tensor<S> v = split_heads(reshape(matmul(flat, w.wv), {nwin, t, c}), cfg.heads);

  Tensor<S> bias =
      reshape(repeat_outer(bias_from_table(w.bias_table, m), nwin), {nwin * cfg.heads, t, t});
  Tensor<S> mask_x = mask.defined() ? expand_mask_heads(mask, cfg.heads) : Tensor<S>();

  AttentionResult<S> att = attention_tokens(q, k, v, bias, mask_x);

  Tensor<S> merged = reshape(
      permute(reshape(att.out, {nwin, cfg.heads, t, c / cfg.heads}), {0, 2, 1, 3}), {nwin * t, c});
  Tensor<S> out = window_reverse(reshape(matmul(merged, w.wo), {nwin, t, c}), m, h, ww);
  return {out, att.weights};
}

}  // namespace detail

// Plain window attention (no shift).
template <class S>
Tensor<S> wsa(const Tensor<S>& x, const AttentionConfig& cfg, const AttentionWeights<S>& w) {
  detail::check(cfg.shift == 0, "wsa: configured shift must be 0");
  return detail::window_attention_core(x, cfg, w, Tensor<S>()).out;
}

// Sliding window attention: cyclic shift by (-s, -s), masked window
// attention, shift back. A zero shift degenerates to plain wsa.
template <class S>
Tensor<S> swsa(const Tensor<S>& x, const AttentionConfig& cfg, const AttentionWeights<S>& w) {
  if (cfg.shift == 0) return detail::window_attention_core(x, cfg, w, Tensor<S>()).out;
  detail::check(cfg.shift == cfg.window / 2, "swsa: shift must be floor(window/2)");
  const int64_t s = cfg.shift;
  Tensor<S> shifted = roll2d(x, -s, -s);
  Tensor<S> mask = build_shift_mask<S>(x.extent(1), x.extent(2), cfg.window, s);
  AttentionConfig inner = cfg;
  inner.shift = 0;
  Tensor<S> y = detail::window_attention_core(shifted, inner, w, mask).out;
  return roll2d(y, s, s);
}

// Probe variants used by tests to inspect post-softmax attention weights.
template <class S>
AttentionResult<S> wsa_probe(const Tensor<S>& x, const AttentionConfig& cfg,
                             const AttentionWeights<S>& w) {
  return detail::window_attention_core(x, cfg, w, Tensor<S>());
}

template <class S>
AttentionResult<S> swsa_probe(const Tensor<S>& x, const AttentionConfig& cfg,
                              const AttentionWeights<S>& w) {
  if (cfg.shift == 0) return detail::window_attention_core(x, cfg, w, Tensor<S>());
  const int64_t s = cfg.shift;
  Tensor<S> mask = build_shift_mask<S>(x.extent(1), x.extent(2), cfg.window, s);
  AttentionConfig inner = cfg;
  inner.shift = 0;
  AttentionResult<S> r = detail::window_attention_core(roll2d(x, -s, -s), inner, w, mask);
  return {roll2d(r.out, s, s), r.weights};
}

// Forward multiply-accumulate counts of global attention vs. windowed
// attention over a CxHxW map.
inline uint64_t flops_msa(uint64_t h, uint64_t w, uint64_t c) {
  return 4 * h * w * c * c + 2 * (h * w) * (h * w) * c;
}

inline uint64_t flops_wsa(uint64_t h, uint64_t w, uint64_t c, uint64_t m) {
  return 4 * h * w * c * c + 2 * m * m * h * w * c;
}

}  // namespace waveden
