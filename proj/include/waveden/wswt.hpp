#pragma once

// Per-stage wavelet attention: subband split, per-subband residual blocks,
// a window-attention block stack on the low-frequency subband and a sliding
// stack on the channel-concatenated high-frequency subbands, then subband
// reintegration. Tokens are the spatial sites of the subband feature maps.

#include <functional>
#include <string>
#include <vector>

#include "waveden/attention.hpp"
#include "waveden/resblock.hpp"
#include "waveden/wavelet.hpp"

namespace waveden {

template <class S>
struct LayerNormWeights {
  Tensor<S> gamma, beta;

  static LayerNormWeights create(int64_t channels) {
    LayerNormWeights w;
    w.gamma = Tensor<S>::filled({channels}, S(1), true);
    w.beta = Tensor<S>::zeros({channels}, true);
    return w;
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".g", gamma);
    fn(prefix + ".b", beta);
  }
};

template <class S>
struct MlpWeights {
  Tensor<S> w1, b1, w2, b2;

  static MlpWeights create(int64_t channels, int64_t ratio, Rng rng) {
    MlpWeights w;
    const int64_t hidden = channels * ratio;
    auto lin = [](int64_t rows, int64_t cols, Rng r) {
      Tensor<S> t = Tensor<S>::zeros({rows, cols}, true);
      const double bound = 1.0 / std::sqrt(double(rows));
      for (S& v : t.mutable_data()) v = S(r.uniform(-bound, bound));
      return t;
    };
    w.w1 = lin(channels, hidden, rng.split(0));
    w.b1 = Tensor<S>::zeros({hidden}, true);
    w.w2 = lin(hidden, channels, rng.split(1));
    w.b2 = Tensor<S>::zeros({channels}, true);
    return w;
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

namespace detail {

// LayerNorm over the channel axis of a CxHxW map (per spatial site).
template <class S>
Tensor<S> ln_chw(const Tensor<S>& x, const LayerNormWeights<S>& w, S eps) {
  return layer_norm(x, 0, eps, w.gamma, w.beta);
}

// Token MLP applied per spatial site of a CxHxW map.
template <class S>
Tensor<S> mlp_chw(const Tensor<S>& x, const MlpWeights<S>& w) {
  const int64_t c = x.extent(0), h = x.extent(1), ww = x.extent(2);
  Tensor<S> tokens = permute(reshape(x, {c, h * ww}), {1, 0});
  tokens = add_row_bias(matmul(tokens, w.w1), w.b1);
  tokens = gelu(tokens);
  tokens = add_row_bias(matmul(tokens, w.w2), w.b2);
  return reshape(permute(tokens, {1, 0}), {c, h, ww});
}

}  // namespace detail

// One pre-norm block: two attention units, each followed by a token MLP, all
// on residual paths. The sliding flavor shifts the second unit by half a
// window; the plain flavor keeps both units unshifted.
template <class S>
struct BlockWeights {
  LayerNormWeights<S> ln1, ln2, ln3, ln4;
  AttentionWeights<S> attn1, attn2;
  MlpWeights<S> mlp1, mlp2;

  static BlockWeights create(int64_t channels, int64_t heads, int64_t window, int64_t ratio,
                             Rng rng) {
    BlockWeights b;
    b.ln1 = LayerNormWeights<S>::create(channels);
    b.ln2 = LayerNormWeights<S>::create(channels);
    b.ln3 = LayerNormWeights<S>::create(channels);
    b.ln4 = LayerNormWeights<S>::create(channels);
    b.attn1 = AttentionWeights<S>::create(channels, heads, window, rng.split(0));
    b.attn2 = AttentionWeights<S>::create(channels, heads, window, rng.split(1));
    b.mlp1 = MlpWeights<S>::create(channels, ratio, rng.split(2));
    b.mlp2 = MlpWeights<S>::create(channels, ratio, rng.split(3));
    return b;
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    ln1.visit_params(prefix + ".ln1", fn);
    attn1.visit_params(prefix + ".attn1", fn);
    ln2.visit_params(prefix + ".ln2", fn);
    mlp1.visit_params(prefix + ".mlp1", fn);
    ln3.visit_params(prefix + ".ln3", fn);
    attn2.visit_params(prefix + ".attn2", fn);
    ln4.visit_params(prefix + ".ln4", fn);
    mlp2.visit_params(prefix + ".mlp2", fn);
  }
};

template <class S>
Tensor<S> attention_block(const Tensor<S>& x, const BlockWeights<S>& w, int64_t window,
                          int64_t heads, bool sliding, S ln_eps) {
  const int64_t channels = x.extent(0);
  AttentionConfig unit1{window, heads, channels, 0};
  AttentionConfig unit2{window, heads, channels, sliding ? window / 2 : 0};
  Tensor<S> a = add(wsa(detail::ln_chw(x, w.ln1, ln_eps), unit1, w.attn1), x);
  Tensor<S> b = add(detail::mlp_chw(detail::ln_chw(a, w.ln2, ln_eps), w.mlp1), a);
  Tensor<S> c = add(swsa(detail::ln_chw(b, w.ln3, ln_eps), unit2, w.attn2), b);
  return add(detail::mlp_chw(detail::ln_chw(c, w.ln4, ln_eps), w.mlp2), c);
}

template <class S>
Tensor<S> hf_swsa_block(const Tensor<S>& x, const BlockWeights<S>& w, int64_t window,
                        int64_t heads, S ln_eps) {
  return attention_block(x, w, window, heads, true, ln_eps);
}

template <class S>
Tensor<S> lf_wsa_block(const Tensor<S>& x, const BlockWeights<S>& w, int64_t window,
                       int64_t heads, S ln_eps) {
  return attention_block(x, w, window, heads, false, ln_eps);
}

struct StageConfig {
  int64_t channels = 0;  // input channel count C_i
  int64_t height = 0, width = 0;
  int64_t window = 8;
  int64_t lf_depth = 2, hf_depth = 2;
  int64_t lf_heads = 1, hf_heads = 1;
  int64_t mlp_ratio = 4;
  bool sliding = true;  // when off, every unit runs unshifted
};

template <class S>
struct StageWeights {
  StageConfig cfg;
  Tensor<S> pos;  // learnable additive position map, sized to training resolution
  ResidualBlockWeights<S> rb_ll, rb_lh, rb_hl, rb_hh;
  std::vector<BlockWeights<S>> lf, hf;

  static StageWeights create(const StageConfig& cfg, S leaky_slope, Rng rng) {
    StageWeights s;
    s.cfg = cfg;
    s.pos = Tensor<S>::zeros({cfg.channels, cfg.height, cfg.width}, true);
    {
      Rng r = rng.split("pos");
      for (S& v : s.pos.mutable_data()) v = S(r.normal() * 0.02);
    }
    s.rb_ll = ResidualBlockWeights<S>::create(cfg.channels, cfg.channels, leaky_slope, rng.split("rb_ll"));
    s.rb_lh = ResidualBlockWeights<S>::create(cfg.channels, cfg.channels, leaky_slope, rng.split("rb_lh"));
    s.rb_hl = ResidualBlockWeights<S>::create(cfg.channels, cfg.channels, leaky_slope, rng.split("rb_hl"));
    s.rb_hh = ResidualBlockWeights<S>::create(cfg.channels, cfg.channels, leaky_slope, rng.split("rb_hh"));
    for (int64_t i = 0; i < cfg.lf_depth; ++i)
      s.lf.push_back(BlockWeights<S>::create(cfg.channels, cfg.lf_heads, cfg.window,
                                             cfg.mlp_ratio, rng.split("lf").split(uint64_t(i))));
    for (int64_t i = 0; i < cfg.hf_depth; ++i)
      s.hf.push_back(BlockWeights<S>::create(3 * cfg.channels, cfg.hf_heads, cfg.window,
                                             cfg.mlp_ratio, rng.split("hf").split(uint64_t(i))));
    return s;
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".pos", pos);
    rb_ll.visit_params(prefix + ".rb_ll", fn);
    rb_lh.visit_params(prefix + ".rb_lh", fn);
    rb_hl.visit_params(prefix + ".rb_hl", fn);
    rb_hh.visit_params(prefix + ".rb_hh", fn);
    for (size_t i = 0; i < lf.size(); ++i)
      lf[i].visit_params(prefix + ".lf" + std::to_string(i), fn);
    for (size_t i = 0; i < hf.size(); ++i)
      hf[i].visit_params(prefix + ".hf" + std::to_string(i), fn);
  }
};

// Per-subband residual blocks followed by the two frequency branches; the
// low- and high-frequency paths touch disjoint subbands until reintegration.
template <class S>
Subbands<S> stage_process_subbands(const Subbands<S>& in, const StageWeights<S>& w, S ln_eps) {
  const StageConfig& cfg = w.cfg;
  Tensor<S> ll = w.rb_ll.forward(in.ll);
  for (const auto& blk : w.lf)
    ll = attention_block(ll, blk, cfg.window, cfg.lf_heads, false, ln_eps);

  Tensor<S> hf = concat<S>({w.rb_lh.forward(in.lh), w.rb_hl.forward(in.hl),
                            w.rb_hh.forward(in.hh)}, 0);
  for (const auto& blk : w.hf)
    hf = attention_block(hf, blk, cfg.window, cfg.hf_heads, cfg.sliding, ln_eps);

  const int64_t c = cfg.channels;
  return {ll, slice(hf, 0, 0, c), slice(hf, 0, c, c), slice(hf, 0, 2 * c, c)};
}

template <class S>
Tensor<S> stage_forward(const Tensor<S>& x, const StageWeights<S>& w, S ln_eps) {
  const StageConfig& cfg = w.cfg;
  detail::check(x.ndim() == 3 && x.extent(0) == cfg.channels && x.extent(1) == cfg.height &&
                    x.extent(2) == cfg.width,
                "stage: input " + detail::shape_str(x.shape()) + " does not match configured " +
                    detail::shape_str({cfg.channels, cfg.height, cfg.width}));
  detail::check(cfg.height % 2 == 0 && cfg.width % 2 == 0,
                "stage: spatial extents must be even, got " + std::to_string(cfg.height) + "x" +
                    std::to_string(cfg.width));
  detail::check((cfg.height / 2) % cfg.window == 0,
                "stage: subband height " + std::to_string(cfg.height / 2) +
                    " not divisible by window " + std::to_string(cfg.window));
  detail::check((cfg.width / 2) % cfg.window == 0,
                "stage: subband width " + std::to_string(cfg.width / 2) +
                    " not divisible by window " + std::to_string(cfg.window));
  Subbands<S> sb = haar_dwt(add(x, w.pos));
  return haar_idwt(stage_process_subbands(sb, w, ln_eps));
}

}  // namespace waveden
