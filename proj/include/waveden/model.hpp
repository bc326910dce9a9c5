#pragma once

// Full denoiser: convolutional encoder with stage-wise downsampling, one
// wavelet attention stage per encoder stage, and a decoder that upsamples
// with transposed convolutions and fuses skip features by concatenation.
// The network predicts the clean image directly; nothing is clamped here.

#include <functional>
#include <string>
#include <vector>

#include "waveden/wswt.hpp"

namespace waveden {

struct ModelConfig {
  int64_t base_channels = 32;
  int64_t stages = 3;
  int64_t window = 8;
  int64_t lf_depth = 2;
  int64_t hf_depth = 2;
  int64_t mlp_ratio = 4;
  float leaky_slope = 0.2f;
  int64_t train_patch = 128;
  bool sliding = true;
  float ln_eps = 1e-5f;

  int64_t stage_channels(int64_t i) const { return base_channels << i; }

  // Head count targets a head dimension of 32 and degrades to a single head
  // for narrower maps.
  static int64_t heads_for(int64_t channels) {
    return (channels >= 32 && channels % 32 == 0) ? channels / 32 : 1;
  }

  void validate() const {
    detail::check(base_channels >= 1, "config: base_channels must be positive");
    detail::check(stages >= 1, "config: stages must be positive");
    detail::check(window >= 1, "config: window_size must be positive");
    detail::check(lf_depth >= 1 && hf_depth >= 1, "config: block depths must be positive");
    detail::check(mlp_ratio >= 1, "config: mlp_ratio must be positive");
    detail::check(train_patch >= 1, "config: train_patch must be positive");
    const int64_t period = (int64_t(1) << (stages + 1)) * window;
    detail::check(train_patch % period == 0,
                  "config: train_patch " + std::to_string(train_patch) +
                      " must be divisible by 2^(stages+1)*window = " + std::to_string(period));
    for (int64_t i = 1; i <= stages; ++i) {
      const int64_t lc = stage_channels(i), hc = 3 * lc;
      detail::check(lc % heads_for(lc) == 0 && hc % heads_for(hc) == 0,
                    "config: stage " + std::to_string(i) + " channels not divisible by head count");
    }
  }
};

template <class S>
class Model {
 public:
  Model(ModelConfig cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    const int64_t c0 = cfg_.base_channels;
    conv_in_w_ = detail::conv_weight<S>(c0, 3, 3, rng.split("enc.conv_in"));
    conv_in_b_ = Tensor<S>::zeros({c0}, true);
    for (int64_t i = 1; i <= cfg_.stages; ++i) {
      const int64_t cin = cfg_.stage_channels(i - 1), cout = cfg_.stage_channels(i);
      enc_rb_.push_back(ResidualBlockWeights<S>::create(
          cin, cin, S(cfg_.leaky_slope), rng.split("enc.rb").split(uint64_t(i))));
      down_w_.push_back(detail::conv_weight<S>(cout, cin, 4, rng.split("enc.down").split(uint64_t(i))));
      down_b_.push_back(Tensor<S>::zeros({cout}, true));

      StageConfig sc;
      sc.channels = cout;
      sc.height = sc.width = cfg_.train_patch >> i;
      sc.window = cfg_.window;
      sc.lf_depth = cfg_.lf_depth;
      sc.hf_depth = cfg_.hf_depth;
      sc.lf_heads = ModelConfig::heads_for(cout);
      sc.hf_heads = ModelConfig::heads_for(3 * cout);
      sc.mlp_ratio = cfg_.mlp_ratio;
      sc.sliding = cfg_.sliding;
      wswt_.push_back(StageWeights<S>::create(sc, S(cfg_.leaky_slope),
                                              rng.split("wswt").split(uint64_t(i))));
    }
    dec_bottom_ = ResidualBlockWeights<S>::create(cfg_.stage_channels(cfg_.stages),
                                                  cfg_.stage_channels(cfg_.stages),
                                                  S(cfg_.leaky_slope), rng.split("dec.bottom"));
    for (int64_t l = cfg_.stages; l >= 1; --l) {
      const int64_t cl = cfg_.stage_channels(l), cl1 = cfg_.stage_channels(l - 1);
      Tensor<S> up = Tensor<S>::zeros({cl, cl1, 2, 2}, true);
      {
        Rng r = rng.split("dec.up").split(uint64_t(l));
        const double bound = 1.0 / std::sqrt(double(cl) * 4.0);
        for (S& v : up.mutable_data()) v = S(r.uniform(-bound, bound));
      }
      up_w_.push_back(std::move(up));
      up_b_.push_back(Tensor<S>::zeros({cl1}, true));
      dec_rb_.push_back(ResidualBlockWeights<S>::create(
          2 * cl1, cl1, S(cfg_.leaky_slope), rng.split("dec.rb").split(uint64_t(l))));
    }
    conv_out_w_ = detail::conv_weight<S>(3, cfg_.base_channels, 3, rng.split("dec.conv_out"));
    conv_out_b_ = Tensor<S>::zeros({3}, true);
  }

  const ModelConfig& config() const { return cfg_; }

  // X^0..X^stages; X^i has 2^i*C channels at 1/2^i resolution.
  std::vector<Tensor<S>> encode(const Tensor<S>& noisy) const {
    detail::check(noisy.ndim() == 3 && noisy.extent(0) == 3,
                  "encode: input must be 3xHxW, got " + detail::shape_str(noisy.shape()));
    const int64_t div = int64_t(1) << cfg_.stages;
    detail::check(noisy.extent(1) % div == 0 && noisy.extent(2) % div == 0,
                  "encode: extents " + std::to_string(noisy.extent(1)) + "x" +
                      std::to_string(noisy.extent(2)) + " not divisible by 2^stages = " +
                      std::to_string(div));
    std::vector<Tensor<S>> feats;
    Tensor<S> cur = conv2d(noisy, conv_in_w_, conv_in_b_, 1, 1);
    feats.push_back(cur);
    for (int64_t i = 1; i <= cfg_.stages; ++i) {
      cur = enc_rb_[size_t(i - 1)].forward(cur);
      cur = conv2d(cur, down_w_[size_t(i - 1)], down_b_[size_t(i - 1)], 2, 1);
      feats.push_back(cur);
    }
    return feats;
  }

  // feats[0] is the full-resolution skip X^0; feats[1..stages] are the deep
  // stage features. Returns the 3xHxW prediction.
  Tensor<S> decode(const std::vector<Tensor<S>>& feats) const {
    detail::check(int64_t(feats.size()) == cfg_.stages + 1, "decode: wrong feature count");
    Tensor<S> cur = dec_bottom_.forward(feats[size_t(cfg_.stages)]);
    for (int64_t l = cfg_.stages; l >= 1; --l) {
      const size_t idx = size_t(cfg_.stages - l);
      Tensor<S> up = conv_transpose2d(cur, up_w_[idx], up_b_[idx], 2);
      cur = dec_rb_[idx].forward(concat<S>({up, feats[size_t(l - 1)]}, 0));
    }
    return conv2d(cur, conv_out_w_, conv_out_b_, 1, 1);
  }

  Tensor<S> forward(const Tensor<S>& noisy) const {
    std::vector<Tensor<S>> feats = encode(noisy);
    for (int64_t i = 1; i <= cfg_.stages; ++i)
      feats[size_t(i)] = stage_forward(feats[size_t(i)], wswt_[size_t(i - 1)], S(cfg_.ln_eps));
    return decode(feats);
  }

  void visit_params(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn("enc.conv_in.w", conv_in_w_);
    fn("enc.conv_in.b", conv_in_b_);
    for (int64_t i = 1; i <= cfg_.stages; ++i) {
      const std::string p = "enc.s" + std::to_string(i);
      enc_rb_[size_t(i - 1)].visit_params(p + ".rb", fn);
      fn(p + ".down.w", down_w_[size_t(i - 1)]);
      fn(p + ".down.b", down_b_[size_t(i - 1)]);
    }
    for (int64_t i = 1; i <= cfg_.stages; ++i)
      wswt_[size_t(i - 1)].visit_params("wswt.s" + std::to_string(i), fn);
    dec_bottom_.visit_params("dec.bottom", fn);
    for (int64_t l = cfg_.stages; l >= 1; --l) {
      const size_t idx = size_t(cfg_.stages - l);
      const std::string p = "dec.s" + std::to_string(l);
      fn(p + ".up.w", up_w_[idx]);
      fn(p + ".up.b", up_b_[idx]);
      dec_rb_[idx].visit_params(p + ".rb", fn);
    }
    fn("dec.conv_out.w", conv_out_w_);
    fn("dec.conv_out.b", conv_out_b_);
  }

  int64_t param_count() {
    int64_t n = 0;
    visit_params([&](const std::string&, Tensor<S>& t) { n += t.numel(); });
    return n;
  }

  StageWeights<S>& stage(int64_t i) { return wswt_.at(size_t(i - 1)); }
  const StageWeights<S>& stage(int64_t i) const { return wswt_.at(size_t(i - 1)); }

 private:
  ModelConfig cfg_;
  Tensor<S> conv_in_w_, conv_in_b_;
  std::vector<ResidualBlockWeights<S>> enc_rb_;
  std::vector<Tensor<S>> down_w_, down_b_;
  std::vector<StageWeights<S>> wswt_;
  ResidualBlockWeights<S> dec_bottom_;
  std::vector<Tensor<S>> up_w_, up_b_;  // ordered from the deepest level up
  std::vector<ResidualBlockWeights<S>> dec_rb_;
  Tensor<S> conv_out_w_, conv_out_b_;
};

}  // namespace waveden
