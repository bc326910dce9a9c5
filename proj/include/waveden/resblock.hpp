#pragma once

// Residual block: three 3x3 convolutions with two interleaved leaky ReLUs and
// an identity skip (1x1-projected when the channel count changes).

#include <cmath>
#include <functional>
#include <string>

#include "waveden/ops.hpp"
#include "waveden/rng.hpp"

namespace waveden {

namespace detail {

template <class S>
Tensor<S> conv_weight(int64_t out_ch, int64_t in_ch, int64_t k, Rng rng) {
  Tensor<S> w = Tensor<S>::zeros({out_ch, in_ch, k, k}, true);
  const double bound = 1.0 / std::sqrt(double(in_ch * k * k));
  for (S& v : w.mutable_data()) v = S(rng.uniform(-bound, bound));
  return w;
}

}  // namespace detail

template <class S>
struct ResidualBlockWeights {
  Tensor<S> w1, b1, w2, b2, w3, b3;
  Tensor<S> wskip, bskip;  // only when in_ch != out_ch
  S slope = S(0.2);

  static ResidualBlockWeights create(int64_t in_ch, int64_t out_ch, S slope, Rng rng) {
    ResidualBlockWeights rb;
    rb.slope = slope;
    rb.w1 = detail::conv_weight<S>(out_ch, in_ch, 3, rng.split(0));
    rb.b1 = Tensor<S>::zeros({out_ch}, true);
    rb.w2 = detail::conv_weight<S>(out_ch, out_ch, 3, rng.split(1));
    rb.b2 = Tensor<S>::zeros({out_ch}, true);
    rb.w3 = detail::conv_weight<S>(out_ch, out_ch, 3, rng.split(2));
    rb.b3 = Tensor<S>::zeros({out_ch}, true);
    if (in_ch != out_ch) {
      rb.wskip = detail::conv_weight<S>(out_ch, in_ch, 1, rng.split(3));
      rb.bskip = Tensor<S>::zeros({out_ch}, true);
    }
    return rb;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = conv2d(x, w1, b1, 1, 1);
    y = leaky_relu(y, slope);
    y = conv2d(y, w2, b2, 1, 1);
    y = leaky_relu(y, slope);
    y = conv2d(y, w3, b3, 1, 1);
    Tensor<S> skip = wskip.defined() ? conv2d(x, wskip, bskip, 1, 0) : x;
    return add(skip, y);
  }

  void visit_params(const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<S>&)>& fn) {
    fn(prefix + ".c1.w", w1);
    fn(prefix + ".c1.b", b1);
    fn(prefix + ".c2.w", w2);
    fn(prefix + ".c2.b", b2);
    fn(prefix + ".c3.w", w3);
    fn(prefix + ".c3.b", b3);
    if (wskip.defined()) {
      fn(prefix + ".skip.w", wskip);
      fn(prefix + ".skip.b", bskip);
    }
  }
};

}  // namespace waveden
