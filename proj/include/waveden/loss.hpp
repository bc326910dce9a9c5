#pragma once

// Training losses. The default Charbonnier form averages sqrt(d^2 + eps^2)
// per element; the global form takes a single root over the summed squared
// residual. L1 is kept as an ablation alternative.

#include "waveden/ops.hpp"

namespace waveden {

enum class LossKind { charbonnier, charbonnier_global, l1 };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::charbonnier: return "charbonnier";
    case LossKind::charbonnier_global: return "charbonnier_global";
    case LossKind::l1: return "l1";
  }
  return "?";
}

template <class S>
Tensor<S> charbonnier_loss(const Tensor<S>& pred, const Tensor<S>& gt, S eps,
                           bool global_norm = false) {
  detail::binary_shape_check("charbonnier_loss", pred, gt);
  detail::check(eps >= S(0), "charbonnier_loss: eps must be non-negative");
  Tensor<S> d = sub(pred, gt);
  if (global_norm) return sqrt_elem(add_scalar(sum(mul(d, d)), eps * eps));
  return mean(sqrt_elem(add_scalar(mul(d, d), eps * eps)));
}

template <class S>
Tensor<S> l1_loss(const Tensor<S>& pred, const Tensor<S>& gt) {
  detail::binary_shape_check("l1_loss", pred, gt);
  return mean(abs_elem(sub(pred, gt)));
}

template <class S>
Tensor<S> compute_loss(LossKind kind, const Tensor<S>& pred, const Tensor<S>& gt, S eps) {
  switch (kind) {
    case LossKind::charbonnier: return charbonnier_loss(pred, gt, eps, false);
    case LossKind::charbonnier_global: return charbonnier_loss(pred, gt, eps, true);
    case LossKind::l1: return l1_loss(pred, gt);
  }
  detail::fail("compute_loss: unknown loss kind");
}

}  // namespace waveden
