#pragma once

// Differentiable primitive operations on Tensor<S>. Backward closures work on
// raw buffers (no graph construction inside a backward pass) and accumulate
// only into inputs that require grad.

#include <cmath>
#include <cstring>

#include "waveden/tensor.hpp"

namespace waveden {

namespace detail {

template <class S>
void binary_shape_check(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class S>
void accumulate(Storage<S>& dst, const S* src, int64_t n) {
  auto& g = dst.grad_buffer();
  for (int64_t i = 0; i < n; ++i) g[size_t(i)] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::binary_shape_check("add", a, b);
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = a.data()[size_t(i)] + b.data()[size_t(i)];
  return detail::make_result<S>(a.shape(), std::move(out), "add", {a, b},
                                [a, b, n](detail::Storage<S>& o) {
                                  if (a.st_->requires_grad) detail::accumulate(*a.st_, o.grad.data(), n);
                                  if (b.st_->requires_grad) detail::accumulate(*b.st_, o.grad.data(), n);
                                });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::binary_shape_check("sub", a, b);
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = a.data()[size_t(i)] - b.data()[size_t(i)];
  return detail::make_result<S>(a.shape(), std::move(out), "sub", {a, b},
                                [a, b, n](detail::Storage<S>& o) {
                                  if (a.st_->requires_grad) detail::accumulate(*a.st_, o.grad.data(), n);
                                  if (b.st_->requires_grad) {
                                    auto& g = b.st_->grad_buffer();
                                    for (int64_t i = 0; i < n; ++i) g[size_t(i)] -= o.grad[size_t(i)];
                                  }
                                });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::binary_shape_check("mul", a, b);
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = a.data()[size_t(i)] * b.data()[size_t(i)];
  return detail::make_result<S>(a.shape(), std::move(out), "mul", {a, b},
                                [a, b, n](detail::Storage<S>& o) {
                                  if (a.st_->requires_grad) {
                                    auto& g = a.st_->grad_buffer();
                                    for (int64_t i = 0; i < n; ++i)
                                      g[size_t(i)] += o.grad[size_t(i)] * b.st_->data[size_t(i)];
                                  }
                                  if (b.st_->requires_grad) {
                                    auto& g = b.st_->grad_buffer();
                                    for (int64_t i = 0; i < n; ++i)
                                      g[size_t(i)] += o.grad[size_t(i)] * a.st_->data[size_t(i)];
                                  }
                                });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = c * a.data()[size_t(i)];
  return detail::make_result<S>(a.shape(), std::move(out), "scale", {a},
                                [a, c, n](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t i = 0; i < n; ++i) g[size_t(i)] += c * o.grad[size_t(i)];
                                });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = a.data()[size_t(i)] + c;
  return detail::make_result<S>(a.shape(), std::move(out), "add_scalar", {a},
                                [a, n](detail::Storage<S>& o) {
                                  if (a.st_->requires_grad) detail::accumulate(*a.st_, o.grad.data(), n);
                                });
}

template <class S>
Tensor<S> sqrt_elem(const Tensor<S>& a) {
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = std::sqrt(a.data()[size_t(i)]);
  return detail::make_result<S>(a.shape(), std::move(out), "sqrt", {a},
                                [a, n](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t i = 0; i < n; ++i)
                                    g[size_t(i)] += o.grad[size_t(i)] * S(0.5) / o.data[size_t(i)];
                                });
}

template <class S>
Tensor<S> abs_elem(const Tensor<S>& a) {
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) out[size_t(i)] = std::abs(a.data()[size_t(i)]);
  return detail::make_result<S>(a.shape(), std::move(out), "abs", {a},
                                [a, n](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t i = 0; i < n; ++i) {
                                    const S x = a.st_->data[size_t(i)];
                                    const S s = x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
                                    g[size_t(i)] += o.grad[size_t(i)] * s;
                                  }
                                });
}

template <class S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
  const int64_t n = a.numel();
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const S x = a.data()[size_t(i)];
    out[size_t(i)] = x > S(0) ? x : slope * x;
  }
  return detail::make_result<S>(a.shape(), std::move(out), "leaky_relu", {a},
                                [a, slope, n](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t i = 0; i < n; ++i) {
                                    const S x = a.st_->data[size_t(i)];
                                    g[size_t(i)] += o.grad[size_t(i)] * (x > S(0) ? S(1) : slope);
                                  }
                                });
}

// Exact (erf-based) GELU.
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  const int64_t n = a.numel();
  const S inv_sqrt2 = S(0.70710678118654752440);
  auto out = std::vector<S>(size_t(n));
  for (int64_t i = 0; i < n; ++i) {
    const S x = a.data()[size_t(i)];
    out[size_t(i)] = S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
  }
  return detail::make_result<S>(
      a.shape(), std::move(out), "gelu", {a}, [a, n, inv_sqrt2](detail::Storage<S>& o) {
        if (!a.st_->requires_grad) return;
        const S inv_sqrt2pi = S(0.39894228040143267794);
        auto& g = a.st_->grad_buffer();
        for (int64_t i = 0; i < n; ++i) {
          const S x = a.st_->data[size_t(i)];
          const S cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
          const S pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
          g[size_t(i)] += o.grad[size_t(i)] * (cdf + x * pdf);
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.data()) acc += v;
  const int64_t n = a.numel();
  return detail::make_result<S>({}, {acc}, "sum", {a}, [a, n](detail::Storage<S>& o) {
    if (!a.st_->requires_grad) return;
    const S g0 = o.grad[0];
    auto& g = a.st_->grad_buffer();
    for (int64_t i = 0; i < n; ++i) g[size_t(i)] += g0;
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.data()) acc += v;
  const int64_t n = a.numel();
  acc /= S(n);
  return detail::make_result<S>({}, {acc}, "mean", {a}, [a, n](detail::Storage<S>& o) {
    if (!a.st_->requires_grad) return;
    const S g0 = o.grad[0] / S(n);
    auto& g = a.st_->grad_buffer();
    for (int64_t i = 0; i < n; ++i) g[size_t(i)] += g0;
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  detail::check(detail::shape_numel(shape) == a.numel(),
                "reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                    detail::shape_str(shape));
  std::vector<S> out(a.data().begin(), a.data().end());
  const int64_t n = a.numel();
  return detail::make_result<S>(std::move(shape), std::move(out), "reshape", {a},
                                [a, n](detail::Storage<S>& o) {
                                  if (a.st_->requires_grad) detail::accumulate(*a.st_, o.grad.data(), n);
                                });
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, std::vector<int64_t> perm) {
  const int64_t r = a.ndim();
  detail::check(int64_t(perm.size()) == r, "permute: axis list rank mismatch");
  std::vector<bool> used(size_t(r), false);
  auto oshape = Shape(size_t(r));
  for (int64_t d = 0; d < r; ++d) {
    const int64_t p = perm[size_t(d)];
    detail::check(p >= 0 && p < r && !used[size_t(p)], "permute: invalid axis list");
    used[size_t(p)] = true;
    oshape[size_t(d)] = a.extent(p);
  }
  // Output strides as seen per input axis.
  std::vector<int64_t> ostride(size_t(r), 0);
  {
    auto s = std::vector<int64_t>(size_t(r));
    int64_t acc = 1;
    for (int64_t d = r - 1; d >= 0; --d) {
      s[size_t(d)] = acc;
      acc *= oshape[size_t(d)];
    }
    for (int64_t d = 0; d < r; ++d) ostride[size_t(perm[size_t(d)])] = s[size_t(d)];
  }
  const int64_t n = a.numel();
  const Shape ishape = a.shape();
  auto out = std::vector<S>(size_t(n));
  {
    std::vector<int64_t> idx(size_t(r), 0);
    int64_t flat_out = 0;
    for (int64_t flat_in = 0; flat_in < n; ++flat_in) {
      out[size_t(flat_out)] = a.data()[size_t(flat_in)];
      for (int64_t d = r - 1; d >= 0; --d) {
        flat_out += ostride[size_t(d)];
        if (++idx[size_t(d)] < ishape[size_t(d)]) break;
        flat_out -= ostride[size_t(d)] * ishape[size_t(d)];
        idx[size_t(d)] = 0;
      }
    }
  }
  return detail::make_result<S>(
      std::move(oshape), std::move(out), "permute", {a},
      [a, ostride, ishape, n, r](detail::Storage<S>& o) {
        if (!a.st_->requires_grad) return;
        auto& g = a.st_->grad_buffer();
        std::vector<int64_t> idx(size_t(r), 0);
        int64_t flat_out = 0;
        for (int64_t flat_in = 0; flat_in < n; ++flat_in) {
          g[size_t(flat_in)] += o.grad[size_t(flat_out)];
          for (int64_t d = r - 1; d >= 0; --d) {
            flat_out += ostride[size_t(d)];
            if (++idx[size_t(d)] < ishape[size_t(d)]) break;
            flat_out -= ostride[size_t(d)] * ishape[size_t(d)];
            idx[size_t(d)] = 0;
          }
        }
      });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  detail::check(a.ndim() == 2, "transpose: expects a matrix, got " + detail::shape_str(a.shape()));
  return permute(a, {1, 0});
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int64_t axis) {
  detail::check(!parts.empty(), "concat: no inputs");
  const int64_t r = parts[0].ndim();
  detail::check(axis >= 0 && axis < r, "concat: axis out of range");
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    detail::check(p.ndim() == r, "concat: rank mismatch");
    for (int64_t d = 0; d < r; ++d)
      if (d != axis)
        detail::check(p.extent(d) == parts[0].extent(d),
                      "concat: shape mismatch " + detail::shape_str(p.shape()) + " vs " +
                          detail::shape_str(parts[0].shape()));
    axis_total += p.extent(axis);
  }
  Shape oshape = parts[0].shape();
  oshape[size_t(axis)] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= oshape[size_t(d)];
  for (int64_t d = axis + 1; d < r; ++d) inner *= oshape[size_t(d)];

  auto out = std::vector<S>(size_t(detail::shape_numel(oshape)));
  const int64_t orow = axis_total * inner;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t prow = p.extent(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * orow + off, p.data().data() + o * prow, size_t(prow) * sizeof(S));
    off += prow;
  }
  return detail::make_result<S>(
      std::move(oshape), std::move(out), "concat", parts,
      [parts, outer, inner, orow, axis](detail::Storage<S>& o) {
        int64_t off = 0;
        for (const auto& p : parts) {
          const int64_t prow = p.extent(axis) * inner;
          if (p.st_->requires_grad) {
            auto& g = p.st_->grad_buffer();
            for (int64_t ou = 0; ou < outer; ++ou)
              for (int64_t i = 0; i < prow; ++i)
                g[size_t(ou * prow + i)] += o.grad[size_t(ou * orow + off + i)];
          }
          off += prow;
        }
      });
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int64_t axis, int64_t start, int64_t len) {
  const int64_t r = a.ndim();
  detail::check(axis >= 0 && axis < r, "slice: axis out of range");
  detail::check(start >= 0 && len > 0 && start + len <= a.extent(axis),
                "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                    ") outside extent " + std::to_string(a.extent(axis)));
  Shape oshape = a.shape();
  oshape[size_t(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= a.extent(d);
  for (int64_t d = axis + 1; d < r; ++d) inner *= a.extent(d);
  const int64_t arow = a.extent(axis) * inner, orow = len * inner;
  auto out = std::vector<S>(size_t(outer * orow));
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * orow, a.data().data() + o * arow + start * inner,
                size_t(orow) * sizeof(S));
  return detail::make_result<S>(std::move(oshape), std::move(out), "slice", {a},
                                [a, outer, inner, arow, orow, start](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t ou = 0; ou < outer; ++ou)
                                    for (int64_t i = 0; i < orow; ++i)
                                      g[size_t(ou * arow + start * inner + i)] +=
                                          o.grad[size_t(ou * orow + i)];
                                });
}

// Zero padding of the two trailing (spatial) axes.
template <class S>
Tensor<S> pad2d(const Tensor<S>& a, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  detail::check(a.ndim() == 3, "pad2d: expects CxHxW, got " + detail::shape_str(a.shape()));
  detail::check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad2d: negative padding");
  const int64_t c = a.extent(0), h = a.extent(1), w = a.extent(2);
  const int64_t oh = h + top + bottom, ow = w + left + right;
  auto out = std::vector<S>(size_t(c * oh * ow), S(0));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      std::memcpy(out.data() + (ch * oh + y + top) * ow + left,
                  a.data().data() + (ch * h + y) * w, size_t(w) * sizeof(S));
  return detail::make_result<S>({c, oh, ow}, std::move(out), "pad2d", {a},
                                [a, c, h, w, oh, ow, top, left](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t ch = 0; ch < c; ++ch)
                                    for (int64_t y = 0; y < h; ++y)
                                      for (int64_t x = 0; x < w; ++x)
                                        g[size_t((ch * h + y) * w + x)] +=
                                            o.grad[size_t((ch * oh + y + top) * ow + x + left)];
                                });
}

// Cyclic shift along one axis: out[i] = x[(i - shift) mod n].
template <class S>
Tensor<S> roll(const Tensor<S>& a, int64_t axis, int64_t shift) {
  const int64_t r = a.ndim();
  detail::check(axis >= 0 && axis < r, "roll: axis out of range");
  const int64_t n = a.extent(axis);
  const int64_t s = ((shift % n) + n) % n;
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= a.extent(d);
  for (int64_t d = axis + 1; d < r; ++d) inner *= a.extent(d);
  auto out = std::vector<S>(size_t(a.numel()));
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < n; ++i) {
      const int64_t src = (i - s + n) % n;
      std::memcpy(out.data() + (o * n + i) * inner, a.data().data() + (o * n + src) * inner,
                  size_t(inner) * sizeof(S));
    }
  return detail::make_result<S>(a.shape(), std::move(out), "roll", {a},
                                [a, outer, inner, n, s](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t ou = 0; ou < outer; ++ou)
                                    for (int64_t i = 0; i < n; ++i) {
                                      const int64_t dst = (i + s) % n;
                                      const S* go = o.grad.data() + (ou * n + dst) * inner;
                                      S* gi = g.data() + (ou * n + i) * inner;
                                      for (int64_t k = 0; k < inner; ++k) gi[k] += go[k];
                                    }
                                });
}

// Cyclic shift of the two trailing spatial axes of a CxHxW map.
template <class S>
Tensor<S> roll2d(const Tensor<S>& a, int64_t row_shift, int64_t col_shift) {
  detail::check(a.ndim() == 3, "roll2d: expects CxHxW, got " + detail::shape_str(a.shape()));
  return roll(roll(a, 1, row_shift), 2, col_shift);
}

// Stacks `times` copies along a new leading axis.
template <class S>
Tensor<S> repeat_outer(const Tensor<S>& a, int64_t times) {
  detail::check(times > 0, "repeat_outer: times must be positive");
  const int64_t n = a.numel();
  Shape oshape;
  oshape.push_back(times);
  for (int64_t e : a.shape()) oshape.push_back(e);
  auto out = std::vector<S>(size_t(times * n));
  for (int64_t t = 0; t < times; ++t)
    std::memcpy(out.data() + t * n, a.data().data(), size_t(n) * sizeof(S));
  return detail::make_result<S>(std::move(oshape), std::move(out), "repeat_outer", {a},
                                [a, times, n](detail::Storage<S>& o) {
                                  if (!a.st_->requires_grad) return;
                                  auto& g = a.st_->grad_buffer();
                                  for (int64_t t = 0; t < times; ++t)
                                    for (int64_t i = 0; i < n; ++i)
                                      g[size_t(i)] += o.grad[size_t(t * n + i)];
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check(a.ndim() == 2 && b.ndim() == 2 && a.extent(1) == b.extent(0),
                "matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                    detail::shape_str(b.shape()));
  const int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  detail::matmul_macs() += uint64_t(m) * uint64_t(k) * uint64_t(n);
  auto out = std::vector<S>(size_t(m * n), S(0));
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      const S av = pa[i * k + kk];
      const S* brow = pb + kk * n;
      S* orow = out.data() + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::make_result<S>(
      {m, n}, std::move(out), "matmul", {a, b}, [a, b, m, k, n](detail::Storage<S>& o) {
        // dA = dC * B^T, dB = A^T * dC
        if (a.st_->requires_grad) {
          auto& ga = a.st_->grad_buffer();
          const S* pb = b.st_->data.data();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              const S* grow = o.grad.data() + i * n;
              const S* brow = pb + kk * n;
              S acc = S(0);
              for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[size_t(i * k + kk)] += acc;
            }
        }
        if (b.st_->requires_grad) {
          auto& gb = b.st_->grad_buffer();
          const S* pa = a.st_->data.data();
          for (int64_t i = 0; i < m; ++i)
            for (int64_t kk = 0; kk < k; ++kk) {
              const S av = pa[i * k + kk];
              const S* grow = o.grad.data() + i * n;
              S* gbrow = gb.data() + kk * n;
              for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
        }
      });
}

// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check(a.ndim() == 3 && b.ndim() == 3 && a.extent(0) == b.extent(0) &&
                    a.extent(2) == b.extent(1),
                "bmm: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                    detail::shape_str(b.shape()));
  const int64_t bs = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  detail::matmul_macs() += uint64_t(bs) * uint64_t(m) * uint64_t(k) * uint64_t(n);
  auto out = std::vector<S>(size_t(bs * m * n), S(0));
  for (int64_t t = 0; t < bs; ++t) {
    const S* pa = a.data().data() + t * m * k;
    const S* pb = b.data().data() + t * k * n;
    S* po = out.data() + t * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const S av = pa[i * k + kk];
        const S* brow = pb + kk * n;
        S* orow = po + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
  }
  return detail::make_result<S>(
      {bs, m, n}, std::move(out), "bmm", {a, b}, [a, b, bs, m, k, n](detail::Storage<S>& o) {
        for (int64_t t = 0; t < bs; ++t) {
          const S* go = o.grad.data() + t * m * n;
          if (a.st_->requires_grad) {
            S* ga = a.st_->grad_buffer().data() + t * m * k;
            const S* pb = b.st_->data.data() + t * k * n;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t kk = 0; kk < k; ++kk) {
                const S* grow = go + i * n;
                const S* brow = pb + kk * n;
                S acc = S(0);
                for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                ga[i * k + kk] += acc;
              }
          }
          if (b.st_->requires_grad) {
            S* gb = b.st_->grad_buffer().data() + t * k * n;
            const S* pa = a.st_->data.data() + t * m * k;
            for (int64_t i = 0; i < m; ++i)
              for (int64_t kk = 0; kk < k; ++kk) {
                const S av = pa[i * k + kk];
                const S* grow = go + i * n;
                S* gbrow = gb + kk * n;
                for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
              }
          }
        }
      });
}

// Adds a length-C bias vector to every row of [..., C].
template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& b) {
  detail::check(b.ndim() == 1 && x.ndim() >= 1 && x.extent(x.ndim() - 1) == b.extent(0),
                "add_row_bias: bias " + detail::shape_str(b.shape()) + " does not match " +
                    detail::shape_str(x.shape()));
  const int64_t c = b.extent(0), rows = x.numel() / c;
  auto out = std::vector<S>(size_t(x.numel()));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j)
      out[size_t(r * c + j)] = x.data()[size_t(r * c + j)] + b.data()[size_t(j)];
  return detail::make_result<S>(x.shape(), std::move(out), "add_row_bias", {x, b},
                                [x, b, rows, c](detail::Storage<S>& o) {
                                  if (x.st_->requires_grad)
                                    detail::accumulate(*x.st_, o.grad.data(), rows * c);
                                  if (b.st_->requires_grad) {
                                    auto& g = b.st_->grad_buffer();
                                    for (int64_t r = 0; r < rows; ++r)
                                      for (int64_t j = 0; j < c; ++j)
                                        g[size_t(j)] += o.grad[size_t(r * c + j)];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Normalization / softmax

namespace detail {

template <class S>
Tensor<S> softmax_last(const Tensor<S>& a) {
  const int64_t n = a.extent(a.ndim() - 1);
  const int64_t rows = a.numel() / n;
  auto out = std::vector<S>(size_t(a.numel()));
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = a.data().data() + r * n;
    S* y = out.data() + r * n;
    S mx = x[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    S denom = S(0);
    for (int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      denom += y[j];
    }
    for (int64_t j = 0; j < n; ++j) y[j] /= denom;
  }
  return make_result<S>(a.shape(), std::move(out), "softmax", {a},
                        [a, rows, n](Storage<S>& o) {
                          if (!a.st_->requires_grad) return;
                          auto& g = a.st_->grad_buffer();
                          for (int64_t r = 0; r < rows; ++r) {
                            const S* y = o.data.data() + r * n;
                            const S* go = o.grad.data() + r * n;
                            S dot = S(0);
                            for (int64_t j = 0; j < n; ++j) dot += go[j] * y[j];
                            for (int64_t j = 0; j < n; ++j)
                              g[size_t(r * n + j)] += y[j] * (go[j] - dot);
                          }
                        });
}

template <class S>
Tensor<S> layer_norm_last(const Tensor<S>& a, S eps, const Tensor<S>& gamma,
                          const Tensor<S>& beta) {
  const int64_t n = a.extent(a.ndim() - 1);
  const int64_t rows = a.numel() / n;
  check(gamma.ndim() == 1 && gamma.extent(0) == n && beta.ndim() == 1 && beta.extent(0) == n,
        "layer_norm: affine parameters must have length " + std::to_string(n));
  auto out = std::vector<S>(size_t(a.numel()));
  auto norm = std::make_shared<std::vector<S>>(size_t(a.numel()));  // saved (x-mu)/sd
  auto inv = std::make_shared<std::vector<S>>(size_t(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = a.data().data() + r * n;
    S mu = S(0);
    for (int64_t j = 0; j < n; ++j) mu += x[j];
    mu /= S(n);
    S var = S(0);
    for (int64_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= S(n);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv)[size_t(r)] = is;
    for (int64_t j = 0; j < n; ++j) {
      const S y = (x[j] - mu) * is;
      (*norm)[size_t(r * n + j)] = y;
      out[size_t(r * n + j)] = gamma.data()[size_t(j)] * y + beta.data()[size_t(j)];
    }
  }
  return make_result<S>(
      a.shape(), std::move(out), "layer_norm", {a, gamma, beta},
      [a, gamma, beta, rows, n, norm, inv](Storage<S>& o) {
        for (int64_t r = 0; r < rows; ++r) {
          const S* go = o.grad.data() + r * n;
          const S* y = norm->data() + r * n;
          if (a.st_->requires_grad) {
            auto& gx = a.st_->grad_buffer();
            S mean_gy = S(0), mean_gyy = S(0);
            for (int64_t j = 0; j < n; ++j) {
              const S gy = go[j] * gamma.st_->data[size_t(j)];
              mean_gy += gy;
              mean_gyy += gy * y[j];
            }
            mean_gy /= S(n);
            mean_gyy /= S(n);
            const S is = (*inv)[size_t(r)];
            for (int64_t j = 0; j < n; ++j) {
              const S gy = go[j] * gamma.st_->data[size_t(j)];
              gx[size_t(r * n + j)] += is * (gy - mean_gy - y[j] * mean_gyy);
            }
          }
          if (gamma.st_->requires_grad) {
            auto& gg = gamma.st_->grad_buffer();
            for (int64_t j = 0; j < n; ++j) gg[size_t(j)] += go[j] * y[j];
          }
          if (beta.st_->requires_grad) {
            auto& gb = beta.st_->grad_buffer();
            for (int64_t j = 0; j < n; ++j) gb[size_t(j)] += go[j];
          }
        }
      });
}

template <class S>
Tensor<S> move_axis_last(const Tensor<S>& a, int64_t axis) {
  std::vector<int64_t> perm;
  for (int64_t d = 0; d < a.ndim(); ++d)
    if (d != axis) perm.push_back(d);
  perm.push_back(axis);
  return permute(a, perm);
}

template <class S>
Tensor<S> move_last_axis_back(const Tensor<S>& a, int64_t axis) {
  const int64_t r = a.ndim();
  std::vector<int64_t> perm(size_t(r), 0);
  int64_t src = 0;
  for (int64_t d = 0; d < r; ++d) perm[size_t(d)] = (d == axis) ? r - 1 : src++;
  return permute(a, perm);
}

}  // namespace detail

template <class S>
Tensor<S> softmax(const Tensor<S>& a, int64_t axis) {
  detail::check(axis >= 0 && axis < a.ndim(), "softmax: axis out of range for " +
                                                  detail::shape_str(a.shape()));
  if (axis == a.ndim() - 1) return detail::softmax_last(a);
  return detail::move_last_axis_back(detail::softmax_last(detail::move_axis_last(a, axis)), axis);
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& a, int64_t axis, S eps, const Tensor<S>& gamma,
                     const Tensor<S>& beta) {
  detail::check(axis >= 0 && axis < a.ndim(), "layer_norm: axis out of range for " +
                                                  detail::shape_str(a.shape()));
  if (axis == a.ndim() - 1) return detail::layer_norm_last(a, eps, gamma, beta);
  return detail::move_last_axis_back(
      detail::layer_norm_last(detail::move_axis_last(a, axis), eps, gamma, beta), axis);
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation convention, no kernel flip)

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int64_t stride,
                 int64_t pad) {
  detail::check(x.ndim() == 3, "conv2d: input must be CxHxW, got " + detail::shape_str(x.shape()));
  detail::check(w.ndim() == 4, "conv2d: weight must be OxIxKxK, got " + detail::shape_str(w.shape()));
  const int64_t ci = x.extent(0), h = x.extent(1), ww = x.extent(2);
  const int64_t co = w.extent(0), k = w.extent(2);
  detail::check(w.extent(1) == ci, "conv2d: weight expects " + std::to_string(w.extent(1)) +
                                       " input channels, input has " + std::to_string(ci));
  detail::check(w.extent(3) == k && k >= 1 && k <= 4, "conv2d: kernel must be kxk with k in 1..4");
  detail::check(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  detail::check(h + 2 * pad >= k && ww + 2 * pad >= k, "conv2d: input smaller than kernel");
  detail::check((h + 2 * pad - k) % stride == 0 && (ww + 2 * pad - k) % stride == 0,
                "conv2d: extents " + detail::shape_str(x.shape()) +
                    " do not give exact output size for k=" + std::to_string(k) +
                    " stride=" + std::to_string(stride) + " pad=" + std::to_string(pad));
  detail::check(bias.ndim() == 1 && bias.extent(0) == co,
                "conv2d: bias must have one entry per output channel");
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (ww + 2 * pad - k) / stride + 1;

  auto out = std::vector<S>(size_t(co * oh * ow));
  for (int64_t c = 0; c < co; ++c)
    std::fill_n(out.data() + c * oh * ow, oh * ow, bias.data()[size_t(c)]);

  const S* px = x.data().data();
  const S* pw = w.data().data();
  for (int64_t c = 0; c < co; ++c)
    for (int64_t ic = 0; ic < ci; ++ic)
      for (int64_t u = 0; u < k; ++u)
        for (int64_t v = 0; v < k; ++v) {
          const S wv = pw[((c * ci + ic) * k + u) * k + v];
          if (wv == S(0)) continue;
          for (int64_t y = 0; y < oh; ++y) {
            const int64_t iy = y * stride - pad + u;
            if (iy < 0 || iy >= h) continue;
            // valid ox range so that ix = ox*stride - pad + v stays in bounds
            int64_t x0 = 0;
            while (x0 * stride - pad + v < 0) ++x0;
            int64_t x1 = ow - 1;
            while (x1 >= 0 && x1 * stride - pad + v >= ww) --x1;
            const S* xrow = px + (ic * h + iy) * ww;
            S* orow = out.data() + (c * oh + y) * ow;
            int64_t ix = x0 * stride - pad + v;
            for (int64_t ox = x0; ox <= x1; ++ox, ix += stride) orow[ox] += wv * xrow[ix];
          }
        }

  return detail::make_result<S>(
      {co, oh, ow}, std::move(out), "conv2d", {x, w, bias},
      [x, w, bias, ci, h, ww, co, k, stride, pad, oh, ow](detail::Storage<S>& o) {
        const S* px = x.st_->data.data();
        const S* pw = w.st_->data.data();
        const bool need_x = x.st_->requires_grad;
        const bool need_w = w.st_->requires_grad;
        S* gx = need_x ? x.st_->grad_buffer().data() : nullptr;
        S* gw = need_w ? w.st_->grad_buffer().data() : nullptr;
        if (need_x || need_w) {
          for (int64_t c = 0; c < co; ++c)
            for (int64_t ic = 0; ic < ci; ++ic)
              for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v) {
                  const S wv = pw[((c * ci + ic) * k + u) * k + v];
                  S wacc = S(0);
                  for (int64_t y = 0; y < oh; ++y) {
                    const int64_t iy = y * stride - pad + u;
                    if (iy < 0 || iy >= h) continue;
                    int64_t x0 = 0;
                    while (x0 * stride - pad + v < 0) ++x0;
                    int64_t x1 = ow - 1;
                    while (x1 >= 0 && x1 * stride - pad + v >= ww) --x1;
                    const S* grow = o.grad.data() + (c * oh + y) * ow;
                    const int64_t base = (ic * h + iy) * ww;
                    int64_t ix = x0 * stride - pad + v;
                    for (int64_t ox = x0; ox <= x1; ++ox, ix += stride) {
                      const S g = grow[ox];
                      if (need_x) gx[base + ix] += wv * g;
                      if (need_w) wacc += g * px[base + ix];
                    }
                  }
                  if (need_w) gw[((c * ci + ic) * k + u) * k + v] += wacc;
                }
        }
        if (bias.st_->requires_grad) {
          auto& gb = bias.st_->grad_buffer();
          for (int64_t c = 0; c < co; ++c) {
            S acc = S(0);
            const S* grow = o.grad.data() + c * oh * ow;
            for (int64_t i = 0; i < oh * ow; ++i) acc += grow[i];
            gb[size_t(c)] += acc;
          }
        }
      });
}

// Transposed convolution, stride = kernel step, no padding. Weight layout is
// [C_in, C_out, k, k]; output extents are (H-1)*stride + k.
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                           int64_t stride) {
  detail::check(x.ndim() == 3 && w.ndim() == 4, "conv_transpose2d: bad ranks");
  const int64_t ci = x.extent(0), h = x.extent(1), ww = x.extent(2);
  detail::check(w.extent(0) == ci, "conv_transpose2d: weight expects " +
                                       std::to_string(w.extent(0)) + " input channels, input has " +
                                       std::to_string(ci));
  const int64_t co = w.extent(1), k = w.extent(2);
  detail::check(w.extent(3) == k && stride >= 1, "conv_transpose2d: invalid kernel/stride");
  detail::check(bias.ndim() == 1 && bias.extent(0) == co,
                "conv_transpose2d: bias must have one entry per output channel");
  const int64_t oh = (h - 1) * stride + k;
  const int64_t ow = (ww - 1) * stride + k;
  auto out = std::vector<S>(size_t(co * oh * ow));
  for (int64_t c = 0; c < co; ++c)
    std::fill_n(out.data() + c * oh * ow, oh * ow, bias.data()[size_t(c)]);
  const S* px = x.data().data();
  const S* pw = w.data().data();
  for (int64_t ic = 0; ic < ci; ++ic)
    for (int64_t c = 0; c < co; ++c)
      for (int64_t u = 0; u < k; ++u)
        for (int64_t v = 0; v < k; ++v) {
          const S wv = pw[((ic * co + c) * k + u) * k + v];
          for (int64_t y = 0; y < h; ++y) {
            const S* xrow = px + (ic * h + y) * ww;
            S* orow = out.data() + (c * oh + y * stride + u) * ow + v;
            for (int64_t xx = 0; xx < ww; ++xx) orow[xx * stride] += wv * xrow[xx];
          }
        }
  return detail::make_result<S>(
      {co, oh, ow}, std::move(out), "conv_transpose2d", {x, w, bias},
      [x, w, bias, ci, h, ww, co, k, stride, oh, ow](detail::Storage<S>& o) {
        const S* px = x.st_->data.data();
        const S* pw = w.st_->data.data();
        const bool need_x = x.st_->requires_grad;
        const bool need_w = w.st_->requires_grad;
        S* gx = need_x ? x.st_->grad_buffer().data() : nullptr;
        S* gw = need_w ? w.st_->grad_buffer().data() : nullptr;
        if (need_x || need_w) {
          for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t c = 0; c < co; ++c)
              for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v) {
                  const S wv = pw[((ic * co + c) * k + u) * k + v];
                  S wacc = S(0);
                  for (int64_t y = 0; y < h; ++y) {
                    const S* grow = o.grad.data() + (c * oh + y * stride + u) * ow + v;
                    const S* xrow = px + (ic * h + y) * ww;
                    S* gxrow = need_x ? gx + (ic * h + y) * ww : nullptr;
                    for (int64_t xx = 0; xx < ww; ++xx) {
                      const S g = grow[xx * stride];
                      if (need_x) gxrow[xx] += wv * g;
                      if (need_w) wacc += g * xrow[xx];
                    }
                  }
                  if (need_w) gw[((ic * co + c) * k + u) * k + v] += wacc;
                }
        }
        if (bias.st_->requires_grad) {
          auto& gb = bias.st_->grad_buffer();
          for (int64_t c = 0; c < co; ++c) {
            S acc = S(0);
            const S* grow = o.grad.data() + c * oh * ow;
            for (int64_t i = 0; i < oh * ow; ++i) acc += grow[i];
            gb[size_t(c)] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Windowing

// CxHxW -> [N, M*M, C] with windows enumerated row-major and tokens in
// row-major scan order inside each window.
template <class S>
Tensor<S> window_partition(const Tensor<S>& x, int64_t m) {
  detail::check(x.ndim() == 3, "window_partition: expects CxHxW, got " +
                                   detail::shape_str(x.shape()));
  const int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  detail::check(m >= 1 && h % m == 0 && w % m == 0,
                "window_partition: extents " + std::to_string(h) + "x" + std::to_string(w) +
                    " not divisible by window size " + std::to_string(m));
  const int64_t gh = h / m, gw = w / m, nwin = gh * gw, t = m * m;
  auto out = std::vector<S>(size_t(nwin * t * c));
  const S* px = x.data().data();
  for (int64_t wr = 0; wr < gh; ++wr)
    for (int64_t wc = 0; wc < gw; ++wc)
      for (int64_t tr = 0; tr < m; ++tr)
        for (int64_t tc = 0; tc < m; ++tc) {
          const int64_t win = wr * gw + wc, tok = tr * m + tc;
          const int64_t y = wr * m + tr, xx = wc * m + tc;
          S* po = out.data() + (win * t + tok) * c;
          for (int64_t ch = 0; ch < c; ++ch) po[ch] = px[(ch * h + y) * w + xx];
        }
  return detail::make_result<S>(
      {nwin, t, c}, std::move(out), "window_partition", {x},
      [x, c, h, w, m, gh, gw, t](detail::Storage<S>& o) {
        if (!x.st_->requires_grad) return;
        auto& g = x.st_->grad_buffer();
        for (int64_t wr = 0; wr < gh; ++wr)
          for (int64_t wc = 0; wc < gw; ++wc)
            for (int64_t tr = 0; tr < m; ++tr)
              for (int64_t tc = 0; tc < m; ++tc) {
                const int64_t win = wr * gw + wc, tok = tr * m + tc;
                const int64_t y = wr * m + tr, xx = wc * m + tc;
                const S* po = o.grad.data() + (win * t + tok) * c;
                for (int64_t ch = 0; ch < c; ++ch) g[size_t((ch * h + y) * w + xx)] += po[ch];
              }
      });
}

// Inverse of window_partition.
template <class S>
Tensor<S> window_reverse(const Tensor<S>& t, int64_t m, int64_t h, int64_t w) {
  detail::check(t.ndim() == 3, "window_reverse: expects [N, M*M, C]");
  const int64_t nwin = t.extent(0), tok = t.extent(1), c = t.extent(2);
  detail::check(m >= 1 && h % m == 0 && w % m == 0 && tok == m * m &&
                    nwin == (h / m) * (w / m),
                "window_reverse: layout " + detail::shape_str(t.shape()) +
                    " does not tile " + std::to_string(h) + "x" + std::to_string(w) +
                    " with window " + std::to_string(m));
  const int64_t gw = w / m;
  auto out = std::vector<S>(size_t(c * h * w));
  const S* pt = t.data().data();
  for (int64_t win = 0; win < nwin; ++win) {
    const int64_t wr = win / gw, wc = win % gw;
    for (int64_t tr = 0; tr < m; ++tr)
      for (int64_t tc = 0; tc < m; ++tc) {
        const int64_t y = wr * m + tr, xx = wc * m + tc;
        const S* p = pt + (win * tok + tr * m + tc) * c;
        for (int64_t ch = 0; ch < c; ++ch) out[size_t((ch * h + y) * w + xx)] = p[ch];
      }
  }
  return detail::make_result<S>({c, h, w}, std::move(out), "window_reverse", {t},
                                [t, m, h, w, gw, nwin, tok, c](detail::Storage<S>& o) {
                                  if (!t.st_->requires_grad) return;
                                  auto& g = t.st_->grad_buffer();
                                  for (int64_t win = 0; win < nwin; ++win) {
                                    const int64_t wr = win / gw, wc = win % gw;
                                    for (int64_t tr = 0; tr < m; ++tr)
                                      for (int64_t tc = 0; tc < m; ++tc) {
                                        const int64_t y = wr * m + tr, xx = wc * m + tc;
                                        S* p = g.data() + (win * tok + tr * m + tc) * c;
                                        for (int64_t ch = 0; ch < c; ++ch)
                                          p[ch] += o.grad[size_t((ch * h + y) * w + xx)];
                                      }
                                  }
                                });
}

// Realizes the per-window bias [h, M*M, M*M] from the learnable table
// [h, 2M-1, 2M-1]; entry (p1, p2) reads the table at the relative offset of
// the two token coordinates.
template <class S>
Tensor<S> bias_from_table(const Tensor<S>& table, int64_t m) {
  const int64_t span = 2 * m - 1;
  detail::check(table.ndim() == 3 && table.extent(1) == span && table.extent(2) == span,
                "bias_from_table: table must be [heads, 2M-1, 2M-1], got " +
                    detail::shape_str(table.shape()));
  const int64_t heads = table.extent(0), t = m * m;
  auto map = std::vector<int64_t>(size_t(t * t));
  for (int64_t p1 = 0; p1 < t; ++p1)
    for (int64_t p2 = 0; p2 < t; ++p2) {
      const int64_t di = p1 / m - p2 / m + m - 1;
      const int64_t dj = p1 % m - p2 % m + m - 1;
      map[size_t(p1 * t + p2)] = di * span + dj;
    }
  auto out = std::vector<S>(size_t(heads * t * t));
  for (int64_t q = 0; q < heads; ++q) {
    const S* pt = table.data().data() + q * span * span;
    S* po = out.data() + q * t * t;
    for (int64_t i = 0; i < t * t; ++i) po[i] = pt[map[size_t(i)]];
  }
  return detail::make_result<S>({heads, t, t}, std::move(out), "bias_from_table", {table},
                                [table, map, heads, t, span](detail::Storage<S>& o) {
                                  if (!table.st_->requires_grad) return;
                                  auto& g = table.st_->grad_buffer();
                                  for (int64_t q = 0; q < heads; ++q) {
                                    S* gt = g.data() + q * span * span;
                                    const S* go = o.grad.data() + q * t * t;
                                    for (int64_t i = 0; i < t * t; ++i) gt[map[size_t(i)]] += go[i];
                                  }
                                });
}

}  // namespace waveden
