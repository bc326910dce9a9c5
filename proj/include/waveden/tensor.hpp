#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace waveden {

using Shape = std::vector<int64_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline uint64_t& matmul_macs() {
  thread_local uint64_t count = 0;
  return count;
}

template <class S>
struct Node;

// Value storage plus its place in the computation graph. Leaves have no node.
template <class S>
struct Storage {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;
  std::vector<S> grad;  // allocated on first accumulation, same length as data
  std::shared_ptr<Node<S>> node;

  int64_t numel() const { return int64_t(data.size()); }

  std::vector<S>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad;
  }
};

template <class S>
struct Node {
  const char* op;
  std::vector<std::shared_ptr<Storage<S>>> inputs;
  // Reads out.grad and accumulates into the inputs' grad buffers.
  std::function<void(Storage<S>& out)> backprop;
};

}  // namespace detail

// Disables graph construction inside its scope (inference / raw evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Multiply-accumulate counter over matmul/bmm forward passes (attention cost
// instrumentation). Convolutions are deliberately not counted.
inline uint64_t matmul_mac_count() { return detail::matmul_macs(); }
inline void reset_matmul_mac_count() { detail::matmul_macs() = 0; }

// Dense row-major tensor of reals with reverse-mode autodiff. Copies share
// storage; data is immutable after construction except through mutable_data
// (leaf edits by optimizers/tests) and grad buffers.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor filled(Shape shape, S value, bool requires_grad = false) {
    validate_shape(shape);
    auto st = std::make_shared<detail::Storage<S>>();
    st->data.assign(size_t(detail::shape_numel(shape)), value);
    st->shape = std::move(shape);
    st->requires_grad = requires_grad;
    return Tensor(std::move(st));
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    validate_shape(shape);
    detail::check(detail::shape_numel(shape) == int64_t(data.size()),
                  "tensor: data length " + std::to_string(data.size()) +
                      " does not match shape " + detail::shape_str(shape));
    auto st = std::make_shared<detail::Storage<S>>();
    st->shape = std::move(shape);
    st->data = std::move(data);
    st->requires_grad = requires_grad;
    return Tensor(std::move(st));
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  int64_t ndim() const { return int64_t(st_->shape.size()); }
  int64_t extent(int64_t axis) const { return st_->shape[size_t(axis)]; }
  int64_t numel() const { return st_->numel(); }

  std::span<const S> data() const { return st_->data; }
  std::span<S> mutable_data() { return st_->data; }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool v) {
    detail::check(!st_->node, "set_requires_grad: only leaf tensors");
    st_->requires_grad = v;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const S> grad() const { return st_->grad; }
  std::span<S> mutable_grad() { return st_->grad_buffer(); }
  void zero_grad() { st_->grad.clear(); }

  bool is_leaf() const { return st_->node == nullptr; }

  S item() const {
    detail::check(numel() == 1, "item: tensor has " + std::to_string(numel()) + " elements");
    return st_->data[0];
  }

  S at(std::initializer_list<int64_t> idx) const {
    detail::check(int64_t(idx.size()) == ndim(), "at: rank mismatch");
    int64_t flat = 0;
    size_t a = 0;
    for (int64_t i : idx) {
      flat = flat * st_->shape[a] + i;
      ++a;
    }
    return st_->data[size_t(flat)];
  }

  // Reverse-mode sweep from a scalar root. Every reachable node is visited
  // exactly once, in reverse topological order; returns the visit count.
  // Grad buffers of intermediate results are reset first, so repeated calls
  // accumulate only into leaves.
  size_t backward() const;

  std::shared_ptr<detail::Storage<S>> st_;

  explicit Tensor(std::shared_ptr<detail::Storage<S>> st) : st_(std::move(st)) {}

 private:
  static void validate_shape(const Shape& shape) {
    for (int64_t e : shape)
      detail::check(e > 0, "tensor: non-positive extent in " + detail::shape_str(shape));
  }
};

namespace detail {

// Builds an op result. The node (and with it the backward closure) is only
// attached when grad mode is on and some input requires grad.
template <class S>
Tensor<S> make_result(Shape shape, std::vector<S> data, const char* op,
                      const std::vector<Tensor<S>>& inputs,
                      std::function<void(Storage<S>&)> backprop) {
  auto st = std::make_shared<Storage<S>>();
  st->shape = std::move(shape);
  st->data = std::move(data);
  bool needs = false;
  if (grad_mode())
    for (const auto& in : inputs) needs = needs || in.st_->requires_grad;
  if (needs) {
    st->requires_grad = true;
    auto node = std::make_shared<Node<S>>();
    node->op = op;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.st_);
    node->backprop = std::move(backprop);
    st->node = std::move(node);
  }
  return Tensor<S>(std::move(st));
}

}  // namespace detail

template <class S>
size_t Tensor<S>::backward() const {
  detail::check(numel() == 1,
                "backward: root must be scalar, got " + detail::shape_str(shape()));
  using StoragePtr = detail::Storage<S>*;

  // Iterative post-order DFS for a topological order of storages.
  std::vector<detail::Storage<S>*> order;
  std::unordered_set<StoragePtr> seen;
  struct Frame {
    detail::Storage<S>* st;
    size_t next_input;
  };
  std::vector<Frame> stack;
  if (seen.insert(st_.get()).second) stack.push_back({st_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (!f.st->node || f.next_input >= f.st->node->inputs.size()) {
      order.push_back(f.st);
      stack.pop_back();
      continue;
    }
    detail::Storage<S>* in = f.st->node->inputs[f.next_input++].get();
    if (seen.insert(in).second) stack.push_back({in, 0});
  }

  // Fresh pass: intermediate grads are scratch, leaves accumulate.
  for (auto* st : order)
    if (st->node) st->grad.clear();

  st_->grad_buffer()[0] = S(1);

  size_t visited = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Storage<S>* st = *it;
    if (!st->node) continue;
    if (!st->grad.empty()) st->node->backprop(*st);
    ++visited;
  }
  return visited;
}

using TensorF = Tensor<float>;

}  // namespace waveden
