#pragma once

// Adam with bias correction, global-norm gradient clipping, and the cosine
// learning-rate decay from the initial rate down to the floor.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "waveden/tensor.hpp"

namespace waveden {

struct Schedule {
  double init = 2e-4;
  double floor = 1e-6;
  int64_t total = 1;
};

// rate(0) = init, rate(total) = floor, monotone non-increasing; steps past
// the end clamp to the floor.
inline double cosine_rate(int64_t step, const Schedule& s) {
  detail::check(step >= 0 && s.total >= 1, "cosine_rate: invalid step/schedule");
  if (step >= s.total) return s.floor;
  const double t = double(step) / double(s.total);
  return s.floor + (s.init - s.floor) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

class Adam {
 public:
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  explicit Adam(std::vector<std::pair<std::string, Tensor<float>>> params)
      : params_(std::move(params)) {
    for (auto& [name, p] : params_) {
      (void)name;
      m_.emplace_back(size_t(p.numel()), 0.0f);
      v_.emplace_back(size_t(p.numel()), 0.0f);
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return params_[i].first; }
  Tensor<float>& param(size_t i) { return params_[i].second; }
  std::vector<float>& moment1(size_t i) { return m_[i]; }
  std::vector<float>& moment2(size_t i) { return v_[i]; }

  void zero_grad() {
    for (auto& [name, p] : params_) {
      (void)name;
      p.zero_grad();
    }
  }

  // Scales all gradients so their joint L2 norm does not exceed max_norm.
  // Returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params_) {
      detail::check(p.has_grad(), "clip_grad_norm: missing gradient for " + name);
      for (float g : p.grad()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
      const float factor = float(max_norm / norm);
      for (auto& [name, p] : params_) {
        (void)name;
        for (float& g : p.mutable_grad()) g *= factor;
      }
    }
    return norm;
  }

  void step(double rate) {
    ++t_;
    const float bc1 = 1.0f - std::pow(beta1, float(t_));
    const float bc2 = 1.0f - std::pow(beta2, float(t_));
    const float lr = float(rate);
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor<float>& p = params_[i].second;
      detail::check(p.has_grad(), "adam: missing gradient for " + params_[i].first);
      auto grad = p.grad();
      auto data = p.mutable_data();
      float* m = m_[i].data();
      float* v = v_[i].data();
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        const float g = grad[size_t(j)];
        m[j] = beta1 * m[j] + (1.0f - beta1) * g;
        v[j] = beta2 * v[j] + (1.0f - beta2) * g * g;
        const float mhat = m[j] / bc1;
        const float vhat = v[j] / bc2;
        data[size_t(j)] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor<float>>> params_;
  std::vector<std::vector<float>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace waveden
