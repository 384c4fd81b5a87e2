#pragma once

#include <cmath>
#include <vector>

#include "handpose/autograd.hpp"

namespace handpose {

// Adaptive-moment gradient descent. Gradients are expected to be accumulated
// sums over the batch; pass grad_scale = 1/batch_size to step on the mean.
class Adam {
 public:
  explicit Adam(std::vector<ag::Var> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    slots_.reserve(params.size());
    for (auto& p : params) slots_.push_back({p, Tensor(p.value().shape()), Tensor(p.value().shape())});
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void zero_grad() {
    for (auto& s : slots_) s.p.zero_grad();
  }

  void step(double grad_scale = 1.0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    for (auto& s : slots_) {
      Tensor& val = s.p.value();
      const Tensor& grad = s.p.grad();
      for (int i = 0; i < val.numel(); ++i) {
        const double g = grad[i] * grad_scale;
        s.m[i] = b1_ * s.m[i] + (1 - b1_) * g;
        s.v[i] = b2_ * s.v[i] + (1 - b2_) * g * g;
        val[i] -= lr_ * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
      }
    }
  }

 private:
  struct Slot {
    ag::Var p;
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace handpose
