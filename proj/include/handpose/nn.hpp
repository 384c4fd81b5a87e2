#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "handpose/ops.hpp"
#include "handpose/rng.hpp"

namespace handpose::nn {

using ag::Var;

// Named parameter/buffer registry. Buffers (batch-norm running stats) are
// serialized with checkpoints but never handed to the optimizer.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };

  Var add_param(const std::string& name, Tensor init) {
    Var v(std::move(init), true);
    entries_.push_back({name, v, true});
    return v;
  }

  Var add_buffer(const std::string& name, Tensor init) {
    Var v(std::move(init), false);
    entries_.push_back({name, v, false});
    return v;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<Var> trainable() const {
    std::vector<Var> out;
    for (const auto& e : entries_)
      if (e.trainable) out.push_back(e.var);
    return out;
  }

  std::vector<Var> trainable_with_prefix(const std::string& prefix) const {
    std::vector<Var> out;
    for (const auto& e : entries_)
      if (e.trainable && e.name.rfind(prefix, 0) == 0) out.push_back(e.var);
    return out;
  }

  Var* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.var;
    return nullptr;
  }

  long long total_numel() const {
    long long n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.var.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

inline Tensor kaiming_conv(int out_ch, int in_ch, int k, Rng& rng) {
  Tensor w({out_ch, in_ch, k, k});
  const double std = std::sqrt(2.0 / (in_ch * k * k));
  for (auto& v : w.vec()) v = rng.normal(0.0, std);
  return w;
}

inline Tensor kaiming_linear(int out_dim, int in_dim, Rng& rng) {
  Tensor w({out_dim, in_dim});
  const double std = std::sqrt(2.0 / in_dim);
  for (auto& v : w.vec()) v = rng.normal(0.0, std);
  return w;
}

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, int stride,
         int pad, Rng& rng, ag::PadMode pad_mode = ag::PadMode::zero)
      : stride_(stride), pad_(pad), pad_mode_(pad_mode) {
    w_ = ps.add_param(name + ".w", kaiming_conv(out_ch, in_ch, k, rng));
    b_ = ps.add_param(name + ".b", Tensor({out_ch}));
  }

  Var operator()(const Var& x) const { return ag::conv2d(x, w_, b_, stride_, pad_, pad_mode_); }

  Var w_, b_;
  int stride_ = 1, pad_ = 0;
  ag::PadMode pad_mode_ = ag::PadMode::zero;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& ps, const std::string& name, int ch) {
    gamma_ = ps.add_param(name + ".gamma", Tensor::full({ch}, 1.0));
    beta_ = ps.add_param(name + ".beta", Tensor({ch}));
    run_mean_ = ps.add_buffer(name + ".run_mean", Tensor({ch}));
    run_var_ = ps.add_buffer(name + ".run_var", Tensor::full({ch}, 1.0));
  }

  Var operator()(const Var& x, bool training) {
    return ag::batchnorm2d(x, gamma_, beta_, run_mean_, run_var_, training);
  }

  Var gamma_, beta_, run_mean_, run_var_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in_dim, int out_dim, Rng& rng) {
    w_ = ps.add_param(name + ".w", kaiming_linear(out_dim, in_dim, rng));
    b_ = ps.add_param(name + ".b", Tensor({out_dim}));
  }

  Var operator()(const Var& x) const { return ag::linear(x, w_, b_); }

  Var w_, b_;
};

// conv -> BN -> ReLU
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(ParamStore& ps, const std::string& name, int in_ch, int out_ch, int k, int stride,
             int pad, Rng& rng)
      : conv_(ps, name + ".conv", in_ch, out_ch, k, stride, pad, rng), bn_(ps, name + ".bn", out_ch) {}

  Var operator()(const Var& x, bool training) { return ag::relu(bn_(conv_(x), training)); }

  Conv2d conv_;
  BatchNorm2d bn_;
};

}  // namespace handpose::nn
