#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "handpose/autograd.hpp"

namespace handpose::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

enum class PadMode { zero, replicate };

namespace detail {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow,
                   PadMode mode, Tensor& col) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const bool rep = mode == PadMode::replicate;
  double* cp = col.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const int row = (c * kh + i) * kw + j;
        double* dst = cp + static_cast<std::size_t>(row) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) {
            if (!rep) {
              std::fill(dst + y * ow, dst + (y + 1) * ow, 0.0);
              continue;
            }
            sy = clampi(sy, 0, H - 1);
          }
          const double* src = x.data() + (static_cast<std::size_t>(c) * H + sy) * W;
          for (int xo = 0; xo < ow; ++xo) {
            const int sx = xo * stride - pad + j;
            if (sx >= 0 && sx < W)
              dst[y * ow + xo] = src[sx];
            else
              dst[y * ow + xo] = rep ? src[clampi(sx, 0, W - 1)] : 0.0;
          }
        }
      }
}

inline void col2im_add(const Tensor& col, int kh, int kw, int stride, int pad, int oh, int ow,
                       PadMode mode, Tensor& gx) {
  const int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
  const bool rep = mode == PadMode::replicate;
  const double* cp = col.data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const int row = (c * kh + i) * kw + j;
        const double* src = cp + static_cast<std::size_t>(row) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          int sy = y * stride - pad + i;
          if (sy < 0 || sy >= H) {
            if (!rep) continue;
            sy = clampi(sy, 0, H - 1);
          }
          double* dst = gx.data() + (static_cast<std::size_t>(c) * H + sy) * W;
          for (int xo = 0; xo < ow; ++xo) {
            const int sx = xo * stride - pad + j;
            if (sx >= 0 && sx < W)
              dst[sx] += src[y * ow + xo];
            else if (rep)
              dst[clampi(sx, 0, W - 1)] += src[y * ow + xo];
          }
        }
      }
}

struct LinTap {
  int i0, i1;
  double t;
};

// Half-pixel-centre sampling positions (align_corners=false convention).
inline std::vector<LinTap> linear_taps(int in, int out) {
  std::vector<LinTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline Var add(const Var& a, const Var& b) {
  detail::check(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor y = a.value();
  for (int i = 0; i < y.numel(); ++i) y[i] += b.value()[i];
  Var out = make_result(std::move(y), {a, b});
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node();
    Node* self = out.node().get();
    self->backprop = [an, bn, self] {
      const Tensor& gy = self->grad_buf();
      if (an->requires_grad) {
        Tensor& ga = an->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
      }
      if (bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) gb[i] += gy[i];
      }
    };
  }
  return out;
}

inline Var sub(const Var& a, const Var& b) {
  detail::check(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor y = a.value();
  for (int i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  Var out = make_result(std::move(y), {a, b});
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node();
    Node* self = out.node().get();
    self->backprop = [an, bn, self] {
      const Tensor& gy = self->grad_buf();
      if (an->requires_grad) {
        Tensor& ga = an->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) ga[i] += gy[i];
      }
      if (bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) gb[i] -= gy[i];
      }
    };
  }
  return out;
}

inline Var mul(const Var& a, const Var& b) {
  detail::check(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor y = a.value();
  for (int i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  Var out = make_result(std::move(y), {a, b});
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node();
    Node* self = out.node().get();
    self->backprop = [an, bn, self] {
      const Tensor& gy = self->grad_buf();
      if (an->requires_grad) {
        Tensor& ga = an->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) ga[i] += gy[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int i = 0; i < gy.numel(); ++i) gb[i] += gy[i] * an->value[i];
      }
    };
  }
  return out;
}

inline Var scale(const Var& a, double s) {
  Tensor y = a.value();
  for (auto& v : y.vec()) v *= s;
  Var out = make_result(std::move(y), {a});
  if (out.requires_grad()) {
    auto an = a.node();
    Node* self = out.node().get();
    self->backprop = [an, s, self] {
      const Tensor& gy = self->grad_buf();
      Tensor& ga = an->grad_buf();
      for (int i = 0; i < gy.numel(); ++i) ga[i] += s * gy[i];
    };
  }
  return out;
}

inline Var relu(const Var& x) {
  Tensor y = x.value();
  for (auto& v : y.vec())
    if (v < 0) v = 0;
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self] {
      const Tensor& gy = self->grad_buf();
      Tensor& gx = xn->grad_buf();
      const Tensor& xv = xn->value;
      for (int i = 0; i < gy.numel(); ++i)
        if (xv[i] > 0) gx[i] += gy[i];
    };
  }
  return out;
}

inline Var sigmoid(const Var& x) {
  Tensor y = x.value();
  for (auto& v : y.vec()) v = 1.0 / (1.0 + std::exp(-v));
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self] {
      const Tensor& gy = self->grad_buf();
      const Tensor& yv = self->value;
      Tensor& gx = xn->grad_buf();
      for (int i = 0; i < gy.numel(); ++i) gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution / dense

inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0,
                  PadMode pad_mode = PadMode::zero) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  detail::check(xv.rank() == 3 && wv.rank() == 4, "conv2d: bad ranks");
  detail::check(xv.dim(0) == wv.dim(1), "conv2d: channel mismatch, input " + xv.shape_str() +
                                            " kernel " + wv.shape_str());
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int O = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int oh = (H + 2 * pad - kh) / stride + 1;
  const int ow = (W + 2 * pad - kw) / stride + 1;
  detail::check(oh > 0 && ow > 0, "conv2d: output would be empty");
  const int K = C * kh * kw, N = oh * ow;

  Tensor col({K, N});
  detail::im2col(xv, kh, kw, stride, pad, oh, ow, pad_mode, col);

  Tensor y({O, oh, ow});
  {
    CMapMat Wm(wv.data(), O, K);
    CMapMat Cm(col.data(), K, N);
    MapMat Ym(y.data(), O, N);
    Ym.noalias() = Wm * Cm;
  }
  if (b.defined()) {
    detail::check(b.value().numel() == O, "conv2d: bias size mismatch");
    for (int o = 0; o < O; ++o) {
      const double bo = b.value()[o];
      double* row = y.data() + static_cast<std::size_t>(o) * N;
      for (int n = 0; n < N; ++n) row[n] += bo;
    }
  }

  Var out = b.defined() ? make_result(std::move(y), {x, w, b}) : make_result(std::move(y), {x, w});
  if (out.requires_grad()) {
    auto xn = x.node(), wn = w.node();
    NodePtr bn = b.defined() ? b.node() : nullptr;
    Node* self = out.node().get();
    auto colp = std::make_shared<Tensor>(std::move(col));
    self->backprop = [xn, wn, bn, self, colp, O, K, N, kh, kw, stride, pad, pad_mode, oh, ow] {
      const Tensor& gy = self->grad_buf();
      CMapMat Gy(gy.data(), O, N);
      if (wn->requires_grad) {
        MapMat Gw(wn->grad_buf().data(), O, K);
        CMapMat Cm(colp->data(), K, N);
        Gw.noalias() += Gy * Cm.transpose();
      }
      if (bn && bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int o = 0; o < O; ++o) gb[o] += Gy.row(o).sum();
      }
      if (xn->requires_grad) {
        Tensor gcol({K, N});
        MapMat Gc(gcol.data(), K, N);
        CMapMat Wm(wn->value.data(), O, K);
        Gc.noalias() = Wm.transpose() * Gy;
        detail::col2im_add(gcol, kh, kw, stride, pad, oh, ow, pad_mode, xn->grad_buf());
      }
    };
  }
  return out;
}

inline Var linear(const Var& x, const Var& w, const Var& b) {
  const int I = x.value().numel();
  detail::check(w.value().rank() == 2 && w.value().dim(1) == I, "linear: shape mismatch");
  const int O = w.value().dim(0);
  Tensor y({O});
  {
    CMapMat Wm(w.value().data(), O, I);
    Eigen::Map<const Eigen::VectorXd> xm(x.value().data(), I);
    Eigen::Map<Eigen::VectorXd> ym(y.data(), O);
    ym.noalias() = Wm * xm;
  }
  if (b.defined())
    for (int o = 0; o < O; ++o) y[o] += b.value()[o];

  Var out = b.defined() ? make_result(std::move(y), {x, w, b}) : make_result(std::move(y), {x, w});
  if (out.requires_grad()) {
    auto xn = x.node(), wn = w.node();
    NodePtr bn = b.defined() ? b.node() : nullptr;
    Node* self = out.node().get();
    self->backprop = [xn, wn, bn, self, O, I] {
      const Tensor& gy = self->grad_buf();
      Eigen::Map<const Eigen::VectorXd> gym(gy.data(), O);
      if (wn->requires_grad) {
        MapMat Gw(wn->grad_buf().data(), O, I);
        Eigen::Map<const Eigen::VectorXd> xm(xn->value.data(), I);
        Gw.noalias() += gym * xm.transpose();
      }
      if (bn && bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int o = 0; o < O; ++o) gb[o] += gy[o];
      }
      if (xn->requires_grad) {
        CMapMat Wm(wn->value.data(), O, I);
        Eigen::Map<Eigen::VectorXd> gxm(xn->grad_buf().data(), I);
        gxm.noalias() += Wm.transpose() * gym;
      }
    };
  }
  return out;
}

// Batch statistics are taken over the spatial extent of the single sample on
// the tape; running averages feed eval mode. `running_*` are buffer Vars and
// are updated in place during training.
inline Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Var& running_mean,
                       Var& running_var, bool training, double momentum = 0.1,
                       double eps = 1e-5) {
  const Tensor& xv = x.value();
  detail::check(xv.rank() == 3, "batchnorm2d: expected CHW input");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const int N = H * W;
  detail::check(gamma.value().numel() == C && beta.value().numel() == C,
                "batchnorm2d: affine size mismatch");

  Tensor y({C, H, W});
  auto xhat = std::make_shared<Tensor>(std::vector<int>{C, H, W});
  auto inv_std = std::make_shared<Tensor>(std::vector<int>{C});

  for (int c = 0; c < C; ++c) {
    const double* xc = xv.data() + static_cast<std::size_t>(c) * N;
    double mean, var;
    if (training) {
      double s = 0;
      for (int i = 0; i < N; ++i) s += xc[i];
      mean = s / N;
      double v = 0;
      for (int i = 0; i < N; ++i) v += (xc[i] - mean) * (xc[i] - mean);
      var = v / N;
      const double unbiased = N > 1 ? v / (N - 1) : v;
      running_mean.value()[c] = (1 - momentum) * running_mean.value()[c] + momentum * mean;
      running_var.value()[c] = (1 - momentum) * running_var.value()[c] + momentum * unbiased;
    } else {
      mean = running_mean.value()[c];
      var = running_var.value()[c];
    }
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = istd;
    const double g = gamma.value()[c], bta = beta.value()[c];
    double* yc = y.data() + static_cast<std::size_t>(c) * N;
    double* hc = xhat->data() + static_cast<std::size_t>(c) * N;
    for (int i = 0; i < N; ++i) {
      hc[i] = (xc[i] - mean) * istd;
      yc[i] = g * hc[i] + bta;
    }
  }

  Var out = make_result(std::move(y), {x, gamma, beta});
  if (out.requires_grad()) {
    auto xn = x.node(), gn = gamma.node(), btn = beta.node();
    Node* self = out.node().get();
    self->backprop = [xn, gn, btn, self, xhat, inv_std, C, N, training] {
      const Tensor& gy = self->grad_buf();
      for (int c = 0; c < C; ++c) {
        const double* gyc = gy.data() + static_cast<std::size_t>(c) * N;
        const double* hc = xhat->data() + static_cast<std::size_t>(c) * N;
        double sum_gy = 0, sum_gyh = 0;
        for (int i = 0; i < N; ++i) {
          sum_gy += gyc[i];
          sum_gyh += gyc[i] * hc[i];
        }
        if (btn->requires_grad) btn->grad_buf()[c] += sum_gy;
        if (gn->requires_grad) gn->grad_buf()[c] += sum_gyh;
        if (xn->requires_grad) {
          const double g = gn->value[c], istd = (*inv_std)[c];
          double* gxc = xn->grad_buf().data() + static_cast<std::size_t>(c) * N;
          if (training) {
            for (int i = 0; i < N; ++i)
              gxc[i] += g * istd * (gyc[i] - sum_gy / N - hc[i] * sum_gyh / N);
          } else {
            for (int i = 0; i < N; ++i) gxc[i] += g * istd * gyc[i];
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling

inline Var maxpool2x2(const Var& x) {
  const Tensor& xv = x.value();
  detail::check(xv.rank() == 3, "maxpool2x2: expected CHW input");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  detail::check(H % 2 == 0 && W % 2 == 0, "maxpool2x2: odd spatial size");
  const int oh = H / 2, ow = W / 2;
  Tensor y({C, oh, ow});
  auto argidx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(C) * oh * ow);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        int best = (c * H + 2 * i) * W + 2 * j;
        double bv = xv[best];
        const int cands[3] = {best + 1, best + W, best + W + 1};
        for (int k : cands)
          if (xv[k] > bv) {
            bv = xv[k];
            best = k;
          }
        y.at(c, i, j) = bv;
        (*argidx)[static_cast<std::size_t>((c * oh + i) * ow + j)] = best;
      }
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self, argidx] {
      const Tensor& gy = self->grad_buf();
      Tensor& gx = xn->grad_buf();
      for (int i = 0; i < gy.numel(); ++i) gx[(*argidx)[static_cast<std::size_t>(i)]] += gy[i];
    };
  }
  return out;
}

inline Var bilinear_resize(const Var& x, int oh, int ow) {
  const Tensor& xv = x.value();
  detail::check(xv.rank() == 3, "bilinear_resize: expected CHW input");
  const int C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  auto ty = std::make_shared<std::vector<detail::LinTap>>(detail::linear_taps(H, oh));
  auto tx = std::make_shared<std::vector<detail::LinTap>>(detail::linear_taps(W, ow));
  Tensor y({C, oh, ow});
  for (int c = 0; c < C; ++c) {
    const double* src = xv.data() + static_cast<std::size_t>(c) * H * W;
    double* dst = y.data() + static_cast<std::size_t>(c) * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const auto& rv = (*ty)[static_cast<std::size_t>(i)];
      for (int j = 0; j < ow; ++j) {
        const auto& cv = (*tx)[static_cast<std::size_t>(j)];
        const double top = (1 - cv.t) * src[rv.i0 * W + cv.i0] + cv.t * src[rv.i0 * W + cv.i1];
        const double bot = (1 - cv.t) * src[rv.i1 * W + cv.i0] + cv.t * src[rv.i1 * W + cv.i1];
        dst[i * ow + j] = (1 - rv.t) * top + rv.t * bot;
      }
    }
  }
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self, ty, tx, C, H, W, oh, ow] {
      const Tensor& gy = self->grad_buf();
      Tensor& gx = xn->grad_buf();
      for (int c = 0; c < C; ++c) {
        double* dst = gx.data() + static_cast<std::size_t>(c) * H * W;
        const double* src = gy.data() + static_cast<std::size_t>(c) * oh * ow;
        for (int i = 0; i < oh; ++i) {
          const auto& rv = (*ty)[static_cast<std::size_t>(i)];
          for (int j = 0; j < ow; ++j) {
            const auto& cv = (*tx)[static_cast<std::size_t>(j)];
            const double g = src[i * ow + j];
            dst[rv.i0 * W + cv.i0] += (1 - rv.t) * (1 - cv.t) * g;
            dst[rv.i0 * W + cv.i1] += (1 - rv.t) * cv.t * g;
            dst[rv.i1 * W + cv.i0] += rv.t * (1 - cv.t) * g;
            dst[rv.i1 * W + cv.i1] += rv.t * cv.t * g;
          }
        }
      }
    };
  }
  return out;
}

inline Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::check(av.rank() == 3 && bv.rank() == 3 && av.dim(1) == bv.dim(1) && av.dim(2) == bv.dim(2),
                "concat_channels: spatial mismatch");
  const int Ca = av.dim(0), Cb = bv.dim(0), H = av.dim(1), W = av.dim(2);
  Tensor y({Ca + Cb, H, W});
  std::copy(av.data(), av.data() + av.numel(), y.data());
  std::copy(bv.data(), bv.data() + bv.numel(), y.data() + av.numel());
  Var out = make_result(std::move(y), {a, b});
  if (out.requires_grad()) {
    auto an = a.node(), bn = b.node();
    Node* self = out.node().get();
    const int na = av.numel();
    self->backprop = [an, bn, self, na] {
      const Tensor& gy = self->grad_buf();
      if (an->requires_grad) {
        Tensor& ga = an->grad_buf();
        for (int i = 0; i < na; ++i) ga[i] += gy[i];
      }
      if (bn->requires_grad) {
        Tensor& gb = bn->grad_buf();
        for (int i = 0; i < gy.numel() - na; ++i) gb[i] += gy[na + i];
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization / decoding

inline Var spatial_softmax(const Var& x) {
  const Tensor& xv = x.value();
  detail::check(xv.rank() == 3, "spatial_softmax: expected {slices,H,W}");
  for (double v : xv.vec())
    if (std::isnan(v)) throw std::domain_error("spatial_softmax: NaN in latent heatmap");
  const int K = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  Tensor y(xv.shape());
  for (int k = 0; k < K; ++k) {
    const double* src = xv.data() + static_cast<std::size_t>(k) * N;
    double* dst = y.data() + static_cast<std::size_t>(k) * N;
    double m = src[0];
    for (int i = 1; i < N; ++i) m = std::max(m, src[i]);
    double s = 0;
    for (int i = 0; i < N; ++i) {
      dst[i] = std::exp(src[i] - m);
      s += dst[i];
    }
    for (int i = 0; i < N; ++i) dst[i] /= s;
  }
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self, K, N] {
      const Tensor& gy = self->grad_buf();
      const Tensor& yv = self->value;
      Tensor& gx = xn->grad_buf();
      for (int k = 0; k < K; ++k) {
        const double* gyk = gy.data() + static_cast<std::size_t>(k) * N;
        const double* yk = yv.data() + static_cast<std::size_t>(k) * N;
        double dot = 0;
        for (int i = 0; i < N; ++i) dot += gyk[i] * yk[i];
        double* gxk = gx.data() + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < N; ++i) gxk[i] += yk[i] * (gyk[i] - dot);
      }
    };
  }
  return out;
}

inline Var softmax_vec(const Var& x) {
  const Tensor& xv = x.value();
  const int D = xv.numel();
  Tensor y(xv.shape());
  double m = xv[0];
  for (int i = 1; i < D; ++i) m = std::max(m, xv[i]);
  double s = 0;
  for (int i = 0; i < D; ++i) {
    y[i] = std::exp(xv[i] - m);
    s += y[i];
  }
  for (int i = 0; i < D; ++i) y[i] /= s;
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self, D] {
      const Tensor& gy = self->grad_buf();
      const Tensor& yv = self->value;
      Tensor& gx = xn->grad_buf();
      double dot = 0;
      for (int i = 0; i < D; ++i) dot += gy[i] * yv[i];
      for (int i = 0; i < D; ++i) gx[i] += yv[i] * (gy[i] - dot);
    };
  }
  return out;
}

inline Var per_slice_sum(const Var& x) {
  const Tensor& xv = x.value();
  detail::check(xv.rank() == 3, "per_slice_sum: expected {slices,H,W}");
  const int K = xv.dim(0), N = xv.dim(1) * xv.dim(2);
  Tensor y({K});
  for (int k = 0; k < K; ++k) {
    const double* src = xv.data() + static_cast<std::size_t>(k) * N;
    double s = 0;
    for (int i = 0; i < N; ++i) s += src[i];
    y[k] = s;
  }
  Var out = make_result(std::move(y), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    self->backprop = [xn, self, K, N] {
      const Tensor& gy = self->grad_buf();
      Tensor& gx = xn->grad_buf();
      for (int k = 0; k < K; ++k) {
        double* gxk = gx.data() + static_cast<std::size_t>(k) * N;
        for (int i = 0; i < N; ++i) gxk[i] += gy[k];
      }
    };
  }
  return out;
}

inline Var spatial_mean(const Var& x) {
  Var s = per_slice_sum(x);
  return scale(s, 1.0 / (x.value().dim(1) * x.value().dim(2)));
}

// Expectation of (column, row) pixel coordinates under each normalized slice,
// multiplied by `coord_scale`. Output is {slices, 2} with x first.
inline Var soft_argmax2d(const Var& p, double coord_scale = 1.0) {
  const Tensor& pv = p.value();
  detail::check(pv.rank() == 3, "soft_argmax2d: expected {slices,H,W}");
  const int K = pv.dim(0), H = pv.dim(1), W = pv.dim(2);
  Tensor y({K, 2});
  for (int k = 0; k < K; ++k) {
    const double* src = pv.data() + static_cast<std::size_t>(k) * H * W;
    double sx = 0, sy = 0;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double v = src[r * W + c];
        sx += v * c;
        sy += v * r;
      }
    y.at(k, 0) = coord_scale * sx;
    y.at(k, 1) = coord_scale * sy;
  }
  Var out = make_result(std::move(y), {p});
  if (out.requires_grad()) {
    auto pn = p.node();
    Node* self = out.node().get();
    self->backprop = [pn, self, K, H, W, coord_scale] {
      const Tensor& gy = self->grad_buf();
      Tensor& gp = pn->grad_buf();
      for (int k = 0; k < K; ++k) {
        const double gx = gy.at(k, 0) * coord_scale, gyr = gy.at(k, 1) * coord_scale;
        double* dst = gp.data() + static_cast<std::size_t>(k) * H * W;
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c) dst[r * W + c] += gx * c + gyr * r;
      }
    };
  }
  return out;
}

// scalar dot product with a constant weight tensor
inline Var weighted_sum(const Var& x, const Tensor& w) {
  detail::check(x.numel() == w.numel(), "weighted_sum: shape mismatch");
  double s = 0;
  for (int i = 0; i < w.numel(); ++i) s += x.value()[i] * w[i];
  Var out = make_result(Tensor::scalar(s), {x});
  if (out.requires_grad()) {
    auto xn = x.node();
    Node* self = out.node().get();
    auto wp = std::make_shared<Tensor>(w);
    self->backprop = [xn, self, wp] {
      const double g = self->grad_buf()[0];
      Tensor& gx = xn->grad_buf();
      for (int i = 0; i < gx.numel(); ++i) gx[i] += g * (*wp)[i];
    };
  }
  return out;
}

// sum_k k * p[k] as a scalar
inline Var expectation_index(const Var& p) {
  const Tensor& pv = p.value();
  const int D = pv.numel();
  double e = 0;
  for (int k = 0; k < D; ++k) e += k * pv[k];
  Var out = make_result(Tensor::scalar(e), {p});
  if (out.requires_grad()) {
    auto pn = p.node();
    Node* self = out.node().get();
    self->backprop = [pn, self, D] {
      const double g = self->grad_buf()[0];
      Tensor& gp = pn->grad_buf();
      for (int k = 0; k < D; ++k) gp[k] += g * k;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss kernels (targets are constants)

inline Var bce_sum(const Var& pred, const Tensor& target) {
  const Tensor& pv = pred.value();
  detail::check(pv.same_shape(target), "bce_sum: shape mismatch");
  for (double v : pv.vec())
    detail::check(v > 0.0 && v < 1.0, "bce_sum: prediction outside (0,1)");
  double loss = 0;
  for (int i = 0; i < pv.numel(); ++i)
    loss += -(target[i] * std::log(pv[i]) + (1 - target[i]) * std::log(1 - pv[i]));
  Var out = make_result(Tensor::scalar(loss), {pred});
  if (out.requires_grad()) {
    auto pn = pred.node();
    Node* self = out.node().get();
    auto tgt = std::make_shared<Tensor>(target);
    self->backprop = [pn, self, tgt] {
      const double g = self->grad_buf()[0];
      Tensor& gp = pn->grad_buf();
      const Tensor& pv = pn->value;
      for (int i = 0; i < pv.numel(); ++i)
        gp[i] += g * (pv[i] - (*tgt)[i]) / (pv[i] * (1 - pv[i]));
    };
  }
  return out;
}

// Sum of |pred - target| over elements whose mask entry is nonzero.
inline Var l1_sum_masked(const Var& pred, const Tensor& target, const std::vector<std::uint8_t>& mask) {
  const Tensor& pv = pred.value();
  detail::check(pv.numel() == target.numel(), "l1_sum_masked: shape mismatch");
  detail::check(mask.size() == static_cast<std::size_t>(pv.numel()), "l1_sum_masked: mask size");
  double loss = 0;
  for (int i = 0; i < pv.numel(); ++i)
    if (mask[static_cast<std::size_t>(i)]) loss += std::abs(pv[i] - target[i]);
  Var out = make_result(Tensor::scalar(loss), {pred});
  if (out.requires_grad()) {
    auto pn = pred.node();
    Node* self = out.node().get();
    auto tgt = std::make_shared<Tensor>(target);
    auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
    self->backprop = [pn, self, tgt, msk] {
      const double g = self->grad_buf()[0];
      Tensor& gp = pn->grad_buf();
      const Tensor& pv = pn->value;
      for (int i = 0; i < pv.numel(); ++i) {
        if (!(*msk)[static_cast<std::size_t>(i)]) continue;
        const double d = pv[i] - (*tgt)[i];
        if (d > 0)
          gp[i] += g;
        else if (d < 0)
          gp[i] -= g;
      }
    };
  }
  return out;
}

inline Var abs_err(const Var& pred, double target) {
  detail::check(pred.numel() == 1, "abs_err: scalar expected");
  Var out = make_result(Tensor::scalar(std::abs(pred.value()[0] - target)), {pred});
  if (out.requires_grad()) {
    auto pn = pred.node();
    Node* self = out.node().get();
    self->backprop = [pn, self, target] {
      const double g = self->grad_buf()[0];
      const double d = pn->value[0] - target;
      if (d > 0)
        pn->grad_buf()[0] += g;
      else if (d < 0)
        pn->grad_buf()[0] -= g;
    };
  }
  return out;
}

// Mean over pixels of -log softmax(logits)[label]. Logits are {C,H,W},
// labels row-major {H*W}.
inline Var cross_entropy_mean(const Var& logits, const std::vector<std::uint16_t>& labels) {
  const Tensor& lv = logits.value();
  detail::check(lv.rank() == 3, "cross_entropy_mean: expected {C,H,W}");
  const int C = lv.dim(0), N = lv.dim(1) * lv.dim(2);
  detail::check(labels.size() == static_cast<std::size_t>(N), "cross_entropy_mean: label count");
  for (auto l : labels)
    detail::check(l < C, "cross_entropy_mean: label id out of range");

  auto probs = std::make_shared<Tensor>(lv.shape());
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    double m = lv[n];
    for (int c = 1; c < C; ++c) m = std::max(m, lv[c * N + n]);
    double s = 0;
    for (int c = 0; c < C; ++c) {
      const double e = std::exp(lv[c * N + n] - m);
      (*probs)[c * N + n] = e;
      s += e;
    }
    for (int c = 0; c < C; ++c) (*probs)[c * N + n] /= s;
    loss += -std::log((*probs)[labels[static_cast<std::size_t>(n)] * N + n]);
  }
  loss /= N;

  Var out = make_result(Tensor::scalar(loss), {logits});
  if (out.requires_grad()) {
    auto ln = logits.node();
    Node* self = out.node().get();
    auto lbl = std::make_shared<std::vector<std::uint16_t>>(labels);
    self->backprop = [ln, self, probs, lbl, C, N] {
      const double g = self->grad_buf()[0] / N;
      Tensor& gl = ln->grad_buf();
      for (int n = 0; n < N; ++n) {
        const int y = (*lbl)[static_cast<std::size_t>(n)];
        for (int c = 0; c < C; ++c) gl[c * N + n] += g * ((*probs)[c * N + n] - (c == y ? 1.0 : 0.0));
      }
    };
  }
  return out;
}

// Sum over kinematic edges of the Euclidean norm of the bone-vector residual
// in 2.5D space. xy is {K,2}, z is {K}; an edge contributes when both of its
// joints are valid.
inline Var bone_residual_sum(const Var& xy, const Var& z, const Tensor& gt_xy, const Tensor& gt_z,
                             const std::vector<std::pair<int, int>>& edges,
                             const std::vector<std::uint8_t>& valid) {
  const int K = z.value().numel();
  detail::check(xy.value().rank() == 2 && xy.value().dim(0) == K && xy.value().dim(1) == 2,
                "bone_residual_sum: xy shape");
  detail::check(gt_xy.numel() == 2 * K && gt_z.numel() == K, "bone_residual_sum: target shape");
  double loss = 0;
  for (const auto& [i, j] : edges) {
    if (!valid[static_cast<std::size_t>(i)] || !valid[static_cast<std::size_t>(j)]) continue;
    const double dx = (xy.value().at(i, 0) - xy.value().at(j, 0)) - (gt_xy[2 * i] - gt_xy[2 * j]);
    const double dy = (xy.value().at(i, 1) - xy.value().at(j, 1)) - (gt_xy[2 * i + 1] - gt_xy[2 * j + 1]);
    const double dz = (z.value()[i] - z.value()[j]) - (gt_z[i] - gt_z[j]);
    loss += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  Var out = make_result(Tensor::scalar(loss), {xy, z});
  if (out.requires_grad()) {
    auto xyn = xy.node(), zn = z.node();
    Node* self = out.node().get();
    auto gxy = std::make_shared<Tensor>(gt_xy);
    auto gz = std::make_shared<Tensor>(gt_z);
    auto edg = std::make_shared<std::vector<std::pair<int, int>>>(edges);
    auto vld = std::make_shared<std::vector<std::uint8_t>>(valid);
    self->backprop = [xyn, zn, self, gxy, gz, edg, vld] {
      const double g = self->grad_buf()[0];
      Tensor& gradxy = xyn->grad_buf();
      Tensor& gradz = zn->grad_buf();
      for (const auto& [i, j] : *edg) {
        if (!(*vld)[static_cast<std::size_t>(i)] || !(*vld)[static_cast<std::size_t>(j)]) continue;
        const double dx =
            (xyn->value.at(i, 0) - xyn->value.at(j, 0)) - ((*gxy)[2 * i] - (*gxy)[2 * j]);
        const double dy =
            (xyn->value.at(i, 1) - xyn->value.at(j, 1)) - ((*gxy)[2 * i + 1] - (*gxy)[2 * j + 1]);
        const double dz = (zn->value[i] - zn->value[j]) - ((*gz)[i] - (*gz)[j]);
        const double n = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (n == 0.0) continue;  // subgradient 0 at the kink
        const double s = g / n;
        if (xyn->requires_grad) {
          gradxy.at(i, 0) += s * dx;
          gradxy.at(j, 0) -= s * dx;
          gradxy.at(i, 1) += s * dy;
          gradxy.at(j, 1) -= s * dy;
        }
        if (zn->requires_grad) {
          gradz[i] += s * dz;
          gradz[j] -= s * dz;
        }
      }
    };
  }
  return out;
}

}  // namespace handpose::ag
