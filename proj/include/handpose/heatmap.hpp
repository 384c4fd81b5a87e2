#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "handpose/ops.hpp"

namespace handpose::heatmap {

using ag::Var;

enum class Kind { latent2d, normalized2d, latent_depth, composed_depth };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::latent2d: return "latent2d";
    case Kind::normalized2d: return "normalized2d";
    case Kind::latent_depth: return "latent_depth";
    case Kind::composed_depth: return "composed_depth";
  }
  return "?";
}

// A stack of per-joint maps, {2J, H, W}.
struct HeatmapStack {
  Var data;
  Kind kind = Kind::latent2d;

  HeatmapStack() = default;
  HeatmapStack(Var d, Kind k) : data(std::move(d)), kind(k) {
    if (data.value().rank() != 3)
      throw std::invalid_argument("HeatmapStack: expected {slices,H,W}, got " +
                                  data.value().shape_str());
  }

  int slices() const { return data.value().dim(0); }
  int height() const { return data.value().dim(1); }
  int width() const { return data.value().dim(2); }
};

namespace detail {
inline void require_kind(const HeatmapStack& h, Kind k, const char* op) {
  if (h.kind != k)
    throw std::invalid_argument(std::string(op) + ": expected " + kind_name(k) + " stack, got " +
                                kind_name(h.kind));
}

inline void require_normalized(const Var& v, const char* op, double tol) {
  const Tensor& t = v.value();
  const int K = t.dim(0), N = t.dim(1) * t.dim(2);
  for (int k = 0; k < K; ++k) {
    double s = 0;
    for (int i = 0; i < N; ++i) s += t[k * N + i];
    if (std::abs(s - 1.0) > tol)
      throw std::invalid_argument(std::string(op) + ": slice " + std::to_string(k) +
                                  " is not normalized (sum " + std::to_string(s) + ")");
  }
}
}  // namespace detail

// Per-slice softmax over all spatial positions.
inline HeatmapStack spatial_softmax(const HeatmapStack& h) {
  detail::require_kind(h, Kind::latent2d, "spatial_softmax");
  return HeatmapStack(ag::spatial_softmax(h.data), Kind::normalized2d);
}

// Expectation of (column, row) coordinates, zero-based, under each slice.
// `coord_scale` converts heatmap pixels to crop pixels.
inline Var soft_argmax_2d(const HeatmapStack& h, double coord_scale = 1.0) {
  detail::require_kind(h, Kind::normalized2d, "soft_argmax_2d");
  detail::require_normalized(h.data, "soft_argmax_2d", 1e-3);
  return ag::soft_argmax2d(h.data, coord_scale);
}

// H_z = H*_z elementwise-multiplied with the normalized 2D heatmap.
inline HeatmapStack compose_depth(const HeatmapStack& hz, const HeatmapStack& h2d) {
  detail::require_kind(hz, Kind::latent_depth, "compose_depth");
  detail::require_kind(h2d, Kind::normalized2d, "compose_depth");
  if (!hz.data.value().same_shape(h2d.data.value()))
    throw std::invalid_argument("compose_depth: shape mismatch " + hz.data.value().shape_str() +
                                " vs " + h2d.data.value().shape_str());
  return HeatmapStack(ag::mul(hz.data, h2d.data), Kind::composed_depth);
}

// Per-joint root-relative depth: the sum over each composed slice, converted
// to millimeters by `depth_scale_mm`.
inline Var per_joint_depth(const HeatmapStack& hz, double depth_scale_mm = 1.0) {
  detail::require_kind(hz, Kind::composed_depth, "per_joint_depth");
  Var s = ag::per_slice_sum(hz.data);
  return depth_scale_mm == 1.0 ? s : ag::scale(s, depth_scale_mm);
}

// Discrete distribution over relative-depth bins with a linear bin->mm map.
struct RelDepthDistribution {
  Var p;                // {D_z}, non-negative, sums to 1
  double bin0_mm = 0.0;  // mm value of bin 0
  double bin_step_mm = 1.0;

  double bin_to_mm(double bin) const { return bin0_mm + bin_step_mm * bin; }

  static RelDepthDistribution linear(Var p, double min_mm, double max_mm) {
    RelDepthDistribution d;
    const int D = p.numel();
    d.p = std::move(p);
    d.bin0_mm = min_mm;
    d.bin_step_mm = D > 1 ? (max_mm - min_mm) / (D - 1) : 0.0;
    return d;
  }
};

// Expectation of the bin index mapped to millimeters.
inline Var expected_rel_depth(const RelDepthDistribution& d) {
  const Tensor& pv = d.p.value();
  double s = 0;
  for (int i = 0; i < pv.numel(); ++i) {
    if (pv[i] < 0)
      throw std::invalid_argument("expected_rel_depth: negative probability");
    s += pv[i];
  }
  if (std::abs(s - 1.0) > 1e-3)
    throw std::invalid_argument("expected_rel_depth: distribution is not normalized (sum " +
                                std::to_string(s) + ")");
  Var bin = ag::expectation_index(d.p);
  Var mm = ag::scale(bin, d.bin_step_mm);
  if (d.bin0_mm == 0.0) return mm;
  return ag::add(mm, ag::constant(Tensor::scalar(d.bin0_mm)));
}

}  // namespace handpose::heatmap
