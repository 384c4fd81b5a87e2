#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "handpose/heatmap.hpp"
#include "handpose/nn.hpp"

namespace handpose::segm {

using ag::Var;

// Fixed 33-class part taxonomy: background plus 16 parts per hand, the parts
// being a 4x4 grid of (finger chain, segment). Class ids are versioned and
// stable; the table ships with the repo as a text manifest.
struct PartTaxonomy {
  static constexpr int kFingers = 4;
  static constexpr int kSegments = 4;
  static constexpr int kPartsPerHand = kFingers * kSegments;
  static constexpr int kClasses = 1 + 2 * kPartsPerHand;  // 33
  static constexpr const char* kVersion = "v1";

  static int part_index(int finger, int segment) {
    if (finger < 0 || finger >= kFingers || segment < 0 || segment >= kSegments)
      throw std::invalid_argument("PartTaxonomy: part out of range");
    return finger * kSegments + segment;
  }

  // 0 = background, 1..16 = left parts, 17..32 = right parts
  static int class_id(bool right_hand, int finger, int segment) {
    return 1 + (right_hand ? kPartsPerHand : 0) + part_index(finger, segment);
  }

  static bool is_left_part(int id) { return id >= 1 && id <= kPartsPerHand; }
  static bool is_right_part(int id) { return id > kPartsPerHand && id < kClasses; }

  static std::string class_name(int id) {
    if (id == 0) return "background";
    const int part = (id - 1) % kPartsPerHand;
    const char* hand = is_left_part(id) ? "left" : "right";
    return std::string(hand) + "_f" + std::to_string(part / kSegments) + "_s" +
           std::to_string(part % kSegments);
  }

  // Display palette: parts are tinted per (finger, segment) pair; the left
  // and right versions of a part share hue and differ in value.
  static std::array<int, 3> class_color(int id) {
    if (id == 0) return {0, 0, 0};
    const int part = (id - 1) % kPartsPerHand;
    const bool right = is_right_part(id);
    const double hue = 360.0 * part / kPartsPerHand;
    const double value = right ? 0.55 : 0.95;
    const double c = value, hp = hue / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    return {static_cast<int>(255 * r), static_cast<int>(255 * g), static_cast<int>(255 * b)};
  }

  // Versioned manifest, one row per class: id, name, hand, display color.
  static std::string manifest() {
    std::string out = "# part taxonomy " + std::string(kVersion) + "\n";
    out += "# id\tname\thand\tcolor\n";
    for (int id = 0; id < kClasses; ++id) {
      const auto col = class_color(id);
      const char* hand = id == 0 ? "none" : (is_left_part(id) ? "left" : "right");
      out += std::to_string(id) + "\t" + class_name(id) + "\t" + hand + "\t#";
      char buf[8];
      std::snprintf(buf, sizeof(buf), "%02x%02x%02x", col[0], col[1], col[2]);
      out += buf;
      out += "\n";
    }
    return out;
  }

  // Collapse to the 3-class left/right taxonomy used by the LR ablation arms.
  static std::uint16_t collapse_lr(std::uint16_t id) {
    if (id == 0) return 0;
    return is_left_part(static_cast<int>(id)) ? 1 : 2;
  }
};

// Unnormalized per-pixel class scores, {C, H_S, W_S}. Consumed as logits by
// the fusion path; argmax_labels exists for display, mIoU, and the
// class-label ablation arm only.
struct SegmentationVolume {
  Var logits;

  int classes() const { return logits.value().dim(0); }
  int height() const { return logits.value().dim(1); }
  int width() const { return logits.value().dim(2); }
};

struct PartLabelMap {
  std::vector<std::uint16_t> labels;  // row-major
  int height = 0, width = 0;

  PartLabelMap() = default;
  PartLabelMap(int h, int w) : labels(static_cast<std::size_t>(h) * w, 0), height(h), width(w) {}

  std::uint16_t& at(int r, int c) { return labels[static_cast<std::size_t>(r) * width + c]; }
  std::uint16_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * width + c]; }
};

enum class FeatureRole { visual, semantic, fused };

struct FeatureMap {
  Var data;  // {D, H, W}
  FeatureRole role = FeatureRole::visual;

  int channels() const { return data.value().dim(0); }
  int height() const { return data.value().dim(1); }
  int width() const { return data.value().dim(2); }
};

namespace detail {
inline void require_role(const FeatureMap& f, FeatureRole r, const char* op) {
  if (f.role != r) throw std::invalid_argument(std::string(op) + ": wrong feature role");
}
}  // namespace detail

// Upsamples the visual features by 2x and produces segmentation logits via a
// conv chain with batch norm and rectifier between all but the last layer.
class SegmentationHead {
 public:
  SegmentationHead() = default;
  SegmentationHead(nn::ParamStore& ps, const std::string& name, int in_ch, int mid1, int mid2,
                   int classes, Rng& rng)
      : l1_(ps, name + ".l1", in_ch, mid1, 3, 1, 1, rng),
        l2_(ps, name + ".l2", mid1, mid2, 3, 1, 1, rng),
        l3_(ps, name + ".l3", mid2, classes, 3, 1, 1, rng),
        out_(ps, name + ".out", classes, classes, 3, 1, 1, rng) {}

  SegmentationVolume operator()(const FeatureMap& f, bool training) {
    detail::require_role(f, FeatureRole::visual, "segmentation_head");
    Var x = ag::bilinear_resize(f.data, 2 * f.height(), 2 * f.width());
    x = l1_(x, training);
    x = l2_(x, training);
    x = l3_(x, training);
    return {out_(x)};
  }

  nn::ConvBnRelu l1_, l2_, l3_;
  nn::Conv2d out_;
};

// Two convolutions over the raw logits followed by a 2x max-pool, yielding
// semantic features at the visual-feature resolution. Replicate padding so
// that a spatially constant volume projects to a constant map.
class SemanticProjection {
 public:
  SemanticProjection() = default;
  SemanticProjection(nn::ParamStore& ps, const std::string& name, int classes, int hidden,
                     int out_ch, Rng& rng)
      : c1_(ps, name + ".c1", classes, hidden, 3, 1, 1, rng, ag::PadMode::replicate),
        c2_(ps, name + ".c2", hidden, out_ch, 3, 1, 1, rng, ag::PadMode::replicate) {}

  FeatureMap operator()(const SegmentationVolume& s) {
    Var x = ag::relu(c1_(s.logits));
    x = ag::relu(c2_(x));
    return {ag::maxpool2x2(x), FeatureRole::semantic};
  }

  nn::Conv2d c1_, c2_;
};

class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(nn::ParamStore& ps, const std::string& name, int in_ch, int out_ch, Rng& rng)
      : a_(ps, name + ".a", in_ch, out_ch, 3, 1, 1, rng), b_(ps, name + ".b", out_ch, out_ch, 3, 1, 1, rng) {}

  Var operator()(const Var& x, bool training) { return b_(a_(x, training), training); }

  nn::ConvBnRelu a_, b_;
};

// Two-down / two-up UNet over the channel-concatenated visual and semantic
// features. Skip connections keep the full-resolution path alive; the final
// 1x1 convolution restores the input channel count.
class FusionUNet {
 public:
  FusionUNet() = default;
  FusionUNet(nn::ParamStore& ps, const std::string& name, int in_ch, int base, Rng& rng)
      : inc_(ps, name + ".inc", in_ch, base, rng),
        down1_(ps, name + ".down1", base, 2 * base, rng),
        down2_(ps, name + ".down2", 2 * base, 4 * base, rng),
        up1_(ps, name + ".up1", 4 * base + 2 * base, 2 * base, rng),
        up2_(ps, name + ".up2", 2 * base + base, base, rng),
        out_(ps, name + ".out", base, in_ch, 1, 1, 0, rng) {}

  Var operator()(const Var& x, bool training) {
    const int h = x.value().dim(1), w = x.value().dim(2);
    Var e0 = inc_(x, training);
    Var e1 = down1_(ag::bilinear_resize(e0, h / 2, w / 2), training);
    Var e2 = down2_(ag::bilinear_resize(e1, h / 4, w / 4), training);
    Var u1 = up1_(ag::concat_channels(ag::bilinear_resize(e2, h / 2, w / 2), e1), training);
    Var u2 = up2_(ag::concat_channels(ag::bilinear_resize(u1, h, w), e0), training);
    return out_(u2);
  }

  DoubleConv inc_, down1_, down2_, up1_, up2_;
  nn::Conv2d out_;
};

// Channel-concatenate visual and semantic features, then fuse across scales.
inline FeatureMap fuse(FusionUNet& unet, const FeatureMap& f, const FeatureMap& s, bool training) {
  detail::require_role(f, FeatureRole::visual, "fuse");
  detail::require_role(s, FeatureRole::semantic, "fuse");
  if (f.height() != s.height() || f.width() != s.width())
    throw std::invalid_argument("fuse: spatial dimensions differ");
  return {unet(ag::concat_channels(f.data, s.data), training), FeatureRole::fused};
}

// Multi-class cross-entropy against the groundtruth label map, mean over
// pixels.
inline Var segmentation_loss(const SegmentationVolume& s, const PartLabelMap& t) {
  if (s.height() != t.height || s.width() != t.width)
    throw std::invalid_argument("segmentation_loss: spatial dimensions differ");
  return ag::cross_entropy_mean(s.logits, t.labels);
}

// Per-pixel argmax; ties break to the lowest class id. Display, mIoU, and
// the class-label ablation arm only; the pose path always consumes logits.
inline PartLabelMap argmax_labels(const SegmentationVolume& s) {
  const Tensor& l = s.logits.value();
  const int C = l.dim(0), H = l.dim(1), W = l.dim(2);
  const int N = H * W;
  PartLabelMap out(H, W);
  for (int n = 0; n < N; ++n) {
    int best = 0;
    double bv = l[n];
    for (int c = 1; c < C; ++c)
      if (l[c * N + n] > bv) {
        bv = l[c * N + n];
        best = c;
      }
    out.labels[static_cast<std::size_t>(n)] = static_cast<std::uint16_t>(best);
  }
  return out;
}

// One-hot encoding of the argmax labels, detached from the tape. This is the
// quantization step the class-label ablation arm inserts before projection.
inline SegmentationVolume quantize_to_onehot(const SegmentationVolume& s) {
  const PartLabelMap labels = argmax_labels(s);
  const int C = s.classes(), H = s.height(), W = s.width();
  Tensor onehot({C, H, W});
  const int N = H * W;
  for (int n = 0; n < N; ++n) onehot[labels.labels[static_cast<std::size_t>(n)] * N + n] = 1.0;
  return {ag::constant(std::move(onehot))};
}

}  // namespace handpose::segm
