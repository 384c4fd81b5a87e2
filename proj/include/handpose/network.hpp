#pragma once

#include <optional>
#include <string>
#include <vector>

#include "handpose/config.hpp"
#include "handpose/geometry.hpp"
#include "handpose/segmentation.hpp"

namespace handpose::net {

using ag::Var;

// Wiring variants. `baseline` has no segmentation network at all;
// `baseline_sl` attaches the head for supervision only; `segm_only` estimates
// pose from the segmentation volume alone; `full` fuses visual and semantic
// features; `full_no_sl` is the full wiring trained without segmentation
// supervision; the lr variants are segm_only with the 3-class taxonomy.
enum class Variant { baseline, baseline_sl, segm_only, full, full_no_sl, lr_prob, lr_mask };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::baseline_sl: return "baseline_sl";
    case Variant::segm_only: return "segm_only";
    case Variant::full: return "full";
    case Variant::full_no_sl: return "full_no_sl";
    case Variant::lr_prob: return "lr_prob";
    case Variant::lr_mask: return "lr_mask";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::baseline, Variant::baseline_sl, Variant::segm_only, Variant::full,
                    Variant::full_no_sl, Variant::lr_prob, Variant::lr_mask})
    if (s == variant_name(v)) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

struct ModelConfig {
  int joints_per_hand = 21;
  int num_classes = 33;
  int crop_size = 256;
  int feat_size = 64;      // W_F = H_F
  int feat_channels = 32;  // D_F
  int segm_size = 128;     // W_S = H_S
  int sem_channels = 512;  // D_S
  int proj_hidden = 64;
  int segm_mid1 = 16, segm_mid2 = 64;
  int unet_base = 64;
  std::vector<int> backbone_widths{32, 64, 64, 32};
  std::vector<int> head_widths{64, 128, 256, 512, 512, 512};
  int mlp_hidden = 512;
  int dz_bins = 64;
  double dz_min_mm = -400.0, dz_max_mm = 400.0;
  double depth_scale_mm = 1.0;
  Variant variant = Variant::full;
  bool segm_label_input = false;

  int total_joints() const { return 2 * joints_per_hand; }
  double heatmap_to_crop() const { return static_cast<double>(crop_size) / feat_size; }

  bool has_segm_head() const { return variant != Variant::baseline; }
  bool is_fused() const { return variant == Variant::full || variant == Variant::full_no_sl; }
  bool is_segm_only() const {
    return variant == Variant::segm_only || variant == Variant::lr_prob ||
           variant == Variant::lr_mask;
  }
  bool uses_label_input() const { return variant == Variant::lr_mask || segm_label_input; }
  int pose_in_channels() const {
    if (is_fused()) return feat_channels + sem_channels;
    if (is_segm_only()) return sem_channels;
    return feat_channels;
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
    if (joints_per_hand < 1) fail("joints_per_hand must be positive");
    if (feat_size * 4 != crop_size) fail("feat_size must be crop_size/4");
    if (segm_size != 2 * feat_size) fail("segm_size must be 2*feat_size");
    if (feat_size % 8 != 0) fail("feat_size must be divisible by 8");
    if (backbone_widths.size() != 4) fail("backbone_widths needs 4 stages");
    if (backbone_widths.back() != feat_channels) fail("last backbone width must be feat_channels");
    if (head_widths.size() != 6) fail("head_widths needs 6 entries");
    if (dz_bins < 2) fail("dz_bins must be >= 2");
    if (!(dz_max_mm > dz_min_mm)) fail("dz range is empty");
    if (num_classes < 2) fail("num_classes must be >= 2");
    const bool lr = variant == Variant::lr_prob || variant == Variant::lr_mask;
    if (lr && num_classes != 3) fail("lr variants use the 3-class taxonomy");
    if (!lr && num_classes != segm::PartTaxonomy::kClasses && has_segm_head())
      fail("part variants use the 33-class taxonomy");
  }

  // Paper-scale defaults (the struct initializers).
  static ModelConfig paper();

  // Desk-scale: 64px crops, 16x16 feature maps, narrow heads.
  static ModelConfig desk() {
    ModelConfig c;
    c.joints_per_hand = 7;
    c.crop_size = 64;
    c.feat_size = 16;
    c.feat_channels = 32;
    c.segm_size = 32;
    c.sem_channels = 32;
    c.proj_hidden = 32;
    c.unet_base = 32;
    c.backbone_widths = {16, 32, 32, 32};
    c.head_widths = {16, 32, 32, 64, 64, 64};
    c.mlp_hidden = 64;
    c.depth_scale_mm = 50.0;
    return c;
  }

  // Smallest config that still exercises every block; smoke tests.
  static ModelConfig tiny() {
    ModelConfig c;
    c.joints_per_hand = 5;
    c.crop_size = 32;
    c.feat_size = 8;
    c.feat_channels = 16;
    c.segm_size = 16;
    c.sem_channels = 16;
    c.proj_hidden = 16;
    c.segm_mid1 = 8;
    c.segm_mid2 = 16;
    c.unet_base = 16;
    c.backbone_widths = {8, 16, 16, 16};
    c.head_widths = {8, 16, 16, 32, 32, 32};
    c.mlp_hidden = 32;
    c.depth_scale_mm = 50.0;
    return c;
  }

  void to_kv(cfg::KeyValues& kv) const {
    kv.set("model.variant", variant_name(variant));
    kv.set_int("model.joints_per_hand", joints_per_hand);
    kv.set_int("model.num_classes", num_classes);
    kv.set_int("model.crop_size", crop_size);
    kv.set_int("model.feat_size", feat_size);
    kv.set_int("model.feat_channels", feat_channels);
    kv.set_int("model.segm_size", segm_size);
    kv.set_int("model.sem_channels", sem_channels);
    kv.set_int("model.proj_hidden", proj_hidden);
    kv.set_int("model.segm_mid1", segm_mid1);
    kv.set_int("model.segm_mid2", segm_mid2);
    kv.set_int("model.unet_base", unet_base);
    kv.set_int_list("model.backbone_widths", backbone_widths);
    kv.set_int_list("model.head_widths", head_widths);
    kv.set_int("model.mlp_hidden", mlp_hidden);
    kv.set_int("model.dz_bins", dz_bins);
    kv.set_double("model.dz_min_mm", dz_min_mm);
    kv.set_double("model.dz_max_mm", dz_max_mm);
    kv.set_double("model.depth_scale_mm", depth_scale_mm);
    kv.set_bool("model.segm_label_input", segm_label_input);
  }

  static ModelConfig from_kv(const cfg::KeyValues& kv, ModelConfig base) {
    ModelConfig c = base;
    if (kv.has("model.variant")) c.variant = variant_from_name(kv.get("model.variant"));
    c.joints_per_hand = static_cast<int>(kv.get_int("model.joints_per_hand", c.joints_per_hand));
    c.num_classes = static_cast<int>(kv.get_int("model.num_classes", c.num_classes));
    c.crop_size = static_cast<int>(kv.get_int("model.crop_size", c.crop_size));
    c.feat_size = static_cast<int>(kv.get_int("model.feat_size", c.feat_size));
    c.feat_channels = static_cast<int>(kv.get_int("model.feat_channels", c.feat_channels));
    c.segm_size = static_cast<int>(kv.get_int("model.segm_size", c.segm_size));
    c.sem_channels = static_cast<int>(kv.get_int("model.sem_channels", c.sem_channels));
    c.proj_hidden = static_cast<int>(kv.get_int("model.proj_hidden", c.proj_hidden));
    c.segm_mid1 = static_cast<int>(kv.get_int("model.segm_mid1", c.segm_mid1));
    c.segm_mid2 = static_cast<int>(kv.get_int("model.segm_mid2", c.segm_mid2));
    c.unet_base = static_cast<int>(kv.get_int("model.unet_base", c.unet_base));
    c.backbone_widths = kv.get_int_list("model.backbone_widths", c.backbone_widths);
    c.head_widths = kv.get_int_list("model.head_widths", c.head_widths);
    c.mlp_hidden = static_cast<int>(kv.get_int("model.mlp_hidden", c.mlp_hidden));
    c.dz_bins = static_cast<int>(kv.get_int("model.dz_bins", c.dz_bins));
    c.dz_min_mm = kv.get_double("model.dz_min_mm", c.dz_min_mm);
    c.dz_max_mm = kv.get_double("model.dz_max_mm", c.dz_max_mm);
    c.depth_scale_mm = kv.get_double("model.depth_scale_mm", c.depth_scale_mm);
    c.segm_label_input = kv.get_bool("model.segm_label_input", c.segm_label_input);
    return c;
  }
};

inline ModelConfig ModelConfig::paper() { return ModelConfig(); }

inline ModelConfig model_config_from_kv(const cfg::KeyValues& kv) {
  return ModelConfig::from_kv(kv, ModelConfig());
}

struct ModelOutput {
  Var handedness;  // {2}: (hL, hR), each in (0,1)
  heatmap::RelDepthDistribution rel_depth;
  Var rel_depth_mm;  // scalar, millimeters
  Var pose_xy;       // {2J, 2}, crop pixels
  Var pose_z;        // {2J}, millimeters, root-relative
  std::optional<segm::SegmentationVolume> segmentation;

  geometry::Pose25D pose25d() const {
    const int n = pose_z.numel();
    geometry::Pose25D p(n);
    for (int i = 0; i < n; ++i)
      p.joints[static_cast<std::size_t>(i)] = {pose_xy.value().at(i, 0), pose_xy.value().at(i, 1),
                                               pose_z.value()[i]};
    return p;
  }

  double hand_left() const { return handedness.value()[0]; }
  double hand_right() const { return handedness.value()[1]; }
};

// Handedness + relative-root-depth head: convolve and pool the pose features
// down to a latent vector, then two separate MLPs.
class GlobalHead {
 public:
  GlobalHead() = default;
  GlobalHead(nn::ParamStore& ps, const std::string& name, int in_ch,
             const std::vector<int>& widths, int mlp_hidden, int dz_bins, Rng& rng) {
    const int w[6] = {widths[0], widths[1], widths[2], widths[3], widths[4], widths[5]};
    c0_ = nn::Conv2d(ps, name + ".c0", in_ch, w[0], 3, 1, 1, rng);
    c1_ = nn::Conv2d(ps, name + ".c1", w[0], w[1], 3, 1, 1, rng);
    c2_ = nn::Conv2d(ps, name + ".c2", w[1], w[2], 3, 1, 1, rng);
    c3_ = nn::Conv2d(ps, name + ".c3", w[2], w[3], 3, 1, 1, rng);
    c4_ = nn::Conv2d(ps, name + ".c4", w[3], w[4], 3, 1, 1, rng);
    c5_ = nn::Conv2d(ps, name + ".c5", w[4], w[5], 3, 1, 1, rng);
    h1_ = nn::Linear(ps, name + ".mlp_h.l1", w[5], mlp_hidden, rng);
    h2_ = nn::Linear(ps, name + ".mlp_h.l2", mlp_hidden, 2, rng);
    z1_ = nn::Linear(ps, name + ".mlp_z.l1", w[5], mlp_hidden, rng);
    z2_ = nn::Linear(ps, name + ".mlp_z.l2", mlp_hidden, dz_bins, rng);
  }

  Var latent(const Var& feat) const {
    Var x = ag::relu(c1_(ag::relu(c0_(feat))));
    x = ag::maxpool2x2(x);
    x = ag::relu(c3_(ag::relu(c2_(x))));
    x = ag::maxpool2x2(x);
    x = ag::relu(c5_(ag::relu(c4_(x))));
    x = ag::maxpool2x2(x);
    return ag::spatial_mean(x);
  }

  std::pair<Var, Var> operator()(const Var& feat) const {
    Var x = latent(feat);
    Var handed = ag::sigmoid(h2_(ag::relu(h1_(x))));
    Var p = ag::softmax_vec(z2_(ag::relu(z1_(x))));
    return {handed, p};
  }

  nn::Conv2d c0_, c1_, c2_, c3_, c4_, c5_;
  nn::Linear h1_, h2_, z1_, z2_;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)) {
    cfg_.validate();
    Rng rng(Rng::derive(seed, 0x6d6f64656cULL));
    const int J2 = cfg_.total_joints();

    // backbone: two strided stages down to /4, two at feature resolution
    const auto& bw = cfg_.backbone_widths;
    stages_.emplace_back(ps_, "backbone.s0", 3, bw[0], 3, 2, 1, rng);
    stages_.emplace_back(ps_, "backbone.s1", bw[0], bw[1], 3, 2, 1, rng);
    stages_.emplace_back(ps_, "backbone.s2", bw[1], bw[2], 3, 1, 1, rng);
    stages_.emplace_back(ps_, "backbone.s3", bw[2], bw[3], 3, 1, 1, rng);

    if (cfg_.has_segm_head()) {
      segm_head_ = segm::SegmentationHead(ps_, "segm_head", cfg_.feat_channels, cfg_.segm_mid1,
                                          cfg_.segm_mid2, cfg_.num_classes, rng);
    }
    if (cfg_.is_fused() || cfg_.is_segm_only()) {
      proj_ = segm::SemanticProjection(ps_, "proj", cfg_.num_classes, cfg_.proj_hidden,
                                       cfg_.sem_channels, rng);
      unet_ = segm::FusionUNet(ps_, "fusion", cfg_.pose_in_channels(), cfg_.unet_base, rng);
    }

    const int pin = cfg_.pose_in_channels();
    hm2d_ = nn::Conv2d(ps_, "pose.hm2d", pin, J2, 1, 1, 0, rng);
    hmz_ = nn::Conv2d(ps_, "pose.hmz", pin, J2, 1, 1, 0, rng);
    global_ = GlobalHead(ps_, "global", pin, cfg_.head_widths, cfg_.mlp_hidden, cfg_.dz_bins, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }

  segm::FeatureMap backbone(const Tensor& image, bool training) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.crop_size ||
        image.dim(2) != cfg_.crop_size)
      throw std::invalid_argument("backbone: expected {3," + std::to_string(cfg_.crop_size) + "," +
                                  std::to_string(cfg_.crop_size) + "} image, got " +
                                  image.shape_str());
    Var x = ag::constant(image);
    for (auto& s : stages_) x = s(x, training);
    return {x, segm::FeatureRole::visual};
  }

  // Latent 2D heatmaps and latent depth maps via 1x1 convolutions.
  std::pair<heatmap::HeatmapStack, heatmap::HeatmapStack> pose_head(const Var& feat) {
    return {heatmap::HeatmapStack(hm2d_(feat), heatmap::Kind::latent2d),
            heatmap::HeatmapStack(hmz_(feat), heatmap::Kind::latent_depth)};
  }

  // Segmentation branch only (image -> S); used by the staged training arm.
  segm::SegmentationVolume forward_segm(const Tensor& image, bool training) {
    if (!cfg_.has_segm_head())
      throw std::logic_error("forward_segm: variant has no segmentation head");
    segm::FeatureMap f = backbone(image, training);
    return (*segm_head_)(f, training);
  }

  ModelOutput forward(const Tensor& image, bool training) {
    segm::FeatureMap f = backbone(image, training);

    std::optional<segm::SegmentationVolume> s;
    Var feat;
    if (cfg_.has_segm_head()) s = (*segm_head_)(f, training);

    if (cfg_.is_fused()) {
      segm::FeatureMap sp = (*proj_)(*s);
      feat = segm::fuse(*unet_, f, sp, training).data;
    } else if (cfg_.is_segm_only()) {
      const segm::SegmentationVolume input =
          cfg_.uses_label_input() ? segm::quantize_to_onehot(*s) : *s;
      segm::FeatureMap sp = (*proj_)(input);
      feat = (*unet_)(sp.data, training);
    } else {
      feat = f.data;
    }

    auto [h2d_latent, hz_latent] = pose_head(feat);
    heatmap::HeatmapStack h2d = heatmap::spatial_softmax(h2d_latent);
    Var xy = heatmap::soft_argmax_2d(h2d, cfg_.heatmap_to_crop());
    heatmap::HeatmapStack hz = heatmap::compose_depth(hz_latent, h2d);
    Var z = heatmap::per_joint_depth(hz, cfg_.depth_scale_mm);

    auto [handed, p] = global_(feat);
    ModelOutput out;
    out.handedness = handed;
    out.rel_depth = heatmap::RelDepthDistribution::linear(p, cfg_.dz_min_mm, cfg_.dz_max_mm);
    out.rel_depth_mm = heatmap::expected_rel_depth(out.rel_depth);
    out.pose_xy = xy;
    out.pose_z = z;
    out.segmentation = std::move(s);
    return out;
  }

  // Parameter groups for the staged training protocol.
  std::vector<Var> segm_branch_params() {
    auto out = ps_.trainable_with_prefix("backbone.");
    for (auto& v : ps_.trainable_with_prefix("segm_head.")) out.push_back(v);
    return out;
  }

  std::vector<Var> pose_branch_params() {
    std::vector<Var> out;
    for (const auto& prefix : {"proj.", "fusion.", "pose.", "global."})
      for (auto& v : ps_.trainable_with_prefix(prefix)) out.push_back(v);
    return out;
  }

  void set_segm_branch_frozen(bool frozen) {
    for (auto& v : segm_branch_params()) v.set_requires_grad(!frozen);
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore ps_;
  std::vector<nn::ConvBnRelu> stages_;
  std::optional<segm::SegmentationHead> segm_head_;
  std::optional<segm::SemanticProjection> proj_;
  std::optional<segm::FusionUNet> unet_;
  nn::Conv2d hm2d_, hmz_;
  GlobalHead global_;
};

}  // namespace handpose::net
