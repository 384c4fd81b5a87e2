#include <catch2/catch_amalgamated.hpp>

#include "handpose/segmentation.hpp"
#include "testutil.hpp"

using namespace handpose;
using namespace handpose::segm;
using ag::Var;
using testutil::gradcheck;
using testutil::randn;

namespace {

// independently coded per-pixel -log-softmax, no shared code with the op
double ce_oracle(const Tensor& logits, const std::vector<std::uint16_t>& labels) {
  const int C = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  double total = 0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double denom = 0;
      for (int k = 0; k < C; ++k) denom += std::exp(logits.at(k, r, c));
      const int y = labels[static_cast<std::size_t>(r * W + c)];
      total += -std::log(std::exp(logits.at(y, r, c)) / denom);
    }
  return total / (H * W);
}

void zero_weights(nn::ParamStore& ps) {
  for (const auto& e : ps.entries())
    if (e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".w") {
      Var v = e.var;
      v.value().fill(0.0);
    }
}

}  // namespace

TEST_CASE("part taxonomy has 33 disjoint classes") {
  REQUIRE(PartTaxonomy::kClasses == 33);
  std::vector<int> seen;
  for (int f = 0; f < 4; ++f)
    for (int s = 0; s < 4; ++s) {
      const int l = PartTaxonomy::class_id(false, f, s);
      const int r = PartTaxonomy::class_id(true, f, s);
      REQUIRE(PartTaxonomy::is_left_part(l));
      REQUIRE(PartTaxonomy::is_right_part(r));
      REQUIRE(l != r);
      seen.push_back(l);
      seen.push_back(r);
    }
  std::sort(seen.begin(), seen.end());
  REQUIRE(std::unique(seen.begin(), seen.end()) == seen.end());
  REQUIRE(seen.size() == 32);

  REQUIRE(PartTaxonomy::class_name(0) == "background");
  REQUIRE(PartTaxonomy::collapse_lr(0) == 0);
  REQUIRE(PartTaxonomy::collapse_lr(5) == 1);
  REQUIRE(PartTaxonomy::collapse_lr(21) == 2);

  const std::string m = PartTaxonomy::manifest();
  REQUIRE(m.find("v1") != std::string::npos);
  REQUIRE(m.find("left_f0_s0") != std::string::npos);
  REQUIRE(m.find("right_f3_s3") != std::string::npos);
}

TEST_CASE("segmentation head doubles resolution and outputs class logits") {
  Rng rng(50);
  nn::ParamStore ps;
  SegmentationHead head(ps, "head", 16, 8, 16, 33, rng);
  FeatureMap f{ag::constant(randn({16, 8, 8}, rng)), FeatureRole::visual};
  SegmentationVolume s = head(f, true);
  REQUIRE(s.classes() == 33);
  REQUIRE(s.height() == 16);
  REQUIRE(s.width() == 16);
}

TEST_CASE("zero-weight segmentation head gives spatially constant logits") {
  Rng rng(51);
  nn::ParamStore ps;
  SegmentationHead head(ps, "head", 16, 8, 16, 33, rng);
  zero_weights(ps);
  // give the final layer a recognizable bias
  for (int c = 0; c < 33; ++c) head.out_.b_.value()[c] = 0.1 * c;

  FeatureMap f{ag::constant(randn({16, 8, 8}, rng)), FeatureRole::visual};
  SegmentationVolume s = head(f, true);
  for (int c = 0; c < 33; ++c)
    for (int i = 0; i < 256; ++i)
      REQUIRE(s.logits.value()[c * 256 + i] == Catch::Approx(0.1 * c).margin(1e-12));
}

TEST_CASE("semantic projection halves resolution and widens channels") {
  Rng rng(52);
  nn::ParamStore ps;
  SemanticProjection proj(ps, "proj", 33, 16, 24, rng);
  SegmentationVolume s{ag::constant(randn({33, 16, 16}, rng))};
  FeatureMap sp = proj(s);
  REQUIRE(sp.role == FeatureRole::semantic);
  REQUIRE(sp.channels() == 24);
  REQUIRE(sp.height() == 8);
  REQUIRE(sp.width() == 8);
}

TEST_CASE("semantic projection maps constant volumes to constant maps") {
  Rng rng(53);
  nn::ParamStore ps;
  SemanticProjection proj(ps, "proj", 5, 8, 8, rng);
  Tensor logits({5, 8, 8});
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 64; ++i) logits[c * 64 + i] = 0.7 * c - 1.0;
  FeatureMap sp = proj(SegmentationVolume{ag::constant(std::move(logits))});
  for (int c = 0; c < sp.channels(); ++c) {
    const double v0 = sp.data.value()[c * 16];
    for (int i = 0; i < 16; ++i) REQUIRE(sp.data.value()[c * 16 + i] == Catch::Approx(v0).margin(1e-12));
  }
}

TEST_CASE("gradient flows from semantic features back to logits") {
  Rng rng(54);
  nn::ParamStore ps;
  SemanticProjection proj(ps, "proj", 4, 6, 6, rng);
  Var logits = ag::param(randn({4, 8, 8}, rng));
  Tensor w = randn({6, 4, 4}, rng);
  auto f = [&] { return ag::weighted_sum(proj(SegmentationVolume{logits}).data, w); };
  REQUIRE(gradcheck(f, {logits}) < 1e-3);
}

TEST_CASE("fusion unet preserves spatial size and restores channels") {
  Rng rng(55);
  nn::ParamStore ps;
  FusionUNet unet(ps, "fusion", 24, 8, rng);
  FeatureMap f{ag::constant(randn({16, 8, 8}, rng)), FeatureRole::visual};
  FeatureMap s{ag::constant(randn({8, 8, 8}, rng)), FeatureRole::semantic};
  FeatureMap fused = fuse(unet, f, s, true);
  REQUIRE(fused.role == FeatureRole::fused);
  REQUIRE(fused.channels() == 24);
  REQUIRE(fused.height() == 8);
  REQUIRE(fused.width() == 8);
}

TEST_CASE("fusion unet at paper dimensions emits 544 channels at 64x64") {
  Rng rng(56);
  ag::NoGradGuard ng;
  nn::ParamStore ps;
  FusionUNet unet(ps, "fusion", 544, 64, rng);
  // bottleneck sits at 4x the base width
  REQUIRE(ps.find("fusion.down2.b.conv.w")->value().dim(0) == 256);

  FeatureMap f{ag::constant(randn({32, 64, 64}, rng)), FeatureRole::visual};
  FeatureMap s{ag::constant(randn({512, 64, 64}, rng)), FeatureRole::semantic};
  FeatureMap fused = fuse(unet, f, s, false);
  REQUIRE(fused.channels() == 544);
  REQUIRE(fused.height() == 64);
  REQUIRE(fused.width() == 64);
}

TEST_CASE("skip connections keep the output input-dependent with a dead bottleneck") {
  Rng rng(57);
  nn::ParamStore ps;
  FusionUNet unet(ps, "fusion", 12, 8, rng);
  // kill the bottleneck stage entirely
  for (const auto& e : ps.entries())
    if (e.name.rfind("fusion.down2", 0) == 0) {
      Var v = e.var;
      v.value().fill(0.0);
    }
  Var a = ag::constant(randn({12, 8, 8}, rng));
  Var b = ag::constant(randn({12, 8, 8}, rng));
  Var ya = unet(a, false);
  Var yb = unet(b, false);
  double diff = 0;
  for (int i = 0; i < ya.numel(); ++i) diff = std::max(diff, std::abs(ya.value()[i] - yb.value()[i]));
  REQUIRE(diff > 1e-6);
}

TEST_CASE("probability preservation: quantizing logits changes the fused features") {
  Rng rng(58);
  nn::ParamStore ps;
  SemanticProjection proj(ps, "proj", 6, 8, 8, rng);
  FusionUNet unet(ps, "fusion", 8, 8, rng);

  Tensor logits = randn({6, 8, 8}, rng);
  SegmentationVolume s{ag::constant(logits)};
  SegmentationVolume hard = quantize_to_onehot(s);

  Var soft_out = unet(proj(s).data, false);
  Var hard_out = unet(proj(hard).data, false);
  double diff = 0;
  for (int i = 0; i < soft_out.numel(); ++i)
    diff = std::max(diff, std::abs(soft_out.value()[i] - hard_out.value()[i]));
  REQUIRE(diff > 1e-3);
}

TEST_CASE("segmentation loss saturates to zero on confident correct logits") {
  Rng rng(59);
  PartLabelMap t(4, 4);
  for (int i = 0; i < 16; ++i) t.labels[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(rng.uniform_int(33));
  Tensor logits({33, 4, 4});
  for (int i = 0; i < 16; ++i) logits[t.labels[static_cast<std::size_t>(i)] * 16 + i] = 1e6;
  REQUIRE(segmentation_loss(SegmentationVolume{ag::constant(logits)}, t).scalar() ==
          Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("segmentation loss of uniform logits is ln(num classes)") {
  PartLabelMap t(8, 8);
  Tensor logits = Tensor::full({33, 8, 8}, 0.37);
  REQUIRE(segmentation_loss(SegmentationVolume{ag::constant(logits)}, t).scalar() ==
          Catch::Approx(std::log(33.0)).epsilon(1e-12));
}

TEST_CASE("segmentation loss single-pixel hand example") {
  PartLabelMap t(1, 1);
  t.labels[0] = 1;
  Tensor logits({33, 1, 1});
  logits[1] = std::log(2.0);
  REQUIRE(segmentation_loss(SegmentationVolume{ag::constant(logits)}, t).scalar() ==
          Catch::Approx(std::log(17.0)).epsilon(1e-12));
}

TEST_CASE("segmentation loss matches the oracle on random volumes") {
  Rng rng(60);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor logits = randn({33, 4, 4}, rng, 2.0);
    PartLabelMap t(4, 4);
    for (auto& l : t.labels) l = static_cast<std::uint16_t>(rng.uniform_int(33));
    const double got = segmentation_loss(SegmentationVolume{ag::constant(logits)}, t).scalar();
    REQUIRE(std::abs(got - ce_oracle(logits, t.labels)) < 1e-9);
  }
}

TEST_CASE("segmentation loss rejects out-of-range labels and shape mismatch") {
  PartLabelMap t(2, 2);
  t.labels[0] = 33;
  REQUIRE_THROWS_AS(segmentation_loss(SegmentationVolume{ag::constant(Tensor({33, 2, 2}))}, t),
                    std::invalid_argument);
  PartLabelMap t2(3, 3);
  REQUIRE_THROWS_AS(segmentation_loss(SegmentationVolume{ag::constant(Tensor({33, 2, 2}))}, t2),
                    std::invalid_argument);
}

TEST_CASE("segmentation loss gradient matches finite differences") {
  Rng rng(61);
  Var logits = ag::param(randn({33, 4, 4}, rng));
  PartLabelMap t(4, 4);
  for (auto& l : t.labels) l = static_cast<std::uint16_t>(rng.uniform_int(33));
  auto f = [&] { return segmentation_loss(SegmentationVolume{logits}, t); };
  REQUIRE(gradcheck(f, {logits}) < 1e-3);
}

TEST_CASE("argmax labels with deterministic tie-breaking") {
  Tensor logits({3, 1, 2});
  // pixel 0: one-hot class 2; pixel 1: tie between classes 0 and 2
  logits.at(2, 0, 0) = 5.0;
  logits.at(0, 0, 1) = 1.5;
  logits.at(2, 0, 1) = 1.5;
  PartLabelMap l = argmax_labels(SegmentationVolume{ag::constant(logits)});
  REQUIRE(l.at(0, 0) == 2);
  REQUIRE(l.at(0, 1) == 0);  // lowest class id wins ties
}

TEST_CASE("argmax labels agree with a brute-force scan") {
  Rng rng(62);
  Tensor logits = randn({33, 6, 6}, rng);
  PartLabelMap got = argmax_labels(SegmentationVolume{ag::constant(logits)});
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      int best = 0;
      for (int k = 1; k < 33; ++k)
        if (logits.at(k, r, c) > logits.at(best, r, c)) best = k;
      REQUIRE(got.at(r, c) == best);
    }
}
