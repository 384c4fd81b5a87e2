#include <catch2/catch_amalgamated.hpp>

#include "handpose/heatmap.hpp"
#include "testutil.hpp"

using namespace handpose;
using namespace handpose::heatmap;
using ag::Var;
using testutil::gradcheck;
using testutil::randn;

namespace {

HeatmapStack latent(Tensor t) { return HeatmapStack(ag::param(std::move(t)), Kind::latent2d); }

}  // namespace

TEST_CASE("spatial softmax of a constant slice is uniform") {
  HeatmapStack h = latent(Tensor({2, 4, 4}));
  HeatmapStack n = spatial_softmax(h);
  REQUIRE(n.kind == Kind::normalized2d);
  for (int i = 0; i < n.data.numel(); ++i)
    REQUIRE(n.data.value()[i] == Catch::Approx(1.0 / 16).epsilon(1e-12));
}

TEST_CASE("spatial softmax saturates on a large spike") {
  Tensor t({1, 8, 8});
  t.at(0, 3, 5) = 1000.0;
  HeatmapStack n = spatial_softmax(latent(std::move(t)));
  REQUIRE(n.data.value().at(0, 3, 5) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("spatial softmax hand example") {
  Tensor t({1, 2, 2});
  t.at(0, 0, 1) = std::log(2.0);
  HeatmapStack n = spatial_softmax(latent(std::move(t)));
  REQUIRE(n.data.value().at(0, 0, 0) == Catch::Approx(0.2));
  REQUIRE(n.data.value().at(0, 0, 1) == Catch::Approx(0.4));
  REQUIRE(n.data.value().at(0, 1, 0) == Catch::Approx(0.2));
  REQUIRE(n.data.value().at(0, 1, 1) == Catch::Approx(0.2));
}

TEST_CASE("normalized slices sum to one and are non-negative") {
  Rng rng(41);
  HeatmapStack n = spatial_softmax(latent(randn({6, 16, 16}, rng, 3.0)));
  const Tensor& t = n.data.value();
  for (int k = 0; k < 6; ++k) {
    double s = 0;
    for (int i = 0; i < 256; ++i) {
      REQUIRE(t[k * 256 + i] >= 0.0);
      s += t[k * 256 + i];
    }
    REQUIRE(std::abs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("soft argmax returns the hot pixel exactly") {
  Tensor t({1, 32, 32});
  t.at(0, 20, 10) = 1.0;  // row 20, column 10
  Var xy = soft_argmax_2d(HeatmapStack(ag::constant(std::move(t)), Kind::normalized2d));
  REQUIRE(xy.value().at(0, 0) == 10.0);
  REQUIRE(xy.value().at(0, 1) == 20.0);
}

TEST_CASE("soft argmax of a uniform 64x64 slice is the grid centre") {
  Tensor t = Tensor::full({1, 64, 64}, 1.0 / 4096);
  Var xy = soft_argmax_2d(HeatmapStack(ag::constant(std::move(t)), Kind::normalized2d));
  REQUIRE(xy.value().at(0, 0) == Catch::Approx(31.5));
  REQUIRE(xy.value().at(0, 1) == Catch::Approx(31.5));
}

TEST_CASE("two equal modes decode to their midpoint") {
  // the failure mode where the prediction lands between the hands
  Tensor t({1, 63, 63});
  t.at(0, 0, 0) = 0.5;
  t.at(0, 0, 62) = 0.5;
  Var xy = soft_argmax_2d(HeatmapStack(ag::constant(std::move(t)), Kind::normalized2d));
  REQUIRE(xy.value().at(0, 0) == Catch::Approx(31.0));
  REQUIRE(xy.value().at(0, 1) == Catch::Approx(0.0));
}

TEST_CASE("soft argmax rejects unnormalized input") {
  Tensor t = Tensor::full({1, 4, 4}, 0.2);
  REQUIRE_THROWS_AS(soft_argmax_2d(HeatmapStack(ag::constant(std::move(t)), Kind::normalized2d)),
                    std::invalid_argument);
}

TEST_CASE("soft argmax applies the heatmap-to-crop scale") {
  Tensor t({1, 16, 16});
  t.at(0, 4, 7) = 1.0;
  Var xy = soft_argmax_2d(HeatmapStack(ag::constant(std::move(t)), Kind::normalized2d), 4.0);
  REQUIRE(xy.value().at(0, 0) == Catch::Approx(28.0));
  REQUIRE(xy.value().at(0, 1) == Catch::Approx(16.0));
}

TEST_CASE("soft argmax is translation equivariant") {
  Rng rng(42);
  Tensor base({1, 24, 24});
  // mass well inside the support so shifting does not clip
  for (int r = 8; r < 14; ++r)
    for (int c = 9; c < 15; ++c) base.at(0, r, c) = rng.uniform(0.1, 1.0);
  double s = base.sum();
  for (auto& v : base.vec()) v /= s;

  const int dr = 5, dc = -4;
  Tensor shifted({1, 24, 24});
  for (int r = 0; r < 24; ++r)
    for (int c = 0; c < 24; ++c) {
      const int sr = r - dr, sc = c - dc;
      if (sr >= 0 && sr < 24 && sc >= 0 && sc < 24) shifted.at(0, r, c) = base.at(0, sr, sc);
    }

  Var a = soft_argmax_2d(HeatmapStack(ag::constant(base), Kind::normalized2d));
  Var b = soft_argmax_2d(HeatmapStack(ag::constant(shifted), Kind::normalized2d));
  REQUIRE(b.value().at(0, 0) - a.value().at(0, 0) == Catch::Approx(dc).margin(1e-9));
  REQUIRE(b.value().at(0, 1) - a.value().at(0, 1) == Catch::Approx(dr).margin(1e-9));
}

TEST_CASE("compose_depth multiplies elementwise") {
  Tensor hz({1, 2, 2});
  hz.at(0, 0, 0) = 1;
  hz.at(0, 0, 1) = 2;
  hz.at(0, 1, 0) = 3;
  hz.at(0, 1, 1) = 4;
  Tensor h2d = Tensor::full({1, 2, 2}, 0.25);
  HeatmapStack composed = compose_depth(HeatmapStack(ag::constant(hz), Kind::latent_depth),
                                        HeatmapStack(ag::constant(h2d), Kind::normalized2d));
  REQUIRE(composed.kind == Kind::composed_depth);
  REQUIRE(composed.data.value().at(0, 0, 0) == Catch::Approx(0.25));
  REQUIRE(composed.data.value().at(0, 0, 1) == Catch::Approx(0.5));
  REQUIRE(composed.data.value().at(0, 1, 0) == Catch::Approx(0.75));
  REQUIRE(composed.data.value().at(0, 1, 1) == Catch::Approx(1.0));

  Var z = per_joint_depth(composed);
  REQUIRE(z.value()[0] == Catch::Approx(2.5));
}

TEST_CASE("compose_depth contract checks") {
  Tensor a({1, 4, 4}), b({1, 2, 2});
  REQUIRE_THROWS_AS(compose_depth(HeatmapStack(ag::constant(a), Kind::latent_depth),
                                  HeatmapStack(ag::constant(b), Kind::normalized2d)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(compose_depth(HeatmapStack(ag::constant(a), Kind::normalized2d),
                                  HeatmapStack(ag::constant(a), Kind::normalized2d)),
                    std::invalid_argument);
}

TEST_CASE("depth of a one-hot heatmap picks the latent value exactly") {
  Rng rng(43);
  Tensor hz = randn({3, 8, 8}, rng, 10.0);
  Tensor h2d({3, 8, 8});
  h2d.at(0, 2, 3) = 1.0;
  h2d.at(1, 7, 0) = 1.0;
  h2d.at(2, 5, 5) = 1.0;
  HeatmapStack composed = compose_depth(HeatmapStack(ag::constant(hz), Kind::latent_depth),
                                        HeatmapStack(ag::constant(h2d), Kind::normalized2d));
  Var z = per_joint_depth(composed);
  REQUIRE(z.value()[0] == hz.at(0, 2, 3));
  REQUIRE(z.value()[1] == hz.at(1, 7, 0));
  REQUIRE(z.value()[2] == hz.at(2, 5, 5));

  // uniform heatmap against a constant latent depth is that constant
  Tensor hzc = Tensor::full({1, 8, 8}, 42.0);
  Tensor uni = Tensor::full({1, 8, 8}, 1.0 / 64);
  Var zc = per_joint_depth(compose_depth(HeatmapStack(ag::constant(hzc), Kind::latent_depth),
                                         HeatmapStack(ag::constant(uni), Kind::normalized2d)));
  REQUIRE(zc.value()[0] == Catch::Approx(42.0).epsilon(1e-12));

  // all-zero latent depth composes to zero
  Var z0 = per_joint_depth(compose_depth(HeatmapStack(ag::constant(Tensor({1, 8, 8})), Kind::latent_depth),
                                         HeatmapStack(ag::constant(uni), Kind::normalized2d)));
  REQUIRE(z0.value()[0] == 0.0);
}

TEST_CASE("expected relative depth") {
  // one-hot
  Tensor p({64});
  p[17] = 1.0;
  Var mm = expected_rel_depth(RelDepthDistribution::linear(ag::constant(p), 0, 63));
  REQUIRE(mm.scalar() == 17.0);

  // uniform
  Tensor u = Tensor::full({64}, 1.0 / 64);
  Var mu = expected_rel_depth(RelDepthDistribution::linear(ag::constant(u), 0, 63));
  REQUIRE(mu.scalar() == Catch::Approx(31.5));

  // two-point expectation
  Tensor q({16});
  q[0] = 0.5;
  q[10] = 0.5;
  Var mq = expected_rel_depth(RelDepthDistribution::linear(ag::constant(q), 0, 15));
  REQUIRE(mq.scalar() == Catch::Approx(5.0));

  // millimeter mapping
  Tensor h({64});
  h[0] = 1.0;
  Var m0 = expected_rel_depth(RelDepthDistribution::linear(ag::constant(h), -400, 400));
  REQUIRE(m0.scalar() == Catch::Approx(-400.0));

  Tensor bad = Tensor::full({8}, 0.2);
  REQUIRE_THROWS_AS(expected_rel_depth(RelDepthDistribution::linear(ag::constant(bad), 0, 7)),
                    std::invalid_argument);
}

TEST_CASE("decoding gradients match finite differences on 8x8x2 stacks") {
  Rng rng(44);
  Var latent2d = ag::param(randn({2, 8, 8}, rng));
  Var latent_z = ag::param(randn({2, 8, 8}, rng));
  Tensor wxy = randn({2, 2}, rng);
  Tensor wz = randn({2}, rng);

  auto fxy = [&] {
    HeatmapStack n = spatial_softmax(HeatmapStack(latent2d, Kind::latent2d));
    return ag::weighted_sum(soft_argmax_2d(n, 4.0), wxy);
  };
  REQUIRE(gradcheck(fxy, {latent2d}) < 1e-3);

  auto fz = [&] {
    HeatmapStack n = spatial_softmax(HeatmapStack(latent2d, Kind::latent2d));
    HeatmapStack c = compose_depth(HeatmapStack(latent_z, Kind::latent_depth), n);
    return ag::weighted_sum(per_joint_depth(c, 50.0), wz);
  };
  REQUIRE(gradcheck(fz, {latent2d, latent_z}) < 1e-3);

  Var logits = ag::param(randn({16}, rng));
  auto frel = [&] {
    Var p = ag::softmax_vec(logits);
    return expected_rel_depth(RelDepthDistribution::linear(p, -400, 400));
  };
  REQUIRE(gradcheck(frel, {logits}) < 1e-3);
}
