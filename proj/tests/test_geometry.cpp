#include <catch2/catch_amalgamated.hpp>

#include "handpose/geometry.hpp"
#include "handpose/rng.hpp"

using namespace handpose;
using namespace handpose::geometry;

namespace {

Pose3D random_pose(int joints, Rng& rng) {
  Pose3D p(joints);
  for (auto& j : p.joints) {
    j[0] = rng.uniform(-300, 300);
    j[1] = rng.uniform(-300, 300);
    j[2] = rng.uniform(400, 1500);
  }
  return p;
}

}  // namespace

TEST_CASE("projection hits the principal point for the optical axis") {
  CameraIntrinsics cam(1000, 1000, 128, 128);
  KinematicTree tree = KinematicTree::finger_chains(1, 1);
  Pose3D p(4);
  for (auto& j : p.joints) j = {0, 0, 1000};
  auto xy = project_3d_to_2d(p, cam, CropTransform());
  REQUIRE(xy[0][0] == Catch::Approx(128.0));
  REQUIRE(xy[0][1] == Catch::Approx(128.0));

  p.joints[1] = {100, 0, 1000};
  xy = project_3d_to_2d(p, cam, CropTransform());
  REQUIRE(xy[1][0] == Catch::Approx(228.0));
  REQUIRE(xy[1][1] == Catch::Approx(128.0));
  (void)tree;
}

TEST_CASE("crop scaling halves projected coordinates") {
  CameraIntrinsics cam(800, 700, 120, 110);
  Rng rng(21);
  Pose3D p = random_pose(8, rng);
  auto full = project_3d_to_2d(p, cam, CropTransform());
  auto half = project_3d_to_2d(p, cam, CropTransform(0.5, 0.5, 0, 0));
  for (int i = 0; i < 8; ++i) {
    REQUIRE(half[i][0] == Catch::Approx(full[i][0] * 0.5));
    REQUIRE(half[i][1] == Catch::Approx(full[i][1] * 0.5));
  }
}

TEST_CASE("projection rejects non-positive depth and names the joint") {
  CameraIntrinsics cam(1000, 1000, 0, 0);
  Pose3D p(2);
  p.joints[0] = {0, 0, 800};
  p.joints[1] = {0, 0, -5};
  REQUIRE_THROWS_WITH(project_3d_to_2d(p, cam, CropTransform()),
                      Catch::Matchers::ContainsSubstring("joint 1"));
  p.valid[1] = 0;  // invalid joints are skipped
  REQUIRE_NOTHROW(project_3d_to_2d(p, cam, CropTransform()));
}

TEST_CASE("pose3d_to_25d is root-relative in depth") {
  CameraIntrinsics cam(1000, 1000, 128, 128);
  KinematicTree tree = KinematicTree::finger_chains(1, 1);  // J=2 per hand
  Pose3D p(4);
  p.joints[0] = {10, 5, 1000};
  p.joints[1] = {12, 8, 1050};
  p.joints[2] = {-20, 3, 900};
  p.joints[3] = {-22, 6, 880};
  Pose25D q = pose3d_to_25d(p, cam, CropTransform(), tree);
  REQUIRE(q.joints[0][2] == 0.0);
  REQUIRE(q.joints[2][2] == 0.0);
  REQUIRE(q.joints[1][2] == Catch::Approx(50.0));
  REQUIRE(q.joints[3][2] == Catch::Approx(-20.0));
}

TEST_CASE("all joints collapsed onto the root give zero relative depth") {
  CameraIntrinsics cam(500, 500, 64, 64);
  KinematicTree tree = KinematicTree::finger_chains(2, 2);
  Pose3D p(tree.total_joints());
  for (auto& j : p.joints) j = {40, -25, 777};
  Pose25D q = pose3d_to_25d(p, cam, CropTransform(), tree);
  for (int i = 0; i < q.size(); ++i) {
    REQUIRE(q.joints[i][2] == 0.0);
    REQUIRE(q.joints[i][0] == Catch::Approx(q.joints[0][0]));
    REQUIRE(q.joints[i][1] == Catch::Approx(q.joints[0][1]));
  }
}

TEST_CASE("compose_root_depths follows the handedness branch") {
  // right hand present: left depth derives from the right root
  auto [zl, zr] = compose_root_depths(0.9, 600, 25, 580);
  REQUIRE(zl == Catch::Approx(625.0));
  REQUIRE(zr == Catch::Approx(600.0));

  // right hand absent: left root keeps its own depth
  std::tie(zl, zr) = compose_root_depths(0.1, 600, 25, 580);
  REQUIRE(zl == Catch::Approx(580.0));

  // the boundary score takes the relative branch
  std::tie(zl, zr) = compose_root_depths(0.5, 600, 25, 580);
  REQUIRE(zl == Catch::Approx(625.0));

  for (double h : {0.0, 0.49, 0.5, 0.51, 1.0}) {
    auto [l, r] = compose_root_depths(h, 700, -30, 650);
    const double expect_l = h < 0.5 ? 650 : 700 - 30;
    REQUIRE(l == Catch::Approx(expect_l));
    REQUIRE(r == Catch::Approx(700.0));
  }

  REQUIRE_THROWS_AS(compose_root_depths(1.5, 600, 0, 600), std::invalid_argument);
}

TEST_CASE("backprojection inverts the closed form") {
  CameraIntrinsics cam(1000, 1000, 128, 128);
  KinematicTree tree = KinematicTree::finger_chains(1, 1);
  Pose25D q(4);
  for (auto& j : q.joints) j = {128, 128, 0};
  RootDepths roots{1000, 1000, 1.0};
  Pose3D p = backproject_25d_to_3d(q, cam, CropTransform(), roots, tree);
  REQUIRE(p.joints[0][0] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(p.joints[0][1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(p.joints[0][2] == Catch::Approx(1000.0));
}

TEST_CASE("backprojection under a scaled crop matches halved pixel coordinates") {
  CameraIntrinsics cam(900, 850, 130, 125);
  KinematicTree tree = KinematicTree::finger_chains(2, 2);
  Rng rng(31);
  Pose25D q(tree.total_joints());
  for (auto& j : q.joints) j = {rng.uniform(0, 512), rng.uniform(0, 512), rng.uniform(-40, 40)};
  RootDepths roots{820, 790, 1.0};

  Pose3D a = backproject_25d_to_3d(q, cam, CropTransform(2, 2, 0, 0), roots, tree);

  Pose25D half = q;
  for (auto& j : half.joints) {
    j[0] *= 0.5;
    j[1] *= 0.5;
  }
  Pose3D b = backproject_25d_to_3d(half, cam, CropTransform(), roots, tree);
  for (int i = 0; i < q.size(); ++i)
    for (int k = 0; k < 3; ++k) REQUIRE(a.joints[i][k] == Catch::Approx(b.joints[i][k]).margin(1e-9));
}

TEST_CASE("geometry round trip reproduces 3D joints to 1e-6 mm") {
  Rng rng(77);
  KinematicTree tree = KinematicTree::finger_chains(3, 2);
  for (int trial = 0; trial < 300; ++trial) {
    CameraIntrinsics cam(rng.uniform(300, 1500), rng.uniform(300, 1500), rng.uniform(80, 300),
                         rng.uniform(80, 300));
    CropTransform crop(rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0), rng.uniform(-200, 200),
                       rng.uniform(-200, 200));
    Pose3D p = random_pose(tree.total_joints(), rng);
    Pose25D q = pose3d_to_25d(p, cam, crop, tree);
    for (int j = 0; j < q.size(); ++j)
      if (tree.root_of[static_cast<std::size_t>(j)] == j) REQUIRE(q.joints[j][2] == 0.0);
    RootDepths roots{p.joints[static_cast<std::size_t>(tree.left_root())][2],
                     p.joints[static_cast<std::size_t>(tree.right_root())][2], 1.0};
    Pose3D r = backproject_25d_to_3d(q, cam, crop, roots, tree);
    for (int j = 0; j < p.size(); ++j)
      for (int k = 0; k < 3; ++k)
        REQUIRE(std::abs(r.joints[j][k] - p.joints[j][k]) < 1e-6);
  }
}

TEST_CASE("crop transform applies and inverts") {
  CropTransform id;
  auto [x, y] = id.apply(3.5, -2.25);
  REQUIRE(x == 3.5);
  REQUIRE(y == -2.25);

  CropTransform t(2, 2, 10, -5);
  auto [a, b] = t.apply(1, 1);
  REQUIRE(a == Catch::Approx(12.0));
  REQUIRE(b == Catch::Approx(-3.0));

  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    CropTransform c(rng.uniform(-4, 4) < 0 ? rng.uniform(-4, -0.2) : rng.uniform(0.2, 4),
                    rng.uniform(0.2, 4), rng.uniform(-300, 300), rng.uniform(-300, 300));
    const double px = rng.uniform(-500, 500), py = rng.uniform(-500, 500);
    auto [ax, ay] = c.apply(px, py);
    auto [ix, iy] = c.invert(ax, ay);
    REQUIRE(std::abs(ix - px) < 1e-9);
    REQUIRE(std::abs(iy - py) < 1e-9);
  }

  REQUIRE_THROWS_AS(CropTransform(0, 1, 0, 0), std::invalid_argument);
}

TEST_CASE("kinematic tree invariants") {
  KinematicTree t = KinematicTree::standard();
  REQUIRE(t.joints_per_hand == 21);
  REQUIRE(t.edges.size() == 40);
  REQUIRE(t.root_of[static_cast<std::size_t>(t.left_root())] == t.left_root());
  REQUIRE(t.root_of[static_cast<std::size_t>(t.right_root())] == t.right_root());

  // each non-root joint appears exactly once as a child, hands never mix
  std::vector<int> child_count(static_cast<std::size_t>(t.total_joints()), 0);
  for (auto& [p, c] : t.edges) {
    ++child_count[static_cast<std::size_t>(c)];
    REQUIRE(t.is_left(p) == t.is_left(c));
  }
  for (int j = 0; j < t.total_joints(); ++j) {
    const bool is_root = (j == t.left_root() || j == t.right_root());
    REQUIRE(child_count[static_cast<std::size_t>(j)] == (is_root ? 0 : 1));
  }
}
