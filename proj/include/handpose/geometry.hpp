#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace handpose::geometry {

// Pinhole intrinsics in pixels. Units contract: depths and 3D coordinates in
// millimeters, projected coordinates in pixels.
struct CameraIntrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0))
      throw std::invalid_argument("CameraIntrinsics: focal lengths must be positive");
  }
};

// Invertible 2D affine map from full-image pixels to crop pixels.
struct CropTransform {
  double scale_x = 1.0, scale_y = 1.0, offset_x = 0.0, offset_y = 0.0;

  CropTransform() = default;
  CropTransform(double sx, double sy, double ox, double oy)
      : scale_x(sx), scale_y(sy), offset_x(ox), offset_y(oy) {
    if (scale_x == 0.0 || scale_y == 0.0)
      throw std::invalid_argument("CropTransform: zero scale is not invertible");
  }

  std::pair<double, double> apply(double x, double y) const {
    return {scale_x * x + offset_x, scale_y * y + offset_y};
  }

  std::pair<double, double> invert(double x, double y) const {
    return {(x - offset_x) / scale_x, (y - offset_y) / scale_y};
  }
};

// Joint triples for both hands, left block first. `valid` masks annotated
// joints; values at invalid joints are meaningless.
struct Pose3D {
  std::vector<std::array<double, 3>> joints;
  std::vector<std::uint8_t> valid;

  Pose3D() = default;
  explicit Pose3D(int n) : joints(static_cast<std::size_t>(n), {0, 0, 0}), valid(static_cast<std::size_t>(n), 1) {}
  int size() const { return static_cast<int>(joints.size()); }
};

// 2.5D joints: x, y in crop pixels, z in millimeters relative to the owning
// hand's root.
struct Pose25D {
  std::vector<std::array<double, 3>> joints;
  std::vector<std::uint8_t> valid;

  Pose25D() = default;
  explicit Pose25D(int n) : joints(static_cast<std::size_t>(n), {0, 0, 0}), valid(static_cast<std::size_t>(n), 1) {}
  int size() const { return static_cast<int>(joints.size()); }
};

// Directed bone edges over both hands. Joints [0, J) belong to the left
// hand, [J, 2J) to the right; each hand forms a tree rooted at its wrist.
struct KinematicTree {
  int joints_per_hand = 0;
  std::vector<std::pair<int, int>> edges;  // (parent, child)
  std::vector<int> root_of;                // joint -> root joint of its hand

  int total_joints() const { return 2 * joints_per_hand; }
  int left_root() const { return 0; }
  int right_root() const { return joints_per_hand; }
  bool is_left(int j) const { return j < joints_per_hand; }

  // Both hands as identical finger-chain skeletons: a root joint plus
  // `fingers` chains of `segments` joints each.
  static KinematicTree finger_chains(int fingers, int segments) {
    if (fingers < 1 || segments < 1)
      throw std::invalid_argument("KinematicTree: need at least one finger and segment");
    KinematicTree t;
    t.joints_per_hand = 1 + fingers * segments;
    const int J = t.joints_per_hand;
    t.root_of.resize(static_cast<std::size_t>(2 * J));
    for (int h = 0; h < 2; ++h) {
      const int base = h * J;
      for (int j = 0; j < J; ++j) t.root_of[static_cast<std::size_t>(base + j)] = base;
      for (int f = 0; f < fingers; ++f)
        for (int s = 0; s < segments; ++s) {
          const int child = base + 1 + f * segments + s;
          const int parent = s == 0 ? base : child - 1;
          t.edges.emplace_back(parent, child);
        }
    }
    return t;
  }

  // Default 21-joint hand (5 chains of 4).
  static KinematicTree standard(int joints_per_hand = 21) {
    if ((joints_per_hand - 1) % 4 == 0 && joints_per_hand >= 5)
      return finger_chains((joints_per_hand - 1) / 4, 4);
    return finger_chains(joints_per_hand - 1, 1);
  }
};

// Absolute root depths (mm) after composition, plus the right-handedness
// score that selected the branch.
struct RootDepths {
  double zL = 0.0, zR = 0.0;
  double hR = 0.0;
};

inline std::vector<std::pair<double, double>> crop_apply(
    const std::vector<std::pair<double, double>>& pts, const CropTransform& crop) {
  std::vector<std::pair<double, double>> out;
  out.reserve(pts.size());
  for (const auto& [x, y] : pts) out.push_back(crop.apply(x, y));
  return out;
}

inline std::vector<std::pair<double, double>> crop_invert(
    const std::vector<std::pair<double, double>>& pts, const CropTransform& crop) {
  std::vector<std::pair<double, double>> out;
  out.reserve(pts.size());
  for (const auto& [x, y] : pts) out.push_back(crop.invert(x, y));
  return out;
}

// Perspective projection into crop pixels. Invalid joints pass through as
// zeros; a valid joint behind the camera is a domain error.
inline std::vector<std::array<double, 2>> project_3d_to_2d(const Pose3D& pose,
                                                           const CameraIntrinsics& cam,
                                                           const CropTransform& crop) {
  std::vector<std::array<double, 2>> out(pose.joints.size(), {0, 0});
  for (std::size_t i = 0; i < pose.joints.size(); ++i) {
    if (!pose.valid[i]) continue;
    const auto& [X, Y, Z] = pose.joints[i];
    if (!(Z > 0.0))
      throw std::domain_error("project_3d_to_2d: non-positive depth at joint " + std::to_string(i));
    const auto [x, y] = crop.apply(cam.fx * X / Z + cam.cx, cam.fy * Y / Z + cam.cy);
    out[i] = {x, y};
  }
  return out;
}

inline Pose25D pose3d_to_25d(const Pose3D& pose, const CameraIntrinsics& cam,
                             const CropTransform& crop, const KinematicTree& tree) {
  if (pose.size() != tree.total_joints())
    throw std::invalid_argument("pose3d_to_25d: pose/tree joint count mismatch");
  const auto xy = project_3d_to_2d(pose, cam, crop);
  Pose25D out(pose.size());
  out.valid = pose.valid;
  for (std::size_t i = 0; i < pose.joints.size(); ++i) {
    if (!pose.valid[i]) continue;
    const int root = tree.root_of[i];
    out.joints[i] = {xy[i][0], xy[i][1],
                     pose.joints[i][2] - pose.joints[static_cast<std::size_t>(root)][2]};
  }
  return out;
}

// Left/right absolute root depths from the handedness score, the right-root
// depth, the predicted right-to-left relative depth, and the left-root depth
// used when the right hand is absent. Returns (Z_left, Z_right). A score of
// exactly 0.5 takes the relative-depth branch.
inline std::pair<double, double> compose_root_depths(double hR, double zR, double zRL, double zL) {
  if (hR < 0.0 || hR > 1.0)
    throw std::invalid_argument("compose_root_depths: handedness score outside [0,1]");
  const double ZL = hR < 0.5 ? zL : zR + zRL;
  return {ZL, zR};
}

inline Pose3D backproject_25d_to_3d(const Pose25D& pose, const CameraIntrinsics& cam,
                                    const CropTransform& crop, const RootDepths& roots,
                                    const KinematicTree& tree) {
  if (pose.size() != tree.total_joints())
    throw std::invalid_argument("backproject_25d_to_3d: pose/tree joint count mismatch");
  Pose3D out(pose.size());
  out.valid = pose.valid;
  for (std::size_t i = 0; i < pose.joints.size(); ++i) {
    if (!pose.valid[i]) continue;
    const double zroot = tree.is_left(static_cast<int>(i)) ? roots.zL : roots.zR;
    const double Z = pose.joints[i][2] + zroot;
    if (!(Z > 0.0))
      throw std::domain_error("backproject_25d_to_3d: non-positive depth at joint " +
                              std::to_string(i));
    const auto [u, v] = crop.invert(pose.joints[i][0], pose.joints[i][1]);
    out.joints[i] = {(u - cam.cx) * Z / cam.fx, (v - cam.cy) * Z / cam.fy, Z};
  }
  return out;
}

}  // namespace handpose::geometry
