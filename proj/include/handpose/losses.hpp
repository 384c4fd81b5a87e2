#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "handpose/geometry.hpp"
#include "handpose/network.hpp"

namespace handpose::losses {

using ag::Var;

// Loss balance; defaults follow the training recipe (lambda_s 10, lambda_b 1).
struct LossWeights {
  double lambda_s = 10.0;
  double lambda_b = 1.0;

  void validate() const {
    if (lambda_s < 0 || lambda_b < 0)
      throw std::invalid_argument("LossWeights: weights must be non-negative");
  }
};

// Unweighted per-term values; total applies the lambda weights.
struct LossReport {
  double handedness = 0.0;
  double pose25d = 0.0;
  double rel_depth = 0.0;
  double segmentation = 0.0;
  double bone = 0.0;
  double total = 0.0;
  bool pose_no_valid_joints = false;
  bool segmentation_used = false;
};

// Supervision for one sample.
struct TrainTarget {
  Tensor handedness{{2}};  // (left, right) presence as 0/1
  Tensor gt_xy;            // {2J,2} crop pixels
  Tensor gt_z;             // {2J} mm, root-relative
  std::vector<std::uint8_t> joint_valid;  // {2J}
  bool both_hands = false;
  double gt_rel_depth_mm = 0.0;  // Z_left_root - Z_right_root
  std::optional<segm::PartLabelMap> part_labels;

  static TrainTarget from_pose(const geometry::Pose25D& gt, bool left, bool right,
                               double rel_depth_mm) {
    TrainTarget t;
    const int n = gt.size();
    t.gt_xy = Tensor({n, 2});
    t.gt_z = Tensor({n});
    t.joint_valid = gt.valid;
    for (int i = 0; i < n; ++i) {
      t.gt_xy.at(i, 0) = gt.joints[static_cast<std::size_t>(i)][0];
      t.gt_xy.at(i, 1) = gt.joints[static_cast<std::size_t>(i)][1];
      t.gt_z[i] = gt.joints[static_cast<std::size_t>(i)][2];
    }
    t.handedness[0] = left ? 1.0 : 0.0;
    t.handedness[1] = right ? 1.0 : 0.0;
    t.both_hands = left && right;
    t.gt_rel_depth_mm = rel_depth_mm;
    return t;
  }
};

// Multi-label binary cross-entropy over the two presence scores, summed.
inline Var handedness_loss(const Var& pred, const Tensor& gt) { return ag::bce_sum(pred, gt); }

// Mean absolute error over valid joints and all three 2.5D coordinates.
// With no valid joints the loss is zero and the warning flag is set.
inline Var pose25d_loss(const Var& xy, const Var& z, const TrainTarget& t,
                        bool* no_valid = nullptr) {
  const int n = z.numel();
  int valid_count = 0;
  std::vector<std::uint8_t> mxy(static_cast<std::size_t>(2 * n));
  std::vector<std::uint8_t> mz(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const bool v = t.joint_valid[static_cast<std::size_t>(i)];
    mxy[static_cast<std::size_t>(2 * i)] = v;
    mxy[static_cast<std::size_t>(2 * i + 1)] = v;
    mz[static_cast<std::size_t>(i)] = v;
    valid_count += v;
  }
  if (no_valid) *no_valid = valid_count == 0;
  if (valid_count == 0) return ag::constant(Tensor::scalar(0.0));
  Var s = ag::add(ag::l1_sum_masked(xy, t.gt_xy, mxy), ag::l1_sum_masked(z, t.gt_z, mz));
  return ag::scale(s, 1.0 / (3.0 * valid_count));
}

inline Var pose25d_loss(const geometry::Pose25D& pred, const geometry::Pose25D& gt,
                        bool* no_valid = nullptr) {
  const int n = pred.size();
  if (n != gt.size()) throw std::invalid_argument("pose25d_loss: joint count mismatch");
  if (pred.valid != gt.valid) throw std::invalid_argument("pose25d_loss: valid masks differ");
  Tensor xy({n, 2}), z({n});
  for (int i = 0; i < n; ++i) {
    xy.at(i, 0) = pred.joints[static_cast<std::size_t>(i)][0];
    xy.at(i, 1) = pred.joints[static_cast<std::size_t>(i)][1];
    z[i] = pred.joints[static_cast<std::size_t>(i)][2];
  }
  TrainTarget t;
  t.gt_xy = Tensor({n, 2});
  t.gt_z = Tensor({n});
  t.joint_valid = gt.valid;
  for (int i = 0; i < n; ++i) {
    t.gt_xy.at(i, 0) = gt.joints[static_cast<std::size_t>(i)][0];
    t.gt_xy.at(i, 1) = gt.joints[static_cast<std::size_t>(i)][1];
    t.gt_z[i] = gt.joints[static_cast<std::size_t>(i)][2];
  }
  return pose25d_loss(ag::constant(std::move(xy)), ag::constant(std::move(z)), t, no_valid);
}

// L1 on the right-to-left relative root depth; contributes only when both
// hands are present in the sample.
inline Var rel_depth_loss(const Var& pred_mm, const TrainTarget& t) {
  if (!t.both_hands) return ag::constant(Tensor::scalar(0.0));
  return ag::abs_err(pred_mm, t.gt_rel_depth_mm);
}

// Bone-vector regularizer: sum over directed kinematic edges of the L2 norm
// of the predicted-minus-groundtruth bone vector in 2.5D space.
inline Var bone_loss(const Var& xy, const Var& z, const TrainTarget& t,
                     const geometry::KinematicTree& tree) {
  return ag::bone_residual_sum(xy, z, t.gt_xy, t.gt_z, tree.edges, t.joint_valid);
}

inline Var bone_loss(const geometry::Pose25D& pred, const geometry::Pose25D& gt,
                     const geometry::KinematicTree& tree) {
  const int n = pred.size();
  Tensor xy({n, 2}), z({n});
  for (int i = 0; i < n; ++i) {
    xy.at(i, 0) = pred.joints[static_cast<std::size_t>(i)][0];
    xy.at(i, 1) = pred.joints[static_cast<std::size_t>(i)][1];
    z[i] = pred.joints[static_cast<std::size_t>(i)][2];
  }
  TrainTarget t;
  t.gt_xy = Tensor({n, 2});
  t.gt_z = Tensor({n});
  t.joint_valid = gt.valid;
  for (int i = 0; i < n; ++i) {
    t.gt_xy.at(i, 0) = gt.joints[static_cast<std::size_t>(i)][0];
    t.gt_xy.at(i, 1) = gt.joints[static_cast<std::size_t>(i)][1];
    t.gt_z[i] = gt.joints[static_cast<std::size_t>(i)][2];
  }
  return bone_loss(ag::constant(std::move(xy)), ag::constant(std::move(z)), t, tree);
}

struct TotalLoss {
  Var total;
  LossReport report;
};

// Full objective: handedness + 2.5D pose + relative depth, plus the weighted
// segmentation and bone terms. The segmentation term is skipped for variants
// without a segmentation network and when lambda_s is zero.
inline TotalLoss total_loss(const net::ModelOutput& out, const TrainTarget& t,
                            const LossWeights& w, const geometry::KinematicTree& tree) {
  w.validate();
  LossReport rep;

  Var h = handedness_loss(out.handedness, t.handedness);
  Var p = pose25d_loss(out.pose_xy, out.pose_z, t, &rep.pose_no_valid_joints);
  Var zl = rel_depth_loss(out.rel_depth_mm, t);
  Var b = bone_loss(out.pose_xy, out.pose_z, t, tree);

  Var total = ag::add(ag::add(h, p), zl);
  if (w.lambda_b > 0) total = ag::add(total, ag::scale(b, w.lambda_b));

  rep.handedness = h.scalar();
  rep.pose25d = p.scalar();
  rep.rel_depth = zl.scalar();
  rep.bone = b.scalar();

  if (out.segmentation && t.part_labels && w.lambda_s > 0) {
    Var s = segm::segmentation_loss(*out.segmentation, *t.part_labels);
    total = ag::add(total, ag::scale(s, w.lambda_s));
    rep.segmentation = s.scalar();
    rep.segmentation_used = true;
  }

  rep.total = total.scalar();
  return {total, rep};
}

}  // namespace handpose::losses
