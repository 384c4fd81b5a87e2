#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "handpose/geometry.hpp"
#include "handpose/segmentation.hpp"

namespace handpose::metrics {

using geometry::KinematicTree;
using geometry::Pose3D;
using segm::PartLabelMap;

// Per-sample evaluation row. MRRPE exists only for interacting samples.
struct EvalRecord {
  int sample = 0;
  bool left = false, right = false;
  double interaction_iou = 0.0;
  std::optional<double> mpjpe_mm;
  std::optional<double> mrrpe_mm;
  std::optional<double> miou;
  std::optional<double> bone_asym_mm;

  bool interacting() const { return left && right; }
};

namespace detail {
inline double dist3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}
}  // namespace detail

// Root-relative mean per-joint position error in millimeters. Each hand is
// aligned by its own root before averaging; a hand contributes only when its
// root is annotated. Returns nothing when no joint is usable (sample skipped).
inline std::optional<double> mpjpe(const Pose3D& pred, const Pose3D& gt,
                                   const KinematicTree& tree) {
  if (pred.size() != gt.size() || pred.size() != tree.total_joints())
    throw std::invalid_argument("mpjpe: joint count mismatch");
  double sum = 0.0;
  int count = 0;
  for (int i = 0; i < gt.size(); ++i) {
    if (!gt.valid[static_cast<std::size_t>(i)] || !pred.valid[static_cast<std::size_t>(i)]) continue;
    const int root = tree.root_of[static_cast<std::size_t>(i)];
    if (!gt.valid[static_cast<std::size_t>(root)] || !pred.valid[static_cast<std::size_t>(root)])
      continue;
    std::array<double, 3> p, g;
    for (int k = 0; k < 3; ++k) {
      p[static_cast<std::size_t>(k)] = pred.joints[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -
                                       pred.joints[static_cast<std::size_t>(root)][static_cast<std::size_t>(k)];
      g[static_cast<std::size_t>(k)] = gt.joints[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] -
                                       gt.joints[static_cast<std::size_t>(root)][static_cast<std::size_t>(k)];
    }
    sum += detail::dist3(p, g);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

// Mean relative-root position error: the error of the left root after
// aligning by the right root. Defined only for interacting samples.
inline double mrrpe(const Pose3D& pred, const Pose3D& gt, const KinematicTree& tree) {
  const auto l = static_cast<std::size_t>(tree.left_root());
  const auto r = static_cast<std::size_t>(tree.right_root());
  if (!gt.valid[l] || !gt.valid[r] || !pred.valid[l] || !pred.valid[r])
    throw std::invalid_argument("mrrpe: requires both root joints");
  std::array<double, 3> dp, dg;
  for (std::size_t k = 0; k < 3; ++k) {
    dp[k] = pred.joints[l][k] - pred.joints[r][k];
    dg[k] = gt.joints[l][k] - gt.joints[r][k];
  }
  return detail::dist3(dp, dg);
}

// Average precision (percent) for one binary label set under a score
// ranking: area under the interpolated precision-recall curve. A set without
// positives scores 100 by convention.
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("average_precision: bad inputs");
  const int total_pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0) return 100.0;

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });

  // precision at each positive hit, then interpolate with the running max
  std::vector<double> prec;
  int tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[static_cast<std::size_t>(order[k])]) {
      ++tp;
      prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
  }
  double running = 0.0, ap = 0.0;
  for (auto it = prec.rbegin(); it != prec.rend(); ++it) {
    running = std::max(running, *it);
    ap += running;
  }
  return 100.0 * ap / total_pos;
}

// Handedness AP: per-hand average precision, averaged over the two hands.
inline double handedness_ap(const std::vector<double>& left_scores,
                            const std::vector<std::uint8_t>& left_labels,
                            const std::vector<double>& right_scores,
                            const std::vector<std::uint8_t>& right_labels) {
  return 0.5 * (average_precision(left_scores, left_labels) +
                average_precision(right_scores, right_labels));
}

// Mean IoU over the classes present in the groundtruth map.
inline double miou(const PartLabelMap& pred, const PartLabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("miou: shape mismatch");
  const int C = 1 + static_cast<int>(std::max(*std::max_element(pred.labels.begin(), pred.labels.end()),
                                              *std::max_element(gt.labels.begin(), gt.labels.end())));
  std::vector<long long> inter(static_cast<std::size_t>(C), 0), pc(static_cast<std::size_t>(C), 0),
      gc(static_cast<std::size_t>(C), 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const auto p = pred.labels[i], g = gt.labels[i];
    ++pc[p];
    ++gc[g];
    if (p == g) ++inter[p];
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < C; ++c) {
    if (gc[static_cast<std::size_t>(c)] == 0) continue;
    ++present;
    const double uni = static_cast<double>(pc[static_cast<std::size_t>(c)] +
                                           gc[static_cast<std::size_t>(c)] -
                                           inter[static_cast<std::size_t>(c)]);
    sum += uni > 0 ? inter[static_cast<std::size_t>(c)] / uni : 0.0;
  }
  return present > 0 ? sum / present : 0.0;
}

// IoU of the two full-hand coverage masks; the occlusion-severity proxy.
// Masks come from rendering each hand separately, so overlap is possible.
inline double interaction_iou(const std::vector<std::uint8_t>& left_mask,
                              const std::vector<std::uint8_t>& right_mask) {
  if (left_mask.size() != right_mask.size())
    throw std::invalid_argument("interaction_iou: mask size mismatch");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < left_mask.size(); ++i) {
    const bool l = left_mask[i] != 0, r = right_mask[i] != 0;
    inter += l && r;
    uni += l || r;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

// Mean absolute difference between left bone lengths and the corresponding
// right bone lengths of the prediction.
inline double bone_asymmetry(const Pose3D& pred, const KinematicTree& tree) {
  const std::size_t half = tree.edges.size() / 2;
  double sum = 0.0;
  int count = 0;
  for (std::size_t e = 0; e < half; ++e) {
    const auto& [li, lj] = tree.edges[e];
    const auto& [ri, rj] = tree.edges[e + half];
    if (!pred.valid[static_cast<std::size_t>(li)] || !pred.valid[static_cast<std::size_t>(lj)] ||
        !pred.valid[static_cast<std::size_t>(ri)] || !pred.valid[static_cast<std::size_t>(rj)])
      continue;
    const double ll = detail::dist3(pred.joints[static_cast<std::size_t>(li)],
                                    pred.joints[static_cast<std::size_t>(lj)]);
    const double rl = detail::dist3(pred.joints[static_cast<std::size_t>(ri)],
                                    pred.joints[static_cast<std::size_t>(rj)]);
    sum += std::abs(ll - rl);
    ++count;
  }
  return count > 0 ? sum / count : 0.0;
}

// MPJPE distribution per bin of a driving quantity.
struct BinRow {
  std::string label;
  double lo = 0.0, hi = 0.0;
  int count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
};

struct BinnedReport {
  std::vector<BinRow> by_interaction_iou;  // single-hand row first, then IoU bins
  std::vector<BinRow> by_miou;
};

namespace detail {
inline void finalize(BinRow& row, const std::vector<double>& vals) {
  row.count = static_cast<int>(vals.size());
  if (vals.empty()) return;
  row.mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  double var = 0.0;
  for (double v : vals) var += (v - row.mean) * (v - row.mean);
  row.stddev = std::sqrt(var / vals.size());
}

inline const std::vector<std::pair<double, double>>& five_bins() {
  static const std::vector<std::pair<double, double>> bins{
      {0.0, 0.2}, {0.2, 0.4}, {0.4, 0.6}, {0.6, 0.8}, {0.8, 1.0}};
  return bins;
}
}  // namespace detail

// Half-open bins [lo, hi), with the last bin closed at 1.0.
inline int bin_index(double v) {
  const auto& bins = detail::five_bins();
  for (std::size_t i = 0; i < bins.size(); ++i)
    if (v >= bins[i].first && (v < bins[i].second || (i + 1 == bins.size() && v <= 1.0)))
      return static_cast<int>(i);
  return -1;
}

inline BinnedReport binned_report(const std::vector<EvalRecord>& records) {
  BinnedReport rep;
  const auto& bins = detail::five_bins();

  std::vector<std::vector<double>> iou_vals(bins.size() + 1);
  std::vector<std::vector<double>> miou_vals(bins.size());
  for (const auto& r : records) {
    if (!r.mpjpe_mm) continue;
    if (!r.interacting()) {
      iou_vals[0].push_back(*r.mpjpe_mm);
    } else {
      const int b = bin_index(r.interaction_iou);
      if (b >= 0) iou_vals[static_cast<std::size_t>(b) + 1].push_back(*r.mpjpe_mm);
    }
    if (r.miou) {
      const int b = bin_index(*r.miou);
      if (b >= 0) miou_vals[static_cast<std::size_t>(b)].push_back(*r.mpjpe_mm);
    }
  }

  BinRow sh;
  sh.label = "SH";
  detail::finalize(sh, iou_vals[0]);
  rep.by_interaction_iou.push_back(sh);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    BinRow row;
    row.lo = bins[i].first;
    row.hi = bins[i].second;
    row.label = "IoU[" + std::to_string(row.lo).substr(0, 3) + "," + std::to_string(row.hi).substr(0, 3) +
                (i + 1 == bins.size() ? "]" : ")");
    detail::finalize(row, iou_vals[i + 1]);
    rep.by_interaction_iou.push_back(row);

    BinRow mrow;
    mrow.lo = bins[i].first;
    mrow.hi = bins[i].second;
    mrow.label = "mIoU[" + std::to_string(mrow.lo).substr(0, 3) + "," +
                 std::to_string(mrow.hi).substr(0, 3) + (i + 1 == bins.size() ? "]" : ")");
    detail::finalize(mrow, miou_vals[i]);
    rep.by_miou.push_back(mrow);
  }
  return rep;
}

}  // namespace handpose::metrics
