#pragma once

#include <cstddef>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eanet/hand_model.hpp"
#include "eanet/tensor.hpp"

namespace eanet::metrics {

/// Degenerate input (zero-length skeleton, zero-scale mesh, singleton set).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

using BoneList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Root-aligned, bone-length-scaled mean joint error in millimeters.
double mpjpe(const Tensor& pred, const Tensor& gt, std::size_t root, const BoneList& bones);
/// Uses the kinematic tree of the default hand template.
double mpjpe(const Tensor& pred, const Tensor& gt, std::size_t root = hand::kRootJoint);

/// Mean vertex error (mm) after wrist alignment and RMS scale alignment.
double mpvpe_scale_aligned(const Tensor& pred_vertices, const Tensor& gt_vertices,
                           const Tensor& pred_joints, const Tensor& gt_joints,
                           std::size_t root = hand::kRootJoint);

/// Distance (mm) between predicted and true right-minus-left root vectors.
double mrrpe(const Tensor& pred_rel, const Tensor& gt_rel);

/// Finger-pose asymmetry (mm): the left pose is mirrored into the right-hand
/// convention, global rotations and shapes are zeroed, and wrist-relative
/// skeleton joints are compared.
double pose_difference(const hand::HandPose& left, const hand::HandPose& right);

struct TokenStats {
  double intra_a = 0.0;
  double intra_b = 0.0;
  double inter = 0.0;
  double ratio = 0.0;  // inter / mean(intra_a, intra_b)
};

/// Rows of set_a [n, c] and set_b [m, c] as point clouds. Intra-set means run
/// over all ordered pairs including i == j, so identical sets give ratio 1.
TokenStats token_homogeneity(const Tensor& set_a, const Tensor& set_b);

struct MetricReport {
  double mpjpe_single = 0.0, mpjpe_two = 0.0, mpjpe_all = 0.0;
  double mpvpe_single = 0.0, mpvpe_two = 0.0, mpvpe_all = 0.0;
  double mrrpe = 0.0;
  std::size_t n_single = 0, n_two = 0;
};

/// Per-sample accumulation into the Single / Two / All split.
class ReportBuilder {
 public:
  /// Per-sample values are means over the present hands. MRRPE is taken only
  /// from two-hand samples.
  void add(bool two_hands, double mpjpe_mm, double mpvpe_mm, double mrrpe_mm = 0.0);
  MetricReport finish() const;

 private:
  double jpe_sum_[2] = {0.0, 0.0};
  double vpe_sum_[2] = {0.0, 0.0};
  double rrpe_sum_ = 0.0;
  std::size_t count_[2] = {0, 0};
};

/// All = (n_single * single + n_two * two) / (n_single + n_two).
double weighted_all(double single, std::size_t n_single, double two, std::size_t n_two);

void write_report_csv(std::ostream& out, const MetricReport& r);
std::string report_json(const MetricReport& r);

}  // namespace eanet::metrics
