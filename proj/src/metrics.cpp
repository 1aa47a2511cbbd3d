#include "eanet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include <json.hpp>

namespace eanet::metrics {

namespace {

constexpr double kMillimeters = 1000.0;

void check_points(const Tensor& a, const Tensor& b, const char* where) {
  if (a.rank() != 2 || a.dim(1) != 3 || a.shape() != b.shape()) {
    throw DimensionError(std::string(where) + ": expected matching [n, 3] inputs, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

double dist(const double* a, const double* b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double bone_sum(std::span<const double> p, const BoneList& bones) {
  double total = 0.0;
  for (const auto& [child, parent] : bones) total += dist(&p[child * 3], &p[parent * 3]);
  return total;
}

}  // namespace

double mpjpe(const Tensor& pred, const Tensor& gt, std::size_t root, const BoneList& bones) {
  check_points(pred, gt, "mpjpe");
  const std::size_t n = pred.dim(0);
  if (root >= n) throw DimensionError("mpjpe: root index out of range");
  for (const auto& [c, p] : bones) {
    if (c >= n || p >= n) throw DimensionError("mpjpe: bone index out of range");
  }
  auto pp = pred.data();
  auto gp = gt.data();
  const double gt_len = bone_sum(gp, bones);
  const double pred_len = bone_sum(pp, bones);
  if (!(gt_len > 0.0)) throw MetricError("mpjpe: ground-truth skeleton has zero bone length");
  if (!(pred_len > 0.0)) throw MetricError("mpjpe: predicted skeleton has zero bone length");
  const double s = gt_len / pred_len;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double a[3];
    double b[3];
    for (int k = 0; k < 3; ++k) {
      a[k] = (pp[j * 3 + k] - pp[root * 3 + k]) * s;
      b[k] = gp[j * 3 + k] - gp[root * 3 + k];
    }
    total += dist(a, b);
  }
  return total / static_cast<double>(n) * kMillimeters;
}

double mpjpe(const Tensor& pred, const Tensor& gt, std::size_t root) {
  return mpjpe(pred, gt, root, hand::default_template().bones());
}

double mpvpe_scale_aligned(const Tensor& pred_vertices, const Tensor& gt_vertices,
                           const Tensor& pred_joints, const Tensor& gt_joints,
                           std::size_t root) {
  check_points(pred_vertices, gt_vertices, "mpvpe");
  check_points(pred_joints, gt_joints, "mpvpe");
  if (root >= pred_joints.dim(0)) throw DimensionError("mpvpe: root index out of range");
  const std::size_t n = pred_vertices.dim(0);
  auto pv = pred_vertices.data();
  auto gv = gt_vertices.data();
  const double* pr = &pred_joints.data()[root * 3];
  const double* gr = &gt_joints.data()[root * 3];
  double pred_sq = 0.0;
  double gt_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      const double a = pv[i * 3 + k] - pr[k];
      const double b = gv[i * 3 + k] - gr[k];
      pred_sq += a * a;
      gt_sq += b * b;
    }
  }
  if (!(pred_sq > 0.0) || !(gt_sq > 0.0)) throw MetricError("mpvpe: zero-scale mesh");
  const double s = std::sqrt(gt_sq / pred_sq);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a[3];
    double b[3];
    for (int k = 0; k < 3; ++k) {
      a[k] = (pv[i * 3 + k] - pr[k]) * s;
      b[k] = gv[i * 3 + k] - gr[k];
    }
    total += dist(a, b);
  }
  return total / static_cast<double>(n) * kMillimeters;
}

double mrrpe(const Tensor& pred_rel, const Tensor& gt_rel) {
  if (pred_rel.numel() != 3 || gt_rel.numel() != 3) {
    throw DimensionError("mrrpe: expected two 3-vectors");
  }
  return dist(pred_rel.data().data(), gt_rel.data().data()) * kMillimeters;
}

double pose_difference(const hand::HandPose& left, const hand::HandPose& right) {
  NoGradGuard guard;
  hand::HandPose a = hand::mirror_pose(left);
  hand::HandPose b = right;
  for (int k = 0; k < 3; ++k) {
    a.theta[k] = 0.0;
    b.theta[k] = 0.0;
  }
  a.beta.fill(0.0);
  b.beta.fill(0.0);
  const auto& tmpl = hand::default_template();
  Tensor ja = hand::forward_kinematics(a, tmpl);
  Tensor jb = hand::forward_kinematics(b, tmpl);
  auto pa = ja.data();
  auto pb = jb.data();
  const std::size_t n = ja.dim(0);
  const std::size_t r = hand::kRootJoint;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double x[3];
    double y[3];
    for (int k = 0; k < 3; ++k) {
      x[k] = pa[j * 3 + k] - pa[r * 3 + k];
      y[k] = pb[j * 3 + k] - pb[r * 3 + k];
    }
    total += dist(x, y);
  }
  return total / static_cast<double>(n) * kMillimeters;
}

TokenStats token_homogeneity(const Tensor& set_a, const Tensor& set_b) {
  if (set_a.rank() != 2 || set_b.rank() != 2 || set_a.dim(1) != set_b.dim(1)) {
    throw DimensionError("token_homogeneity: expected [n, c] and [m, c], got " +
                         shape_str(set_a.shape()) + " and " + shape_str(set_b.shape()));
  }
  if (set_a.dim(0) < 2 || set_b.dim(0) < 2) {
    throw MetricError("token_homogeneity: each set needs at least two tokens");
  }
  const std::size_t c = set_a.dim(1);
  auto mean_dist = [c](const Tensor& x, const Tensor& y) {
    auto px = x.data();
    auto py = y.data();
    double total = 0.0;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      for (std::size_t j = 0; j < y.dim(0); ++j) {
        double sq = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          const double d = px[i * c + k] - py[j * c + k];
          sq += d * d;
        }
        total += std::sqrt(sq);
      }
    }
    return total / static_cast<double>(x.dim(0) * y.dim(0));
  };
  TokenStats s;
  s.intra_a = mean_dist(set_a, set_a);
  s.intra_b = mean_dist(set_b, set_b);
  s.inter = mean_dist(set_a, set_b);
  const double intra = (s.intra_a + s.intra_b) / 2.0;
  if (!(intra > 0.0)) throw MetricError("token_homogeneity: both sets are single points");
  s.ratio = s.inter / intra;
  return s;
}

void ReportBuilder::add(bool two_hands, double mpjpe_mm, double mpvpe_mm, double mrrpe_mm) {
  const int k = two_hands ? 1 : 0;
  jpe_sum_[k] += mpjpe_mm;
  vpe_sum_[k] += mpvpe_mm;
  if (two_hands) rrpe_sum_ += mrrpe_mm;
  ++count_[k];
}

double weighted_all(double single, std::size_t n_single, double two, std::size_t n_two) {
  const std::size_t n = n_single + n_two;
  if (n == 0) return 0.0;
  return (static_cast<double>(n_single) * single + static_cast<double>(n_two) * two) /
         static_cast<double>(n);
}

MetricReport ReportBuilder::finish() const {
  MetricReport r;
  r.n_single = count_[0];
  r.n_two = count_[1];
  auto mean = [](double sum, std::size_t n) { return n ? sum / static_cast<double>(n) : 0.0; };
  r.mpjpe_single = mean(jpe_sum_[0], count_[0]);
  r.mpjpe_two = mean(jpe_sum_[1], count_[1]);
  r.mpvpe_single = mean(vpe_sum_[0], count_[0]);
  r.mpvpe_two = mean(vpe_sum_[1], count_[1]);
  r.mpjpe_all = weighted_all(r.mpjpe_single, r.n_single, r.mpjpe_two, r.n_two);
  r.mpvpe_all = weighted_all(r.mpvpe_single, r.n_single, r.mpvpe_two, r.n_two);
  r.mrrpe = mean(rrpe_sum_, count_[1]);
  return r;
}

void write_report_csv(std::ostream& out, const MetricReport& r) {
  out << "n_single,n_two,mpjpe_single,mpjpe_two,mpjpe_all,mpvpe_single,mpvpe_two,"
         "mpvpe_all,mrrpe\n";
  out << std::setprecision(17) << r.n_single << ',' << r.n_two << ',' << r.mpjpe_single << ','
      << r.mpjpe_two << ',' << r.mpjpe_all << ',' << r.mpvpe_single << ',' << r.mpvpe_two
      << ',' << r.mpvpe_all << ',' << r.mrrpe << '\n';
}

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["n_single"] = r.n_single;
  j["n_two"] = r.n_two;
  j["mpjpe"] = {{"single", r.mpjpe_single}, {"two", r.mpjpe_two}, {"all", r.mpjpe_all}};
  j["mpvpe"] = {{"single", r.mpvpe_single}, {"two", r.mpvpe_two}, {"all", r.mpvpe_all}};
  j["mrrpe"] = r.mrrpe;
  j["unit"] = "mm";
  return j.dump(2);
}

}  // namespace eanet::metrics
