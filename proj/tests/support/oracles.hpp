#pragma once

// Straight-line reference implementations used as independent oracles by the
// unit tests and the acceptance binary. They work on plain point lists and
// avoid the library's metric helpers.

#include <array>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "eanet/hand_model.hpp"
#include "eanet/tensor.hpp"

namespace oracle {

using Point = std::array<double, 3>;
using Cloud = std::vector<Point>;

inline Cloud cloud(const eanet::Tensor& t) {
  Cloud out(t.dim(0));
  const auto d = t.to_vector();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {d[3 * i], d[3 * i + 1], d[3 * i + 2]};
  return out;
}

inline eanet::Tensor tensor(const Cloud& c) {
  std::vector<double> d;
  for (const auto& p : c) d.insert(d.end(), p.begin(), p.end());
  return eanet::Tensor({c.size(), 3}, d);
}

inline double norm(const Point& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

inline Point minus(const Point& a, const Point& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }

inline double mpjpe(const Cloud& pred, const Cloud& gt, std::size_t root,
                    const std::vector<std::pair<std::size_t, std::size_t>>& bones) {
  double lp = 0.0, lg = 0.0;
  for (auto [c, p] : bones) {
    lp += norm(minus(pred[c], pred[p]));
    lg += norm(minus(gt[c], gt[p]));
  }
  const double s = lg / lp;
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    Point a = minus(pred[j], pred[root]);
    for (auto& x : a) x *= s;
    sum += norm(minus(a, minus(gt[j], gt[root])));
  }
  return 1000.0 * sum / static_cast<double>(pred.size());
}

inline double mpvpe(const Cloud& pv, const Cloud& gv, const Point& pr, const Point& gr) {
  double sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double a = norm(minus(pv[i], pr));
    const double b = norm(minus(gv[i], gr));
    sp += a * a;
    sg += b * b;
  }
  const double s = std::sqrt(sg / sp);
  double sum = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    Point a = minus(pv[i], pr);
    for (auto& x : a) x *= s;
    sum += norm(minus(a, minus(gv[i], gr)));
  }
  return 1000.0 * sum / static_cast<double>(pv.size());
}

inline double mrrpe(const Point& pred, const Point& gt) { return 1000.0 * norm(minus(pred, gt)); }

/// Mirror the left pose (negate the y and z axis-angle components), zero the
/// global rotations and shapes, run kinematics, compare wrist-relative joints.
inline double pose_difference(const eanet::hand::HandPose& left,
                              const eanet::hand::HandPose& right) {
  eanet::NoGradGuard guard;
  std::vector<double> ta(left.theta.begin(), left.theta.end());
  std::vector<double> tb(right.theta.begin(), right.theta.end());
  for (std::size_t b = 0; b < eanet::hand::kBones; ++b) {
    ta[3 * b + 1] = -ta[3 * b + 1];
    ta[3 * b + 2] = -ta[3 * b + 2];
  }
  for (int k = 0; k < 3; ++k) ta[k] = tb[k] = 0.0;
  const eanet::Tensor zero_beta = eanet::Tensor::zeros({eanet::hand::kShapeDim});
  const auto& tmpl = eanet::hand::default_template();
  const Cloud ja = cloud(eanet::hand::forward_kinematics(eanet::Tensor::vector(ta), zero_beta, tmpl));
  const Cloud jb = cloud(eanet::hand::forward_kinematics(eanet::Tensor::vector(tb), zero_beta, tmpl));
  double sum = 0.0;
  for (std::size_t j = 0; j < ja.size(); ++j) {
    sum += norm(minus(minus(ja[j], ja[0]), minus(jb[j], jb[0])));
  }
  return 1000.0 * sum / static_cast<double>(ja.size());
}

inline Cloud random_cloud(std::mt19937_64& rng, std::size_t n, double spread) {
  std::normal_distribution<double> g(0.0, spread);
  Cloud c(n);
  for (auto& p : c) p = {g(rng), g(rng), g(rng)};
  return c;
}

}  // namespace oracle
