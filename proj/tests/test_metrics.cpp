#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <random>
#include <sstream>

#include "eanet/gradcheck.hpp"
#include "eanet/metrics.hpp"
#include "eanet/ops.hpp"
#include "support/oracles.hpp"

using namespace eanet;

namespace {

Tensor offset(const Tensor& t, double dx, double dy, double dz) {
  std::vector<double> v = t.to_vector();
  for (std::size_t i = 0; i < v.size(); i += 3) {
    v[i] += dx;
    v[i + 1] += dy;
    v[i + 2] += dz;
  }
  return Tensor(t.shape(), v);
}

}  // namespace

TEST_CASE("mpjpe") {
  const auto& tmpl = hand::default_template();
  const Tensor gt = tmpl.rest_joints;
  CHECK(metrics::mpjpe(gt, gt) == 0.0);
  CHECK(std::abs(metrics::mpjpe(ops::scale(gt, 2.0), gt)) <= 1e-12);

  // Move one fingertip 1 mm on a sphere around its parent: bone lengths and
  // therefore the scale alignment stay unchanged.
  const auto bones = tmpl.bones();
  const auto [tip, parent] = bones.back();
  std::vector<double> v = gt.to_vector();
  oracle::Point d{v[tip * 3] - v[parent * 3], v[tip * 3 + 1] - v[parent * 3 + 1],
                  v[tip * 3 + 2] - v[parent * 3 + 2]};
  const double len = oracle::norm(d);
  const double angle = 2.0 * std::asin(0.0005 / len);
  // Rotate d about an axis perpendicular to it.
  oracle::Point axis{d[1], -d[0], 0.0};
  const double an = oracle::norm(axis);
  for (auto& a : axis) a /= an;
  const double c = std::cos(angle), s = std::sin(angle);
  const oracle::Point cross{axis[1] * d[2] - axis[2] * d[1], axis[2] * d[0] - axis[0] * d[2],
                            axis[0] * d[1] - axis[1] * d[0]};
  for (int k = 0; k < 3; ++k) v[tip * 3 + k] = v[parent * 3 + k] + c * d[k] + s * cross[k];
  const Tensor moved(gt.shape(), v);
  CHECK(metrics::mpjpe(moved, gt) == doctest::Approx(1.0 / 21.0).epsilon(1e-9));

  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto p = oracle::random_cloud(rng, 21, 0.04);
    const auto g = oracle::random_cloud(rng, 21, 0.04);
    const Tensor pt = oracle::tensor(p), gtt = oracle::tensor(g);
    const double m = metrics::mpjpe(pt, gtt);
    CHECK(std::abs(m - oracle::mpjpe(p, g, 0, bones)) <= 1e-12);
    CHECK(std::abs(metrics::mpjpe(offset(pt, 0.1, -0.2, 0.3), offset(gtt, -1, 2, 0.5)) - m) <= 1e-9);
    CHECK(std::abs(metrics::mpjpe(ops::scale(pt, 3.0), gtt) - m) <= 1e-9);
  }
}

TEST_CASE("mpvpe") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto pv = oracle::random_cloud(rng, 64, 0.05);
    const auto gv = oracle::random_cloud(rng, 64, 0.05);
    const auto pj = oracle::random_cloud(rng, 21, 0.04);
    const auto gj = oracle::random_cloud(rng, 21, 0.04);
    const Tensor pvt = oracle::tensor(pv), gvt = oracle::tensor(gv);
    const Tensor pjt = oracle::tensor(pj), gjt = oracle::tensor(gj);
    CHECK(std::abs(metrics::mpvpe_scale_aligned(pvt, gvt, pjt, gjt) - oracle::mpvpe(pv, gv, pj[0], gj[0])) <=
          1e-12);
    CHECK(metrics::mpvpe_scale_aligned(gvt, gvt, gjt, gjt) == 0.0);
    CHECK(std::abs(metrics::mpvpe_scale_aligned(offset(gvt, 0.2, 0.1, -0.3), gvt, offset(gjt, 0.2, 0.1, -0.3),
                                                gjt)) <= 1e-9);
  }
}

TEST_CASE("mrrpe") {
  const Tensor a = Tensor::vector({0.1, 0.2, 0.3});
  CHECK(metrics::mrrpe(a, a) == 0.0);
  CHECK(metrics::mrrpe(Tensor::vector({0.003, 0.004, 0.0}), Tensor::vector({0, 0, 0})) ==
        doctest::Approx(5.0).epsilon(1e-12));
  const Tensor b = Tensor::vector({-0.05, 0.01, 0.02});
  CHECK(metrics::mrrpe(ops::scale(a, -1.0), ops::scale(b, -1.0)) == metrics::mrrpe(a, b));
  CHECK_THROWS(metrics::mrrpe(Tensor::vector({1, 2}), Tensor::vector({1, 2})));
}

TEST_CASE("pose difference") {
  std::mt19937_64 rng(3);
  const auto limits = hand::PoseLimits::defaults();
  for (int t = 0; t < 20; ++t) {
    const auto l = hand::sample_pose(rng, limits);
    const auto r = hand::sample_pose(rng, limits);
    CHECK(metrics::pose_difference(l, hand::mirror_pose(l)) <= 1e-12);
    auto rot = r;
    for (int k = 0; k < 3; ++k) rot.theta[k] = l.theta[k] * 0.7 + 0.3;
    CHECK(metrics::pose_difference(r, rot) == doctest::Approx(metrics::pose_difference(r, r)));
    CHECK(std::abs(metrics::pose_difference(l, r) - oracle::pose_difference(l, r)) <= 1e-12);
  }
}

TEST_CASE("token homogeneity") {
  std::mt19937_64 rng(4);
  const Tensor a = oracle::tensor(oracle::random_cloud(rng, 30, 1.0));
  const auto same = metrics::token_homogeneity(a, a);
  CHECK(same.ratio == doctest::Approx(1.0).epsilon(1e-12));

  const auto ca = oracle::random_cloud(rng, 40, 0.3);
  auto cb = oracle::random_cloud(rng, 40, 0.3);
  for (auto& p : cb) p[0] += 10.0;
  const auto sep = metrics::token_homogeneity(oracle::tensor(ca), oracle::tensor(cb));
  CHECK(sep.ratio > 10.0);
  CHECK(sep.inter == doctest::Approx(10.0).epsilon(0.05));

  auto perm = ca;
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto p = metrics::token_homogeneity(oracle::tensor(perm), oracle::tensor(cb));
  CHECK(p.ratio == doctest::Approx(sep.ratio).epsilon(1e-12));
  CHECK(p.intra_a == doctest::Approx(sep.intra_a).epsilon(1e-12));
}

TEST_CASE("report aggregation") {
  metrics::ReportBuilder b;
  b.add(false, 10.0, 12.0);
  b.add(true, 20.0, 22.0, 30.0);
  b.add(true, 30.0, 26.0, 40.0);
  const auto r = b.finish();
  CHECK(r.n_single == 1);
  CHECK(r.n_two == 2);
  CHECK(r.mpjpe_two == doctest::Approx(25.0));
  CHECK(r.mpjpe_all == doctest::Approx(metrics::weighted_all(10.0, 1, 25.0, 2)));
  CHECK(r.mpjpe_all == doctest::Approx(20.0));
  CHECK(r.mrrpe == doctest::Approx(35.0));
  std::ostringstream csv;
  metrics::write_report_csv(csv, r);
  CHECK(csv.str().find("mpjpe") != std::string::npos);
}

TEST_CASE("grad_check") {
  const Tensor x = Tensor::vector({1.0, 2.0}, true);
  const auto r = gradcheck::grad_check([&] { return ops::sum(ops::mul(x, x)); }, {x});
  CHECK(r.max_rel_error < 1e-9);
  CHECK(r.probes == 2);
  CHECK(r.max_abs_grad == doctest::Approx(4.0));

  const Tensor y = Tensor::vector({0.5, -0.5}, true);
  const auto k = gradcheck::grad_check([&] { return ops::sum(ops::scale(y, 0.0)); }, {y});
  CHECK(k.max_rel_error == 0.0);
  CHECK(k.max_abs_grad == 0.0);
}

TEST_CASE("gradient suite flags a wrong backward rule") {
  gradcheck::SuiteOptions opts;
  opts.corrupt_fixture = true;
  bool found = false;
  for (const auto& row : gradcheck::run_suite(opts)) {
    if (!row.pass) found = true;
  }
  CHECK(found);
}
