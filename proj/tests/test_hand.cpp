#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include "eanet/hand_model.hpp"
#include "eanet/ops.hpp"

using namespace eanet;
using namespace eanet::hand;

namespace {

bool bitwise(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("template invariants") {
  const auto& t = default_template();
  CHECK(t.rest_joints.shape() == Shape{kJoints, 3});
  CHECK(t.vertex_count() == kVertices);
  for (std::size_t v = 0; v < kVertices; ++v) {
    double s = 0.0;
    for (std::size_t b = 0; b < kBones; ++b) {
      CHECK(t.skin_weights.at({v, b}) >= 0.0);
      s += t.skin_weights.at({v, b});
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  for (std::size_t j = 0; j < kJoints; ++j) {
    double s = 0.0;
    for (std::size_t v = 0; v < kVertices; ++v) s += t.joint_regressor.at({j, v});
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK(t.parents[0] == -1);
  for (std::size_t j = 1; j < kJoints; ++j) {
    CHECK(t.parents[j] >= 0);
    CHECK(static_cast<std::size_t>(t.parents[j]) < j);
  }
  CHECK(t.bones().size() == kJoints - 1);
  for (std::size_t k = 0; k < 3; ++k) CHECK(t.rest_joints.at({0, k}) == 0.0);
}

TEST_CASE("identity pose reproduces the template") {
  const auto& t = default_template();
  const HandPose zero;
  CHECK(bitwise(forward_kinematics(zero, t), t.rest_joints));
  const auto mesh = skin_mesh(zero, t);
  CHECK(max_diff(mesh.vertices, t.vertices) <= 1e-12);
}

TEST_CASE("global rotation by pi about z") {
  const auto& t = default_template();
  HandPose p;
  p.theta[2] = std::numbers::pi;
  const Tensor j = forward_kinematics(p, t);
  for (std::size_t i = 0; i < kJoints; ++i) {
    CHECK(std::abs(j.at({i, 0}) + t.rest_joints.at({i, 0})) <= 1e-10);
    CHECK(std::abs(j.at({i, 1}) + t.rest_joints.at({i, 1})) <= 1e-10);
    CHECK(std::abs(j.at({i, 2}) - t.rest_joints.at({i, 2})) <= 1e-10);
  }
}

TEST_CASE("wrist-only skinning moves rigidly") {
  HandTemplate t = build_template();
  std::vector<double> w(kVertices * kBones, 0.0);
  for (std::size_t v = 0; v < kVertices; ++v) w[v * kBones] = 1.0;
  t.skin_weights = Tensor({kVertices, kBones}, w);
  std::mt19937_64 rng(3);
  HandPose p = sample_pose(rng, PoseLimits::defaults());
  p.beta = {};
  const auto mesh = skin_mesh(p, t);
  const auto r = ops::rodrigues(Tensor({1, 3}, {p.theta[0], p.theta[1], p.theta[2]}));
  double err = 0.0;
  for (std::size_t v = 0; v < kVertices; ++v) {
    for (std::size_t a = 0; a < 3; ++a) {
      double x = 0.0;
      for (std::size_t b = 0; b < 3; ++b) x += r[a * 3 + b] * t.vertices.at({v, b});
      err = std::max(err, std::abs(x - mesh.vertices.at({v, a})));
    }
  }
  CHECK(err <= 1e-12);
}

TEST_CASE("joint regressor") {
  const auto& t = default_template();
  CHECK(max_diff(regress_joints(t.vertices, t), t.rest_joints) <= 1e-12);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<double> v(kVertices * 3);
  for (auto& x : v) x = g(rng);
  const Tensor verts({kVertices, 3}, v);
  const Tensor got = regress_joints(verts, t);
  std::vector<double> shifted = v;
  for (std::size_t i = 0; i < kVertices; ++i) shifted[i * 3 + 1] += 0.3;
  const Tensor moved = regress_joints(Tensor({kVertices, 3}, shifted), t);
  for (std::size_t j = 0; j < kJoints; ++j) {
    for (std::size_t a = 0; a < 3; ++a) {
      double s = 0.0;
      for (std::size_t k = 0; k < kVertices; ++k) s += t.joint_regressor.at({j, k}) * v[k * 3 + a];
      CHECK(std::abs(got.at({j, a}) - s) <= 1e-12);
      CHECK(std::abs(moved.at({j, a}) - got.at({j, a}) - (a == 1 ? 0.3 : 0.0)) <= 1e-12);
    }
  }
}

TEST_CASE("flip is an involution") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto p = sample_pose(rng, PoseLimits::defaults());
    const auto m = pose_hand(p, Handedness::left, default_template());
    CHECK(m.side == Handedness::left);
    const auto f = flip_hand(m);
    CHECK(f.side == Handedness::right);
    const auto ff = flip_hand(f);
    CHECK(bitwise(ff.vertices, m.vertices));
    CHECK(bitwise(ff.joints, m.joints));
    CHECK(ff.side == m.side);
  }
}

TEST_CASE("left hand mirrors the right model") {
  std::mt19937_64 rng(6);
  const auto p = sample_pose(rng, PoseLimits::defaults());
  const auto left = pose_hand(p, Handedness::left, default_template());
  const auto right = pose_hand(mirror_pose(p), Handedness::right, default_template());
  CHECK(max_diff(left.vertices, flip_x(right.vertices)) <= 1e-12);
}

TEST_CASE("pose sampling") {
  std::mt19937_64 a(9), b(9);
  const auto limits = PoseLimits::defaults();
  CHECK(sample_pose(a, limits) == sample_pose(b, limits));
  std::mt19937_64 c(10);
  CHECK(sample_pose(c, PoseLimits::zero()) == HandPose{});
  const auto s = sample_pose(c, limits);
  for (std::size_t i = 0; i < kPoseDim; ++i) {
    CHECK(s.theta[i] >= limits.theta_lo[i]);
    CHECK(s.theta[i] <= limits.theta_hi[i]);
  }
}

TEST_CASE("obj output") {
  std::mt19937_64 rng(11);
  const auto& t = default_template();
  const auto m = pose_hand(sample_pose(rng, PoseLimits::defaults()), Handedness::left, t);
  std::ostringstream out;
  write_obj(out, m, t);
  std::istringstream in(out.str());
  std::string tag;
  std::size_t v = 0, f = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "v") ++v;
    if (tag == "f") {
      std::size_t i, j, k;
      ls >> i >> j >> k;
      CHECK(i >= 1);
      CHECK(std::max({i, j, k}) <= kVertices);
      ++f;
    }
  }
  CHECK(v == kVertices);
  CHECK(f == t.faces.size());
}
