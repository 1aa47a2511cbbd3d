#include "eanet/hand_model.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "eanet/ops.hpp"

namespace eanet::hand {

namespace {

using Vec3 = std::array<double, 3>;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 mul(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return mul(a, 1.0 / n);
}

struct FingerSpec {
  Vec3 base;
  Vec3 direction;
  std::array<double, 3> lengths;
  double radius;
};

// Thumb, index, middle, ring, pinky of a right hand lying in the z = 0
// plane, fingers along +y.
const std::array<FingerSpec, 5> kFingers = {{
    {{0.022, 0.018, -0.005}, {0.75, 0.66, -0.1}, {0.038, 0.032, 0.026}, 0.0095},
    {{0.024, 0.085, 0.0}, {0.07, 1.0, 0.0}, {0.042, 0.026, 0.020}, 0.0080},
    {{0.003, 0.090, 0.0}, {0.0, 1.0, 0.0}, {0.046, 0.029, 0.021}, 0.0082},
    {{-0.017, 0.086, 0.0}, {-0.07, 1.0, 0.0}, {0.042, 0.027, 0.020}, 0.0078},
    {{-0.034, 0.076, 0.0}, {-0.16, 1.0, 0.0}, {0.032, 0.021, 0.018}, 0.0068},
}};

constexpr double kWristRadius = 0.03;
constexpr std::size_t kRingSize = 3;
constexpr std::size_t kPalmVertex = kJoints * kRingSize;

std::size_t finger_joint(std::size_t finger, std::size_t k) { return 1 + 4 * finger + k; }
std::size_t finger_bone(std::size_t finger, std::size_t k) { return 1 + 3 * finger + k; }

// Bones grouped by tree depth; every bone's parent sits in an earlier level.
const std::vector<std::vector<std::size_t>>& bone_levels() {
  static const std::vector<std::vector<std::size_t>> levels = [] {
    std::vector<std::vector<std::size_t>> l(4);
    l[0] = {0};
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t f = 0; f < 5; ++f) l[k + 1].push_back(finger_bone(f, k));
    }
    return l;
  }();
  return levels;
}

Tensor shaped(const Tensor& base, const Tensor& beta, const Tensor& dirs,
              std::size_t rows) {
  if (beta.numel() != kShapeDim) {
    throw DimensionError("beta must have " + std::to_string(kShapeDim) +
                         " entries, got " + shape_str(beta.shape()));
  }
  Tensor offsets = ops::matmul(ops::reshape(beta, {1, kShapeDim}), dirs);
  return ops::add(base, ops::reshape(offsets, {rows, 3}));
}

struct BoneTransforms {
  Tensor rotation;     // [16, 3, 3] global rotation per bone
  Tensor translation;  // [16, 3, 1] so that x -> R x + t
  Tensor joints;       // [21, 3] shaped rest joints
};

// Composes local rotations root-to-leaf. Each bone maps rest-space points by
// x -> G x + s with s = G_parent (j - R_local j) + s_parent, which keeps the
// zero pose exact.
BoneTransforms compose(const Tensor& theta, const Tensor& beta,
                       const HandTemplate& tmpl) {
  if (theta.numel() != kPoseDim) {
    throw DimensionError("theta must have " + std::to_string(kPoseDim) +
                         " entries, got " + shape_str(theta.shape()));
  }
  Tensor joints = shaped(tmpl.rest_joints, beta, tmpl.joint_shape_dirs, kJoints);
  Tensor local = ops::rodrigues(ops::reshape(theta, {kBones, 3}));
  Tensor bone_joints = ops::index_select(joints, tmpl.bone_joint);

  std::vector<Tensor> level_rot;
  std::vector<Tensor> level_trans;
  std::vector<std::size_t> order;  // bone id at each stacked row
  for (const auto& level : bone_levels()) {
    Tensor rl = ops::index_select(local, level);
    Tensor jl = ops::reshape(ops::index_select(bone_joints, level), {level.size(), 3, 1});
    Tensor moved = ops::sub(jl, ops::bmm(rl, jl));
    if (order.empty()) {
      level_rot.push_back(rl);
      level_trans.push_back(moved);
    } else {
      std::vector<std::size_t> parent_rows;
      for (auto b : level) {
        const auto parent = static_cast<std::size_t>(tmpl.bone_parent[b]);
        parent_rows.push_back(static_cast<std::size_t>(
            std::find(order.begin(), order.end(), parent) - order.begin()));
      }
      Tensor all_rot = ops::concat(level_rot, 0);
      Tensor all_trans = ops::concat(level_trans, 0);
      Tensor gp = ops::index_select(all_rot, parent_rows);
      Tensor sp = ops::index_select(all_trans, parent_rows);
      level_rot.push_back(ops::bmm(gp, rl));
      level_trans.push_back(ops::add(ops::bmm(gp, moved), sp));
    }
    order.insert(order.end(), level.begin(), level.end());
  }
  std::vector<std::size_t> row_of_bone(kBones);
  for (std::size_t r = 0; r < order.size(); ++r) row_of_bone[order[r]] = r;
  return {ops::index_select(ops::concat(level_rot, 0), row_of_bone),
          ops::index_select(ops::concat(level_trans, 0), row_of_bone), joints};
}

Tensor place_joints(const BoneTransforms& bt, const HandTemplate& tmpl) {
  Tensor g = ops::index_select(bt.rotation, tmpl.joint_frame);
  Tensor s = ops::index_select(bt.translation, tmpl.joint_frame);
  Tensor posed = ops::add(ops::bmm(g, ops::reshape(bt.joints, {kJoints, 3, 1})), s);
  return ops::reshape(posed, {kJoints, 3});
}

// Shape blend directions as per-vertex displacements, one row per mode.
std::vector<double> build_shape_dirs(const std::vector<Vec3>& verts,
                                     const std::vector<Vec3>& joints) {
  const std::size_t nv = verts.size();
  std::vector<double> dirs(kShapeDim * nv * 3, 0.0);
  auto set = [&](std::size_t mode, std::size_t v, const Vec3& d) {
    for (int a = 0; a < 3; ++a) dirs[(mode * nv + v) * 3 + a] = d[a];
  };
  for (std::size_t v = 0; v < nv; ++v) {
    const bool palm = v == kPalmVertex;
    const std::size_t joint = palm ? 0 : v / kRingSize;
    const Vec3 center = palm ? verts[v] : joints[joint];
    const Vec3 offset = sub(verts[v], center);
    set(0, v, mul(verts[v], 0.08));  // overall size about the wrist
    if (!palm) set(6, v, mul(offset, 0.15));  // finger thickness
    if (palm || joint == 0) {
      set(7, v, {0.12 * offset[0], 0.0, 0.0});
      continue;
    }
    const std::size_t finger = (joint - 1) / 4;
    const std::size_t k = (joint - 1) % 4;
    const Vec3 mcp = joints[finger_joint(finger, 0)];
    set(1 + finger, v, mul(sub(joints[joint], mcp), 0.12));  // finger length
    set(7, v, {0.12 * mcp[0], 0.0, 0.0});                     // palm width
    set(8, v, {0.0, 0.10 * mcp[1], 0.0});                     // palm length
    if (finger == 0) {
      const Vec3 j = joints[joint];
      set(9, v, {-0.15 * j[1], 0.15 * j[0], 0.0});  // thumb spread
    }
    (void)k;
  }
  return dirs;
}

}  // namespace

const char* to_string(Handedness side) {
  return side == Handedness::left ? "left" : "right";
}

Tensor HandPose::theta_tensor(bool requires_grad) const {
  return Tensor({kPoseDim}, {theta.begin(), theta.end()}, requires_grad);
}

Tensor HandPose::beta_tensor(bool requires_grad) const {
  return Tensor({kShapeDim}, {beta.begin(), beta.end()}, requires_grad);
}

HandPose HandPose::from_tensors(const Tensor& theta, const Tensor& beta) {
  if (theta.numel() != kPoseDim || beta.numel() != kShapeDim) {
    throw DimensionError("HandPose needs 48 pose and 10 shape values");
  }
  HandPose p;
  std::copy_n(theta.data().begin(), kPoseDim, p.theta.begin());
  std::copy_n(beta.data().begin(), kShapeDim, p.beta.begin());
  return p;
}

std::vector<std::pair<std::size_t, std::size_t>> HandTemplate::bones() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] >= 0) out.emplace_back(j, static_cast<std::size_t>(parents[j]));
  }
  return out;
}

HandTemplate build_template() {
  HandTemplate t;
  std::vector<Vec3> joints(kJoints, Vec3{0, 0, 0});
  std::vector<Vec3> axis(kJoints, Vec3{0, 1, 0});
  std::vector<double> radius(kJoints, kWristRadius);
  t.parents.assign(kJoints, -1);
  t.bone_joint.assign(kBones, 0);
  t.bone_parent.assign(kBones, -1);
  std::vector<int> bone_of_joint(kJoints, -1);
  bone_of_joint[0] = 0;

  for (std::size_t f = 0; f < kFingers.size(); ++f) {
    const auto& spec = kFingers[f];
    const Vec3 dir = normalized(spec.direction);
    Vec3 at = spec.base;
    for (std::size_t k = 0; k < 4; ++k) {
      const std::size_t j = finger_joint(f, k);
      joints[j] = at;
      axis[j] = dir;
      radius[j] = spec.radius * (k == 3 ? 0.7 : 1.0 - 0.1 * static_cast<double>(k));
      t.parents[j] = k == 0 ? 0 : static_cast<int>(j - 1);
      if (k < 3) {
        const std::size_t b = finger_bone(f, k);
        t.bone_joint[b] = j;
        t.bone_parent[b] = k == 0 ? 0 : static_cast<int>(b - 1);
        bone_of_joint[j] = static_cast<int>(b);
        at = add(at, mul(dir, spec.lengths[k]));
      }
    }
  }
  t.joint_frame.assign(kJoints, 0);
  for (std::size_t j = 1; j < kJoints; ++j) {
    t.joint_frame[j] = static_cast<std::size_t>(bone_of_joint[static_cast<std::size_t>(t.parents[j])]);
  }

  // A ring of three vertices around every joint, plus one palm vertex.
  std::vector<Vec3> verts;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const Vec3 u = normalized(cross(axis[j], {0, 0, 1}));
    const Vec3 w = cross(u, axis[j]);
    for (std::size_t r = 0; r < kRingSize; ++r) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(r) / kRingSize;
      verts.push_back(add(joints[j], add(mul(u, radius[j] * std::cos(phi)),
                                         mul(w, radius[j] * std::sin(phi)))));
    }
  }
  verts.push_back({0.0, 0.05, -0.012});
  const std::size_t nv = verts.size();

  std::vector<double> weights(nv * kBones, 0.0);
  std::vector<double> regressor(kJoints * nv, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    if (v == kPalmVertex) {
      weights[v * kBones + 0] = 1.0;
      continue;
    }
    const std::size_t j = v / kRingSize;
    regressor[j * nv + v] = 1.0 / static_cast<double>(kRingSize);
    if (j == 0) {
      weights[v * kBones + 0] = 1.0;
    } else if (bone_of_joint[j] < 0) {  // fingertip rides the last bone
      weights[v * kBones + t.joint_frame[j]] = 1.0;
    } else {
      weights[v * kBones + static_cast<std::size_t>(bone_of_joint[j])] += 0.5;
      weights[v * kBones + t.joint_frame[j]] += 0.5;
    }
  }

  std::vector<double> rest_flat;
  for (const auto& j : joints) rest_flat.insert(rest_flat.end(), j.begin(), j.end());
  std::vector<double> vert_flat;
  for (const auto& v : verts) vert_flat.insert(vert_flat.end(), v.begin(), v.end());
  auto dirs = build_shape_dirs(verts, joints);
  std::vector<double> joint_dirs(kShapeDim * kJoints * 3, 0.0);
  for (std::size_t m = 0; m < kShapeDim; ++m) {
    for (std::size_t j = 0; j < kJoints; ++j) {
      for (std::size_t v = 0; v < nv; ++v) {
        const double r = regressor[j * nv + v];
        if (r == 0.0) continue;
        for (int a = 0; a < 3; ++a) {
          joint_dirs[(m * kJoints + j) * 3 + a] += r * dirs[(m * nv + v) * 3 + a];
        }
      }
    }
  }

  t.rest_joints = Tensor({kJoints, 3}, std::move(rest_flat));
  t.vertices = Tensor({nv, 3}, std::move(vert_flat));
  t.skin_weights = Tensor({nv, kBones}, std::move(weights));
  t.shape_dirs = Tensor({kShapeDim, nv * 3}, std::move(dirs));
  t.joint_shape_dirs = Tensor({kShapeDim, kJoints * 3}, std::move(joint_dirs));
  t.joint_regressor = Tensor({kJoints, nv}, std::move(regressor));

  auto ring = [](std::size_t j, std::size_t r) { return j * kRingSize + r % kRingSize; };
  for (std::size_t f = 0; f < kFingers.size(); ++f) {
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t a = finger_joint(f, k);
      const std::size_t b = a + 1;
      for (std::size_t r = 0; r < kRingSize; ++r) {
        t.faces.push_back({ring(a, r), ring(b, r), ring(b, r + 1)});
        t.faces.push_back({ring(a, r), ring(b, r + 1), ring(a, r + 1)});
      }
    }
    const std::size_t tip = finger_joint(f, 3);
    t.faces.push_back({ring(tip, 0), ring(tip, 1), ring(tip, 2)});
    if (f + 1 < kFingers.size()) {
      t.faces.push_back({kPalmVertex, ring(finger_joint(f, 0), 0),
                         ring(finger_joint(f + 1, 0), 0)});
    }
  }
  for (std::size_t r = 0; r < kRingSize; ++r) {
    t.faces.push_back({ring(0, r), ring(0, r + 1), kPalmVertex});
  }
  return t;
}

const HandTemplate& default_template() {
  static const HandTemplate tmpl = build_template();
  return tmpl;
}

Tensor forward_kinematics(const Tensor& theta, const Tensor& beta,
                          const HandTemplate& tmpl) {
  return place_joints(compose(theta, beta, tmpl), tmpl);
}

Tensor forward_kinematics(const HandPose& pose, const HandTemplate& tmpl) {
  NoGradGuard guard;
  return forward_kinematics(pose.theta_tensor(), pose.beta_tensor(), tmpl);
}

HandMesh skin(const Tensor& theta, const Tensor& beta, const HandTemplate& tmpl) {
  const BoneTransforms bt = compose(theta, beta, tmpl);
  const std::size_t nv = tmpl.vertex_count();
  Tensor affine = ops::concat({ops::reshape(bt.rotation, {kBones, 9}),
                               ops::reshape(bt.translation, {kBones, 3})},
                              1);
  Tensor blended = ops::matmul(tmpl.skin_weights, affine);
  Tensor rot = ops::reshape(ops::slice(blended, 1, 0, 9), {nv, 3, 3});
  Tensor trans = ops::slice(blended, 1, 9, 12);
  Tensor rest = shaped(tmpl.vertices, beta, tmpl.shape_dirs, nv);
  Tensor verts = ops::add(
      ops::reshape(ops::bmm(rot, ops::reshape(rest, {nv, 3, 1})), {nv, 3}), trans);
  return {verts, place_joints(bt, tmpl), Handedness::right};
}

HandMesh skin_mesh(const HandPose& pose, const HandTemplate& tmpl) {
  NoGradGuard guard;
  return skin(pose.theta_tensor(), pose.beta_tensor(), tmpl);
}

HandMesh pose_hand(const Tensor& theta, const Tensor& beta, Handedness side,
                   const HandTemplate& tmpl) {
  if (side == Handedness::right) return skin(theta, beta, tmpl);
  return flip_hand(skin(mirror_theta(theta), beta, tmpl));
}

HandMesh pose_hand(const HandPose& pose, Handedness side,
                   const HandTemplate& tmpl) {
  NoGradGuard guard;
  return pose_hand(pose.theta_tensor(), pose.beta_tensor(), side, tmpl);
}

Tensor regress_joints(const Tensor& vertices, const HandTemplate& tmpl) {
  if (vertices.rank() != 2 || vertices.dim(0) != tmpl.vertex_count() ||
      vertices.dim(1) != 3) {
    throw DimensionError("regress_joints: expected [" +
                         std::to_string(tmpl.vertex_count()) + ", 3], got " +
                         shape_str(vertices.shape()));
  }
  return ops::matmul(tmpl.joint_regressor, vertices);
}

Tensor flip_x(const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("flip_x: expected [n, 3], got " + shape_str(points.shape()));
  }
  std::vector<double> sign(points.numel(), 1.0);
  for (std::size_t i = 0; i < sign.size(); i += 3) sign[i] = -1.0;
  return ops::mul(points, Tensor(points.shape(), std::move(sign)));
}

HandMesh flip_hand(const HandMesh& mesh) {
  return {flip_x(mesh.vertices), flip_x(mesh.joints),
          mesh.side == Handedness::left ? Handedness::right : Handedness::left};
}

Tensor mirror_theta(const Tensor& theta) {
  if (theta.numel() != kPoseDim) {
    throw DimensionError("mirror_theta: expected 48 values");
  }
  std::vector<double> sign(kPoseDim, -1.0);
  for (std::size_t i = 0; i < kPoseDim; i += 3) sign[i] = 1.0;
  return ops::mul(theta, Tensor(theta.shape(), std::move(sign)));
}

HandPose mirror_pose(const HandPose& pose) {
  HandPose out = pose;
  for (std::size_t i = 0; i < kPoseDim; ++i) {
    if (i % 3 != 0) out.theta[i] = -pose.theta[i];
  }
  return out;
}

PoseLimits PoseLimits::defaults() {
  PoseLimits l;
  auto set = [&](std::size_t bone, Vec3 lo, Vec3 hi) {
    for (int a = 0; a < 3; ++a) {
      l.theta_lo[bone * 3 + a] = lo[a];
      l.theta_hi[bone * 3 + a] = hi[a];
    }
  };
  set(0, {-0.3, -0.3, -0.3}, {0.3, 0.3, 0.3});
  set(finger_bone(0, 0), {-0.3, -0.4, -0.4}, {0.6, 0.4, 0.4});
  set(finger_bone(0, 1), {-0.1, -0.1, -0.1}, {0.7, 0.1, 0.1});
  set(finger_bone(0, 2), {-0.1, -0.05, -0.05}, {0.8, 0.05, 0.05});
  for (std::size_t f = 1; f < 5; ++f) {
    set(finger_bone(f, 0), {-0.2, -0.1, -0.25}, {1.2, 0.1, 0.25});
    set(finger_bone(f, 1), {0.0, -0.05, -0.05}, {1.4, 0.05, 0.05});
    set(finger_bone(f, 2), {0.0, -0.05, -0.05}, {1.0, 0.05, 0.05});
  }
  l.beta_lo.fill(-1.0);
  l.beta_hi.fill(1.0);
  return l;
}

PoseLimits PoseLimits::scaled(double factor) const {
  PoseLimits out = *this;
  for (std::size_t i = 0; i < kPoseDim; ++i) {
    out.theta_lo[i] *= factor;
    out.theta_hi[i] *= factor;
  }
  for (std::size_t i = 0; i < kShapeDim; ++i) {
    out.beta_lo[i] *= factor;
    out.beta_hi[i] *= factor;
  }
  return out;
}

HandPose sample_pose(std::mt19937_64& rng, const PoseLimits& limits) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  HandPose p;
  for (std::size_t i = 0; i < kPoseDim; ++i) {
    const double u = unit(rng);
    p.theta[i] = limits.theta_lo[i] + (limits.theta_hi[i] - limits.theta_lo[i]) * u;
  }
  for (std::size_t i = 0; i < kShapeDim; ++i) {
    const double u = unit(rng);
    p.beta[i] = limits.beta_lo[i] + (limits.beta_hi[i] - limits.beta_lo[i]) * u;
  }
  return p;
}

void write_obj(std::ostream& out, const HandMesh& mesh, const HandTemplate& tmpl) {
  if (mesh.vertices.dim(0) != tmpl.vertex_count()) {
    throw DimensionError("write_obj: mesh does not match template topology");
  }
  out << "# " << to_string(mesh.side) << " hand, " << tmpl.vertex_count()
      << " vertices\n";
  out.precision(9);
  auto v = mesh.vertices.data();
  for (std::size_t i = 0; i < tmpl.vertex_count(); ++i) {
    out << "v " << v[i * 3] << ' ' << v[i * 3 + 1] << ' ' << v[i * 3 + 2] << '\n';
  }
  // Mirroring flips orientation, so left meshes reverse the winding.
  const bool reverse = mesh.side == Handedness::left;
  for (const auto& f : tmpl.faces) {
    out << "f " << f[0] + 1 << ' ' << (reverse ? f[2] : f[1]) + 1 << ' '
        << (reverse ? f[1] : f[2]) + 1 << '\n';
  }
}

}  // namespace eanet::hand
