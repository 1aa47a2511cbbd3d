#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <random>
#include <vector>

#include "eanet/tensor.hpp"

// Procedural stand-in for MANO: 16 transform bones drive a 64-vertex skinned
// mesh; 21 joints (bones plus five fingertips) are the supervision targets.
namespace eanet::hand {

inline constexpr std::size_t kPoseDim = 48;
inline constexpr std::size_t kShapeDim = 10;
inline constexpr std::size_t kJoints = 21;
inline constexpr std::size_t kBones = 16;
inline constexpr std::size_t kVertices = 64;
inline constexpr std::size_t kRootJoint = 0;

enum class Handedness { left, right };

const char* to_string(Handedness side);

struct HandPose {
  std::array<double, kPoseDim> theta{};  // 16 axis-angle triples, [0:3] global
  std::array<double, kShapeDim> beta{};

  Tensor theta_tensor(bool requires_grad = false) const;
  Tensor beta_tensor(bool requires_grad = false) const;
  static HandPose from_tensors(const Tensor& theta, const Tensor& beta);
  bool operator==(const HandPose&) const = default;
};

struct HandTemplate {
  Tensor rest_joints;       // [21, 3], wrist at the origin
  std::vector<int> parents;  // per joint, -1 for the wrist
  std::vector<std::size_t> bone_joint;   // [16] joint each bone rotates about
  std::vector<int> bone_parent;          // [16], -1 for the root bone
  std::vector<std::size_t> joint_frame;  // [21] bone whose transform places the joint
  Tensor vertices;          // [V, 3]
  Tensor skin_weights;      // [V, 16], row-stochastic
  Tensor shape_dirs;        // [10, V*3]
  Tensor joint_shape_dirs;  // [10, 21*3], regressor applied to shape_dirs
  Tensor joint_regressor;   // [21, V], row-stochastic
  std::vector<std::array<std::size_t, 3>> faces;

  std::size_t vertex_count() const { return vertices.dim(0); }
  /// (child, parent) joint pairs of the kinematic tree.
  std::vector<std::pair<std::size_t, std::size_t>> bones() const;
};

/// The shared procedural template (built once).
const HandTemplate& default_template();
HandTemplate build_template();

struct HandMesh {
  Tensor vertices;  // [V, 3], hand-local meters
  Tensor joints;    // [21, 3]
  Handedness side = Handedness::right;
};

/// Differentiable right-hand kinematics: theta[48], beta[10] -> joints [21, 3].
Tensor forward_kinematics(const Tensor& theta, const Tensor& beta,
                          const HandTemplate& tmpl);
Tensor forward_kinematics(const HandPose& pose, const HandTemplate& tmpl);

/// Differentiable right-hand linear blend skinning; fills joints and vertices.
HandMesh skin(const Tensor& theta, const Tensor& beta, const HandTemplate& tmpl);
HandMesh skin_mesh(const HandPose& pose, const HandTemplate& tmpl);

/// Poses either hand. The left hand is the x-mirror of the right model posed
/// with the mirrored parameters, matching MANO's left/right convention.
HandMesh pose_hand(const Tensor& theta, const Tensor& beta, Handedness side,
                   const HandTemplate& tmpl);
HandMesh pose_hand(const HandPose& pose, Handedness side,
                   const HandTemplate& tmpl);

Tensor regress_joints(const Tensor& vertices, const HandTemplate& tmpl);

/// Negates x of every row of a [n, 3] tensor (differentiable).
Tensor flip_x(const Tensor& points);
HandMesh flip_hand(const HandMesh& mesh);

/// Axis-angle mirror across the x = 0 plane: (x, y, z) -> (x, -y, -z).
Tensor mirror_theta(const Tensor& theta);
HandPose mirror_pose(const HandPose& pose);

struct PoseLimits {
  std::array<double, kPoseDim> theta_lo{}, theta_hi{};
  std::array<double, kShapeDim> beta_lo{}, beta_hi{};

  static PoseLimits defaults();
  static PoseLimits zero() { return {}; }
  /// Every interval multiplied by `factor`.
  PoseLimits scaled(double factor) const;
};

/// Uniform sample inside the limits.
HandPose sample_pose(std::mt19937_64& rng, const PoseLimits& limits);

/// ASCII OBJ: "v x y z" per vertex, then 1-based triangle faces.
void write_obj(std::ostream& out, const HandMesh& mesh, const HandTemplate& tmpl);

}  // namespace eanet::hand
