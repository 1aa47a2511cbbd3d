#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eanet/hand_model.hpp"
#include "eanet/tensor.hpp"

namespace eanet::synth {

/// Weak-perspective camera: u = scale * X + offset_x, v = offset_y - scale * Y
/// (image rows grow downward, world y points up). Pixels per meter.
struct Camera {
  double scale = 120.0;
  double offset_x = 32.0;
  double offset_y = 32.0;

  bool operator==(const Camera&) const = default;
};

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t heatmap_size = 4;
  std::size_t depth_bins = 8;
  /// Root-relative depth (m) mapped to the outermost depth bin.
  double depth_range = 0.12;
  double single_hand_ratio = 0.25;
  /// Symmetry knob drawn uniformly from [lo, hi] per scene.
  double symmetry_lo = 0.0;
  double symmetry_hi = 1.0;
  double camera_scale_lo = 110.0;
  double camera_scale_hi = 140.0;
  double camera_jitter = 3.0;  // pixels around the image center
  double splat_sigma = 1.2;    // pixels
  double splat_gain = 0.45;
  /// Multiplies the default joint-angle limits.
  double pose_scale = 1.0;

  bool operator==(const SynthConfig&) const = default;
};

struct Scene {
  std::optional<hand::HandPose> left;
  std::optional<hand::HandPose> right;
  std::array<double, 3> left_root{};
  /// Right root minus left root, meters.
  std::array<double, 3> rel_translation{};
  Camera camera;
  double symmetry = 0.0;

  std::array<double, 3> right_root() const;
};

/// Right pose = s * mirror(left) + (1 - s) * independent, in parameter space.
hand::HandPose blend_symmetric(const hand::HandPose& left,
                               const hand::HandPose& independent, double s);

Scene sample_scene(std::uint64_t seed, const SynthConfig& config);

struct Projection {
  Tensor coords;             // [J, 3] heatmap (x, y) and depth bin z
  std::vector<bool> clamped;  // per joint, true when clamped into the box
};

/// World joints [J, 3] -> 2.5D heatmap coordinates. The root joint's depth
/// lands on bin (d - 1) / 2.
Projection project_2_5d(const Tensor& joints_world, const Camera& camera,
                        std::size_t root, const SynthConfig& config);
/// Inverse of the x, y part of project_2_5d (in-image joints only).
std::array<double, 2> unproject_xy(double hx, double hy, const Camera& camera,
                                   const SynthConfig& config);

/// World-space mesh of one hand: local mesh shifted by its root.
hand::HandMesh world_mesh(const hand::HandPose& pose, hand::Handedness side,
                          const std::array<double, 3>& root);

/// Gaussian splats of the skinned vertices: left in channel 0, right in
/// channel 1, their overlap (pointwise min) in channel 2; values in [0, 1].
Tensor rasterize(const Scene& scene, const SynthConfig& config);

struct HandTargets {
  bool present = false;
  Tensor joints25;   // [21, 3]
  Tensor joints3d;   // [21, 3] hand-local (root at the origin)
  Tensor vertices;   // [V, 3] hand-local
  Tensor theta;      // [48]
  Tensor beta;       // [10]
};

struct Sample {
  Tensor image;  // [H, W, 3]
  HandTargets left;
  HandTargets right;
  Tensor rel_translation;  // [3]
  Camera camera;
  std::array<double, 3> left_root{};
  double symmetry = 0.0;

  bool two_hands() const { return left.present && right.present; }
  const HandTargets& targets(hand::Handedness side) const {
    return side == hand::Handedness::left ? left : right;
  }
};

Sample make_sample(const Scene& scene, const SynthConfig& config);

/// Per-sample seed derived from the master seed and the sample index.
std::uint64_t sample_seed(std::uint64_t master, std::uint64_t index);

/// Samples [0, count) in index order.
std::vector<Sample> generate(std::uint64_t master_seed, std::size_t count,
                             const SynthConfig& config);

/// "EADS" | u16 version | u16 fields, then per sample a u64 byte length
/// followed by that many bytes of concatenated EATF tensors.
void write_dataset(const std::vector<Sample>& samples,
                   const std::filesystem::path& path);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

/// Bitwise equality over every stored field.
bool same_sample(const Sample& a, const Sample& b);

/// FNV-1a over the dataset file bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

}  // namespace eanet::synth
