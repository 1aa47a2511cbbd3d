#include "eanet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "eanet/eatf.hpp"
#include "eanet/ops.hpp"

namespace eanet::synth {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kFields = 16;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void check_config(const SynthConfig& c) {
  if (c.image_size == 0 || c.heatmap_size == 0 || c.image_size % c.heatmap_size != 0) {
    throw DimensionError("synth: heatmap size must divide image size");
  }
  if (c.depth_bins < 2) throw DimensionError("synth: need at least two depth bins");
  if (!(c.depth_range > 0.0)) throw DimensionError("synth: depth range must be positive");
}

HandTargets absent_targets() {
  HandTargets t;
  t.present = false;
  t.joints25 = Tensor::zeros({hand::kJoints, 3});
  t.joints3d = Tensor::zeros({hand::kJoints, 3});
  t.vertices = Tensor::zeros({hand::kVertices, 3});
  t.theta = Tensor::zeros({hand::kPoseDim});
  t.beta = Tensor::zeros({hand::kShapeDim});
  return t;
}

Tensor shifted(const Tensor& points, const std::array<double, 3>& by) {
  std::vector<double> out = points.to_vector();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += by[i % 3];
  return Tensor(points.shape(), std::move(out));
}

bool same_tensor(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

std::array<double, 3> Scene::right_root() const {
  return {left_root[0] + rel_translation[0], left_root[1] + rel_translation[1],
          left_root[2] + rel_translation[2]};
}

hand::HandPose blend_symmetric(const hand::HandPose& left,
                               const hand::HandPose& independent, double s) {
  s = std::clamp(s, 0.0, 1.0);
  const hand::HandPose mirrored = hand::mirror_pose(left);
  if (s == 1.0) return mirrored;
  if (s == 0.0) return independent;
  hand::HandPose out;
  for (std::size_t i = 0; i < hand::kPoseDim; ++i) {
    out.theta[i] = s * mirrored.theta[i] + (1.0 - s) * independent.theta[i];
  }
  for (std::size_t i = 0; i < hand::kShapeDim; ++i) {
    out.beta[i] = s * mirrored.beta[i] + (1.0 - s) * independent.beta[i];
  }
  return out;
}

Scene sample_scene(std::uint64_t seed, const SynthConfig& config) {
  check_config(config);
  std::mt19937_64 rng(seed);
  const auto limits = hand::PoseLimits::defaults().scaled(config.pose_scale);
  Scene scene;
  // Every draw happens regardless of presence so the stream layout is fixed.
  const double presence_draw = uniform(rng, 0.0, 1.0);
  const double side_draw = uniform(rng, 0.0, 1.0);
  scene.symmetry = std::clamp(uniform(rng, 0.0, 1.0) * (config.symmetry_hi - config.symmetry_lo) +
                                  config.symmetry_lo,
                              0.0, 1.0);
  const hand::HandPose left = hand::sample_pose(rng, limits);
  const hand::HandPose independent = hand::sample_pose(rng, limits);
  const double half = static_cast<double>(config.image_size) / 2.0;
  scene.camera.scale = uniform(rng, config.camera_scale_lo, config.camera_scale_hi);
  scene.camera.offset_x = half + uniform(rng, -config.camera_jitter, config.camera_jitter);
  scene.camera.offset_y = half + uniform(rng, -config.camera_jitter, config.camera_jitter);
  scene.left_root = {-0.055 + uniform(rng, -0.01, 0.01), -0.06 + uniform(rng, -0.01, 0.01),
                     uniform(rng, -0.02, 0.02)};
  scene.rel_translation = {0.11 + uniform(rng, -0.03, 0.03), uniform(rng, -0.02, 0.02),
                           uniform(rng, -0.04, 0.04)};
  const hand::HandPose right = blend_symmetric(left, independent, scene.symmetry);

  if (presence_draw >= config.single_hand_ratio) {
    scene.left = left;
    scene.right = right;
  } else if (side_draw < 0.5) {
    scene.left = left;
  } else {
    scene.right = right;
  }
  return scene;
}

Projection project_2_5d(const Tensor& joints_world, const Camera& camera,
                        std::size_t root, const SynthConfig& config) {
  if (joints_world.rank() != 2 || joints_world.dim(1) != 3 || root >= joints_world.dim(0)) {
    throw DimensionError("project_2_5d: expected [J, 3] joints and a valid root, got " +
                         shape_str(joints_world.shape()));
  }
  const std::size_t n = joints_world.dim(0);
  const double ratio = static_cast<double>(config.heatmap_size) /
                       static_cast<double>(config.image_size);
  const double hw_max = static_cast<double>(config.heatmap_size - 1);
  const double half_bins = static_cast<double>(config.depth_bins - 1) / 2.0;
  auto p = joints_world.data();
  const double root_z = p[root * 3 + 2];
  Projection out;
  std::vector<double> coords(n * 3);
  out.clamped.assign(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = camera.scale * p[j * 3] + camera.offset_x;
    const double v = camera.offset_y - camera.scale * p[j * 3 + 1];
    double c[3] = {u * ratio, v * ratio,
                   half_bins + (p[j * 3 + 2] - root_z) / config.depth_range * half_bins};
    const double hi[3] = {hw_max, hw_max, 2.0 * half_bins};
    for (int a = 0; a < 3; ++a) {
      if (c[a] < 0.0 || c[a] > hi[a]) {
        c[a] = std::clamp(c[a], 0.0, hi[a]);
        out.clamped[j] = true;
      }
      coords[j * 3 + a] = c[a];
    }
  }
  out.coords = Tensor({n, 3}, std::move(coords));
  return out;
}

std::array<double, 2> unproject_xy(double hx, double hy, const Camera& camera,
                                   const SynthConfig& config) {
  const double ratio = static_cast<double>(config.heatmap_size) /
                       static_cast<double>(config.image_size);
  const double u = hx / ratio;
  const double v = hy / ratio;
  return {(u - camera.offset_x) / camera.scale, (camera.offset_y - v) / camera.scale};
}

hand::HandMesh world_mesh(const hand::HandPose& pose, hand::Handedness side,
                          const std::array<double, 3>& root) {
  hand::HandMesh local = hand::pose_hand(pose, side, hand::default_template());
  return {shifted(local.vertices, root), shifted(local.joints, root), side};
}

Tensor rasterize(const Scene& scene, const SynthConfig& config) {
  check_config(config);
  const std::size_t size = config.image_size;
  std::vector<double> img(size * size * 3, 0.0);
  const double sigma = config.splat_sigma;
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  auto splat = [&](const hand::HandPose& pose, hand::Handedness side,
                   const std::array<double, 3>& root, std::size_t channel) {
    const hand::HandMesh mesh = world_mesh(pose, side, root);
    auto v = mesh.vertices.data();
    for (std::size_t i = 0; i < mesh.vertices.dim(0); ++i) {
      const double u = scene.camera.scale * v[i * 3] + scene.camera.offset_x;
      const double w = scene.camera.offset_y - scene.camera.scale * v[i * 3 + 1];
      // Nearer vertices (negative relative depth) splat brighter.
      const double rel = std::clamp((v[i * 3 + 2] - root[2]) / config.depth_range, -1.0, 1.0);
      const double amp = config.splat_gain * (1.0 - 0.35 * rel);
      const long cx = static_cast<long>(std::floor(u));
      const long cy = static_cast<long>(std::floor(w));
      for (long py = cy - radius; py <= cy + radius; ++py) {
        if (py < 0 || py >= static_cast<long>(size)) continue;
        for (long px = cx - radius; px <= cx + radius; ++px) {
          if (px < 0 || px >= static_cast<long>(size)) continue;
          const double dx = static_cast<double>(px) + 0.5 - u;
          const double dy = static_cast<double>(py) + 0.5 - w;
          const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          img[(static_cast<std::size_t>(py) * size + static_cast<std::size_t>(px)) * 3 + channel] +=
              amp * g;
        }
      }
    }
  };
  if (scene.left) splat(*scene.left, hand::Handedness::left, scene.left_root, 0);
  if (scene.right) splat(*scene.right, hand::Handedness::right, scene.right_root(), 1);
  for (std::size_t p = 0; p < size * size; ++p) {
    img[p * 3] = std::min(img[p * 3], 1.0);
    img[p * 3 + 1] = std::min(img[p * 3 + 1], 1.0);
    img[p * 3 + 2] = std::min(img[p * 3], img[p * 3 + 1]);
  }
  return Tensor({size, size, 3}, std::move(img));
}

Sample make_sample(const Scene& scene, const SynthConfig& config) {
  NoGradGuard guard;
  Sample s;
  s.image = rasterize(scene, config);
  s.camera = scene.camera;
  s.left_root = scene.left_root;
  s.symmetry = scene.symmetry;
  s.rel_translation = Tensor::vector({scene.rel_translation.begin(), scene.rel_translation.end()});
  auto targets = [&](const std::optional<hand::HandPose>& pose, hand::Handedness side,
                     const std::array<double, 3>& root) {
    if (!pose) return absent_targets();
    HandTargets t;
    t.present = true;
    const hand::HandMesh local = hand::pose_hand(*pose, side, hand::default_template());
    t.joints3d = local.joints;
    t.vertices = local.vertices;
    t.joints25 = project_2_5d(shifted(local.joints, root), scene.camera, hand::kRootJoint,
                              config)
                     .coords;
    t.theta = pose->theta_tensor();
    t.beta = pose->beta_tensor();
    return t;
  };
  s.left = targets(scene.left, hand::Handedness::left, scene.left_root);
  s.right = targets(scene.right, hand::Handedness::right, scene.right_root());
  return s;
}

std::uint64_t sample_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

std::vector<Sample> generate(std::uint64_t master_seed, std::size_t count,
                             const SynthConfig& config) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(make_sample(sample_scene(sample_seed(master_seed, i), config), config));
  }
  return out;
}

namespace {

void write_record(std::ostream& out, const Sample& s) {
  auto hand_fields = [&](const HandTargets& t) {
    eatf::write(out, t.joints25);
    eatf::write(out, t.joints3d);
    eatf::write(out, t.vertices);
    eatf::write(out, t.theta);
    eatf::write(out, t.beta);
  };
  eatf::write(out, s.image);
  eatf::write(out, Tensor::vector({s.left.present ? 1.0 : 0.0, s.right.present ? 1.0 : 0.0}));
  hand_fields(s.left);
  hand_fields(s.right);
  eatf::write(out, s.rel_translation);
  eatf::write(out, Tensor::vector({s.camera.scale, s.camera.offset_x, s.camera.offset_y}));
  eatf::write(out, Tensor::vector({s.left_root.begin(), s.left_root.end()}));
  eatf::write(out, Tensor::vector({s.symmetry}));
}

Sample read_record(std::istream& in) {
  Sample s;
  auto expect = [&](const Shape& shape, const char* field) {
    Tensor t = eatf::read(in);
    if (t.shape() != shape) {
      throw FormatError(std::string("field ") + field + " has shape " + shape_str(t.shape()));
    }
    return t;
  };
  s.image = eatf::read(in);
  if (s.image.rank() != 3 || s.image.dim(2) != 3) throw FormatError("field image is not [H, W, 3]");
  Tensor presence = expect({2}, "presence");
  auto hand_fields = [&](HandTargets& t, double present) {
    t.present = present != 0.0;
    t.joints25 = expect({hand::kJoints, 3}, "joints25");
    t.joints3d = expect({hand::kJoints, 3}, "joints3d");
    t.vertices = expect({hand::kVertices, 3}, "vertices");
    t.theta = expect({hand::kPoseDim}, "theta");
    t.beta = expect({hand::kShapeDim}, "beta");
  };
  hand_fields(s.left, presence[0]);
  hand_fields(s.right, presence[1]);
  s.rel_translation = expect({3}, "rel_translation");
  Tensor cam = expect({3}, "camera");
  s.camera = {cam[0], cam[1], cam[2]};
  Tensor root = expect({3}, "left_root");
  s.left_root = {root[0], root[1], root[2]};
  s.symmetry = expect({1}, "symmetry")[0];
  return s;
}

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot open " + path.string());
  out.write(kMagic, 4);
  eatf::put_u16(out, kVersion);
  eatf::put_u16(out, kFields);
  for (const auto& s : samples) {
    std::ostringstream rec(std::ios::binary);
    write_record(rec, s);
    const std::string bytes = rec.str();
    eatf::put_u64(out, bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  char magic[4];
  std::uint16_t version = 0;
  std::uint16_t fields = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("dataset " + path.string() + ": bad magic");
  }
  if (!eatf::get_u16(in, version) || !eatf::get_u16(in, fields)) {
    throw FormatError("dataset " + path.string() + ": truncated header");
  }
  if (version != kVersion || fields != kFields) {
    throw FormatError("dataset " + path.string() + ": unsupported version/field layout");
  }
  std::vector<Sample> out;
  auto fail = [&](const std::string& what) {
    const std::string last = out.empty() ? std::string("none")
                                         : std::to_string(out.size() - 1);
    throw FormatError("dataset " + path.string() + ": record " + std::to_string(out.size()) +
                      " " + what + " (last good record: " + last + ")");
  };
  while (true) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    std::uint64_t length = 0;
    if (!eatf::get_u64(in, length)) fail("has a truncated length prefix");
    std::string bytes(length, '\0');
    if (!in.read(bytes.data(), static_cast<std::streamsize>(length))) fail("is truncated");
    std::istringstream rec(bytes, std::ios::binary);
    try {
      out.push_back(read_record(rec));
    } catch (const FormatError& e) {
      fail(std::string("is corrupt: ") + e.what());
    }
    if (rec.peek() != std::char_traits<char>::eof()) fail("has trailing bytes");
  }
  return out;
}

bool same_sample(const Sample& a, const Sample& b) {
  auto same_hand = [](const HandTargets& x, const HandTargets& y) {
    return x.present == y.present && same_tensor(x.joints25, y.joints25) &&
           same_tensor(x.joints3d, y.joints3d) && same_tensor(x.vertices, y.vertices) &&
           same_tensor(x.theta, y.theta) && same_tensor(x.beta, y.beta);
  };
  return same_tensor(a.image, b.image) && same_hand(a.left, b.left) &&
         same_hand(a.right, b.right) && same_tensor(a.rel_translation, b.rel_translation) &&
         same_bits(a.camera.scale, b.camera.scale) &&
         same_bits(a.camera.offset_x, b.camera.offset_x) &&
         same_bits(a.camera.offset_y, b.camera.offset_y) &&
         same_bits(a.left_root[0], b.left_root[0]) && same_bits(a.left_root[1], b.left_root[1]) &&
         same_bits(a.left_root[2], b.left_root[2]) && same_bits(a.symmetry, b.symmetry);
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::uint64_t h = 0xCBF29CE484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace eanet::synth
