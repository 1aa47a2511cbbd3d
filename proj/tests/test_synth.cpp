#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "eanet/eatf.hpp"
#include "eanet/metrics.hpp"
#include "eanet/synth.hpp"

using namespace eanet;
using namespace eanet::synth;
namespace fs = std::filesystem;

namespace {

bool bitwise(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "eanet_test_synth";
  fs::create_directories(dir);
  return dir / name;
}

std::array<double, 2> centroid(const Tensor& image, std::size_t channel) {
  const std::size_t n = image.dim(0);
  double sx = 0.0, sy = 0.0, sw = 0.0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double w = image.at({y, x, channel});
      sx += w * static_cast<double>(x);
      sy += w * static_cast<double>(y);
      sw += w;
    }
  }
  return {sx / sw, sy / sw};
}

}  // namespace

TEST_CASE("scene sampling") {
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene a = sample_scene(seed, cfg);
    const Scene b = sample_scene(seed, cfg);
    CHECK(a.left == b.left);
    CHECK(a.right == b.right);
    CHECK(a.camera == b.camera);
  }
  SynthConfig sym = cfg;
  sym.symmetry_lo = sym.symmetry_hi = 1.0;
  sym.single_hand_ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = sample_scene(seed, sym);
    REQUIRE(s.left);
    REQUIRE(s.right);
    CHECK(metrics::pose_difference(*s.left, *s.right) <= 1e-9);
  }

  // Independent hands: per-coordinate correlation of left and right theta.
  SynthConfig ind = cfg;
  ind.symmetry_lo = ind.symmetry_hi = 0.0;
  ind.single_hand_ratio = 0.0;
  const std::size_t n = 1000;
  std::vector<std::array<double, 48>> l(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scene s = sample_scene(1000 + i, ind);
    l[i] = s.left->theta;
    r[i] = hand::mirror_pose(*s.right).theta;
  }
  double worst = 0.0;
  for (std::size_t k = 3; k < 48; ++k) {
    double ml = 0, mr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ml += l[i][k];
      mr += r[i][k];
    }
    ml /= n;
    mr /= n;
    double c = 0, vl = 0, vr = 0;
    for (std::size_t i = 0; i < n; ++i) {
      c += (l[i][k] - ml) * (r[i][k] - mr);
      vl += (l[i][k] - ml) * (l[i][k] - ml);
      vr += (r[i][k] - mr) * (r[i][k] - mr);
    }
    if (vl > 0 && vr > 0) worst = std::max(worst, std::abs(c / std::sqrt(vl * vr)));
  }
  CHECK(worst < 0.1);
}

TEST_CASE("rasterize") {
  SynthConfig cfg;
  Scene scene = sample_scene(3, cfg);
  scene.left = hand::HandPose{};
  scene.right.reset();
  const Tensor img = rasterize(scene, cfg);
  CHECK(img.shape() == Shape{64, 64, 3});
  for (std::size_t i = 0; i < img.numel(); ++i) {
    CHECK(img[i] >= 0.0);
    CHECK(img[i] <= 1.0);
    if (i % 3 == 1) CHECK(img[i] == 0.0);
  }
  Scene moved = scene;
  moved.left_root[0] += 0.01;
  moved.left_root[1] += 0.005;
  const auto c0 = centroid(img, 0);
  const auto c1 = centroid(rasterize(moved, cfg), 0);
  CHECK(std::abs((c1[0] - c0[0]) - 0.01 * scene.camera.scale) < 0.5);
  CHECK(std::abs((c1[1] - c0[1]) + 0.005 * scene.camera.scale) < 0.5);

  const auto data = generate(7, 16, cfg);
  for (const auto& s : data) {
    for (std::size_t i = 0; i < s.image.numel(); ++i) {
      CHECK(s.image[i] >= 0.0);
      CHECK(s.image[i] <= 1.0);
    }
  }
}

TEST_CASE("2.5d projection") {
  SynthConfig cfg;
  const Camera cam{1.0, 32.0, 32.0};
  const Tensor j = Tensor::matrix(2, 3, {0.0, 0.0, 0.3, 0.0, 0.0, 0.3});
  const auto p = project_2_5d(j, cam, 0, cfg);
  CHECK(p.coords.at({0, 2}) == 3.5);
  CHECK(p.coords.at({0, 0}) == 2.0);
  CHECK(p.coords.at({0, 1}) == 2.0);

  const Camera c2{120.0, 31.0, 33.0};
  const Tensor k = Tensor::matrix(2, 3, {0.004, -0.003, 0.0, -0.0071, 0.0052, 0.01});
  const auto q = project_2_5d(k, c2, 0, cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto xy = unproject_xy(q.coords.at({i, 0}), q.coords.at({i, 1}), c2, cfg);
    CHECK(std::abs(xy[0] - k.at({i, 0})) <= 1e-9);
    CHECK(std::abs(xy[1] - k.at({i, 1})) <= 1e-9);
  }
}

TEST_CASE("targets are self-consistent") {
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene scene = sample_scene(sample_seed(5, seed), cfg);
    const Sample s = make_sample(scene, cfg);
    if (scene.left) {
      const auto m = world_mesh(*scene.left, hand::Handedness::left, scene.left_root);
      CHECK(bitwise(project_2_5d(m.joints, scene.camera, 0, cfg).coords, s.left.joints25));
    }
    if (scene.right) {
      const auto m = world_mesh(*scene.right, hand::Handedness::right, scene.right_root());
      CHECK(bitwise(project_2_5d(m.joints, scene.camera, 0, cfg).coords, s.right.joints25));
    }
  }
}

TEST_CASE("dataset files") {
  SynthConfig cfg;
  const auto data = generate(11, 16, cfg);
  const auto path = scratch("d16.eads");
  write_dataset(data, path);
  const auto back = read_dataset(path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) CHECK(same_sample(data[i], back[i]));
  const auto again = scratch("d16b.eads");
  write_dataset(generate(11, 16, cfg), again);
  CHECK(file_hash(path) == file_hash(again));

  write_dataset({}, scratch("empty.eads"));
  CHECK(read_dataset(scratch("empty.eads")).empty());

  const auto size = fs::file_size(path);
  fs::copy_file(path, scratch("cut.eads"), fs::copy_options::overwrite_existing);
  fs::resize_file(scratch("cut.eads"), size - 100);
  try {
    read_dataset(scratch("cut.eads"));
    FAIL("truncated dataset accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("record 15") != std::string::npos);
  }
  CHECK_THROWS_AS(read_dataset(scratch("missing.eads")), std::ios_base::failure);
}

TEST_CASE("eatf container") {
  const Tensor t({2, 3}, {1, -0.0, 3.5, 1e-310, -7, 2});
  const auto bytes = eatf::encode(t);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "EATF");
  CHECK(bytes.size() == 4 + 2 + 2 + 2 * 8 + 6 * 8);
  CHECK(bytes[4] == 1);
  CHECK(bytes[6] == 2);
  CHECK(bitwise(eatf::decode(bytes), t));
  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(eatf::decode(bad), FormatError);
  bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(eatf::decode(bad), FormatError);
}
