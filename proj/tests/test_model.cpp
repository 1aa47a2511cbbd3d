#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "eanet/config.hpp"
#include "eanet/gradcheck.hpp"
#include "eanet/model.hpp"
#include "eanet/ops.hpp"
#include "eanet/synth.hpp"

using namespace eanet;
using namespace eanet::model;

namespace {

using Mat = std::vector<std::vector<double>>;

Tensor random_map(std::mt19937_64& rng, std::size_t h, std::size_t c) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(h * h * c);
  for (auto& x : v) x = g(rng);
  return Tensor({h, h, c}, v);
}

Mat rows(const Tensor& t) {
  const std::size_t c = t.shape().back();
  Mat m(t.numel() / c, std::vector<double>(c));
  for (std::size_t i = 0; i < t.numel(); ++i) m[i / c][i % c] = t[i];
  return m;
}

Mat affine(const Mat& x, const nn::LinearWeights& w) {
  const std::size_t cin = w.weight.dim(0), cout = w.weight.dim(1);
  Mat out(x.size(), std::vector<double>(cout));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t o = 0; o < cout; ++o) {
      double s = w.bias.defined() ? w.bias[o] : 0.0;
      for (std::size_t i = 0; i < cin; ++i) s += x[r][i] * w.weight[i * cout + o];
      out[r][o] = s;
    }
  }
  return out;
}

Mat plus(Mat a, const Mat& b) {
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < a[r].size(); ++c) a[r][c] += b[r][c];
  return a;
}

Mat block(const Mat& query, const Mat& context, const nn::AttentionBlockWeights& w) {
  const Mat q = affine(query, w.q), k = affine(context, w.k), v = affine(context, w.v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat att(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    double mx = -1e300, z = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      s[j] = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) s[j] += q[i][c] * k[j][c];
      s[j] *= scale;
      mx = std::max(mx, s[j]);
    }
    for (auto& x : s) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[j].size(); ++c) att[i][c] += s[j] / z * v[j][c];
  }
  const Mat r = plus(query, att);
  Mat h = affine(r, w.mlp.fc1);
  for (auto& row : h)
    for (auto& x : row) x = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  return plus(r, affine(h, w.mlp.fc2));
}

void zero_all(nn::ParameterStore& store) {
  for (const auto& [name, t] : store.entries()) {
    auto d = Tensor(t).data_mut();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

bool bitwise(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("token length law") {
  for (std::size_t h : {1u, 2u, 4u, 8u}) {
    ModelConfig c;
    c.image_size = 16 * h;
    c.feature_size = h;
    CHECK(c.token_length() == 2 * h * h + 1);
  }
  NoGradGuard guard;
  nn::ParameterStore store(1);
  const auto w = make_fuseformer(store, "ff", 4, CaVariant::tj_ts, {});
  std::mt19937_64 rng(1);
  CHECK(make_sim_token(random_map(rng, 2, 4), random_map(rng, 2, 4), w, {}).dim(0) == 9);
}

TEST_CASE("zero sim-token weights leave the concatenated rows") {
  nn::ParameterStore store(2);
  const auto w = make_fuseformer(store, "ff", 4, CaVariant::tj_ts, {});
  zero_all(store);
  std::mt19937_64 rng(2);
  const Tensor a = random_map(rng, 2, 4), b = random_map(rng, 2, 4);
  const Tensor t = make_sim_token(a, b, w, {});
  const Tensor expected = ops::concat({w.cls, ops::reshape(a, {4, 4}), ops::reshape(b, {4, 4})}, 0);
  CHECK(bitwise(t, expected));
}

TEST_CASE("join token selector") {
  std::mt19937_64 rng(3);
  const Tensor a = random_map(rng, 2, 3), b = random_map(rng, 2, 3);
  std::vector<double> sel(6 * 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) sel[i * 3 + i] = 1.0;
  const nn::LinearWeights fc{Tensor::matrix(6, 3, sel), Tensor::zeros({3})};
  CHECK(bitwise(make_join_token(a, b, fc), ops::reshape(a, {4, 3})));

  nn::ParameterStore store(3);
  const auto paper = make_fuseformer(store, "ff", 512, CaVariant::tj_ts, {});
  CHECK(paper.join.weight.shape() == Shape{1024, 512});
  CHECK(paper.sa.mlp.fc1.weight.shape() == Shape{512, 2048});
}

TEST_CASE("fuseformer matches a straight-line oracle") {
  nn::ParameterStore store(4);
  const auto w = make_fuseformer(store, "ff", 4, CaVariant::tj_ts, {});
  std::mt19937_64 rng(4);
  const Tensor a = random_map(rng, 2, 4), b = random_map(rng, 2, 4);
  const Tensor got = fuseformer(a, b, w, CaVariant::tj_ts, {});
  REQUIRE(got.shape() == Shape{4, 4});

  const Mat ra = rows(a), rb = rows(b);
  Mat seq = rows(w.cls);
  seq.insert(seq.end(), ra.begin(), ra.end());
  seq.insert(seq.end(), rb.begin(), rb.end());
  const Mat ts = block(seq, seq, w.sa);
  Mat cat(4);
  for (std::size_t i = 0; i < 4; ++i) {
    cat[i] = ra[i];
    cat[i].insert(cat[i].end(), rb[i].begin(), rb[i].end());
  }
  const Mat tj = affine(cat, w.join);
  const Mat out = block(tj, ts, w.ca);
  double err = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 4; ++c) err = std::max(err, std::abs(out[i][c] - got.at({i, c})));
  CHECK(err <= 1e-12);
}

TEST_CASE("fuseformer output has query length for every variant") {
  std::mt19937_64 rng(5);
  const Tensor a = random_map(rng, 2, 8), b = random_map(rng, 2, 8);
  for (auto v : all_ca_variants()) {
    nn::ParameterStore store(5);
    const auto w = make_fuseformer(store, "ff", 8, v, {});
    INFO(to_string(v));
    CHECK(fuseformer(a, b, w, v, {}).shape() == Shape{4, 8});
    CHECK(w.has_sim == computes_sim_token(v));
  }
  nn::ParameterStore store(6);
  const auto w = make_fuseformer(store, "ff", 8, CaVariant::no_ca, {});
  CHECK(bitwise(fuseformer(a, b, w, CaVariant::no_ca, {}), make_join_token(a, b, w.join)));
}

TEST_CASE("encoder and block shapes at paper scale") {
  NoGradGuard guard;
  ModelConfig c;
  c.image_size = 256;
  c.feature_size = 8;
  c.backbone_channels = 2048;
  c.validate();
  nn::ParameterStore store(7);
  const auto w = make_weights(store, c);
  CHECK(w.eablock.reduce.weight.shape() == Shape{512, 128});
  CHECK(w.heads[0].heatmap.weight.dim(1) == 8 * 21);
  std::mt19937_64 rng(7);
  const Tensor img = random_map(rng, 256, 3);
  const auto f = encode(img, w.encoder, c);
  CHECK(f[0].shape() == Shape{8, 8, 512});
  CHECK(f[1].shape() == Shape{8, 8, 512});
  CHECK_FALSE(bitwise(f[0], f[1]));
}

TEST_CASE("desk forward") {
  config::RunConfig cfg;
  const auto sample = synth::generate(3, 1, cfg.data.synth).front();
  const EANet net(cfg.model, 0);
  NetOutputs out;
  {
    NoGradGuard guard;
    out = net.forward(sample.image, true);
  }
  for (const auto* h : {&out.left, &out.right}) {
    CHECK(h->theta.numel() == 48);
    CHECK(h->beta.numel() == 10);
    CHECK(h->joints25.shape() == Shape{21, 3});
    CHECK(h->vertices.shape() == Shape{hand::kVertices, 3});
    for (std::size_t j = 0; j < 21; ++j) {
      CHECK(h->joints25.at({j, 0}) >= 0.0);
      CHECK(h->joints25.at({j, 0}) <= 3.0);
      CHECK(h->joints25.at({j, 2}) >= 0.0);
      CHECK(h->joints25.at({j, 2}) <= 7.0);
    }
  }
  CHECK(out.rel_translation.numel() == 3);
  const auto& d = *out.diagnostics;
  CHECK(d.feature_left.shape() == Shape{4, 4, 32});
  CHECK(d.tokens.size() == 3);
  for (const auto& t : d.tokens) {
    CHECK(t.sim.shape() == Shape{33, 32});
    CHECK(t.join.shape() == Shape{16, 32});
  }
  for (const auto& a : d.attention) {
    for (std::size_t r = 0; r < a.dim(0); ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at({r, k});
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
  NoGradGuard guard;
  const auto again = net.forward(sample.image);
  CHECK(bitwise(again.left.vertices, out.left.vertices));
  CHECK(bitwise(again.rel_translation, out.rel_translation));
}

TEST_CASE("block variants") {
  config::RunConfig cfg;
  std::mt19937_64 rng(8);
  const Tensor fl = random_map(rng, 4, 32), fr = random_map(rng, 4, 32);
  NoGradGuard guard;
  nn::ParameterStore store(8);
  const auto w = make_weights(store, cfg.model);
  const auto a = ablation_block(fl, fr, w, cfg.model);
  const auto b = eablock(fl, fr, w.eablock, cfg.model);
  CHECK(bitwise(a[0], b[0]));
  CHECK(bitwise(a[1], b[1]));
  CHECK(a[0].shape() == Shape{4, 4, 40});
  for (auto kind : {BlockKind::sa_only, BlockKind::ca_only}) {
    auto mc = cfg.model;
    mc.block = kind;
    nn::ParameterStore s(8);
    const auto wb = make_weights(s, mc);
    const auto out = ablation_block(fl, fr, wb, mc);
    CHECK(out[0].shape() == Shape{4, 4, 40});
    const std::size_t block_params = s.parameter_count("baseline");
    nn::ParameterStore ref(8);
    make_weights(ref, cfg.model);
    const double budget = static_cast<double>(ref.parameter_count("eablock"));
    INFO(to_string(kind) << " " << block_params << " vs " << budget);
    CHECK(std::abs(block_params - budget) / budget < 0.1);
  }
}

TEST_CASE("zero final layers give template meshes") {
  config::RunConfig cfg;
  EANet net(cfg.model, 1);
  for (const auto& [name, t] : net.parameters().entries()) {
    if (name.find("pose2") != std::string::npos || name.find(".shape") != std::string::npos) {
      auto d = Tensor(t).data_mut();
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
  NoGradGuard guard;
  const auto sample = synth::generate(4, 1, cfg.data.synth).front();
  const auto out = net.forward(sample.image);
  const hand::HandPose zero;
  for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
    const auto& h = out.hand(side);
    for (std::size_t i = 0; i < 48; ++i) CHECK(h.theta[i] == 0.0);
    const auto mesh = hand::pose_hand(zero, side, hand::default_template());
    double err = 0.0;
    for (std::size_t i = 0; i < mesh.vertices.numel(); ++i)
      err = std::max(err, std::abs(mesh.vertices[i] - h.vertices[i]));
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("loss and gradient reachability") {
  config::RunConfig cfg;
  const auto data = synth::generate(5, 4, cfg.data.synth);
  EANet net(cfg.model, 2);
  const synth::Sample* two = nullptr;
  for (const auto& s : data)
    if (s.two_hands()) two = &s;
  REQUIRE(two != nullptr);

  const auto gt = [&] {
    NetOutputs o;
    for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
      auto& h = side == hand::Handedness::left ? o.left : o.right;
      const auto& t = two->targets(side);
      h = {t.joints25, t.theta, t.beta, t.vertices, t.joints3d};
    }
    o.rel_translation = two->rel_translation;
    return o;
  }();
  CHECK(compute_loss(gt, *two, cfg.lambdas).item() == 0.0);

  const auto out = net.forward(two->image);
  backward(compute_loss(out, *two, cfg.lambdas));
  for (const auto& [name, t] : net.parameters().entries()) {
    if (name.rfind("encoder.conv", 0) != 0) continue;
    double m = 0.0;
    for (double g : t.grad_tensor().data()) m = std::max(m, std::abs(g));
    INFO(name);
    CHECK(m > 0.0);
  }
}
