#include "eanet/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <utility>

#include "eanet/hand_model.hpp"
#include "eanet/model.hpp"
#include "eanet/nn.hpp"
#include "eanet/ops.hpp"
#include "eanet/synth.hpp"

namespace eanet::gradcheck {

namespace {

using Probe = std::pair<std::size_t, std::size_t>;  // (input, flat coordinate)

GradCheckResult check_probes(const std::function<Tensor()>& fn, std::vector<Tensor>& inputs,
                             const std::vector<Probe>& probes, double step) {
  for (auto& t : inputs) {
    if (!t.is_leaf() || !t.requires_grad()) {
      throw UsageError("grad_check: inputs must be leaves that require grad");
    }
    t.zero_grad();
  }
  Tensor out = fn();
  if (out.numel() != 1) throw UsageError("grad_check: fn must be scalar-valued");
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  GradCheckResult result;
  NoGradGuard guard;
  for (const auto& [i, k] : probes) {
    auto values = inputs[i].data_mut();
    const double saved = values[k];
    values[k] = saved + step;
    const double plus = fn().item();
    values[k] = saved - step;
    const double minus = fn().item();
    values[k] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double a = analytic[i][k];
    if (!std::isfinite(numeric) || !std::isfinite(a)) {
      throw NumericError("grad_check: non-finite gradient estimate");
    }
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, rel);
    result.max_abs_grad = std::max(result.max_abs_grad, std::abs(a));
    ++result.probes;
  }
  for (auto& t : inputs) t.zero_grad();
  return result;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                           std::size_t probes, double step, std::uint64_t seed) {
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  std::vector<Probe> chosen;
  auto locate = [&](std::size_t flat) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (flat < inputs[i].numel()) return Probe{i, flat};
      flat -= inputs[i].numel();
    }
    return Probe{0, 0};
  };
  if (probes == 0 || probes >= total) {
    for (std::size_t f = 0; f < total; ++f) chosen.push_back(locate(f));
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t p = 0; p < probes; ++p) chosen.push_back(locate(pick(rng)));
  }
  return check_probes(fn, inputs, chosen, step);
}

namespace {

class Fixtures {
 public:
  explicit Fixtures(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return Tensor(std::move(shape), std::move(v), true);
  }

  /// sum(out * R) with a fixed random R, so every output coordinate matters.
  Tensor weigh(const Tensor& out) {
    auto it = masks_.find(out.shape());
    if (it == masks_.end()) {
      Tensor r = uniform(out.shape());
      r.set_requires_grad(false);
      it = masks_.emplace(out.shape(), r).first;
    }
    return ops::sum(ops::mul(out, it->second));
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::map<Shape, Tensor> masks_;
};

// y = x^2 with a backward rule that is off by 1%.
Tensor corrupted_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return detail::make_result(x.shape(), std::move(out), {x}, "corrupted_square",
                             [](detail::Node& self) {
                               auto& in = *self.inputs[0];
                               if (!in.requires_grad) return;
                               auto& g = in.ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 g[i] += 2.02 * in.data[i] * self.grad[i];
                               }
                             });
}

struct Case {
  std::string name;
  std::function<GradCheckResult(Fixtures&, double)> run;
};

template <typename Build>
Case unary(std::string name, Shape shape, Build build, std::size_t probes = 0) {
  return {std::move(name), [shape, build, probes](Fixtures& fx, double step) {
            Tensor x = fx.uniform(shape);
            return grad_check([&] { return fx.weigh(build(x)); }, {x}, probes, step);
          }};
}

template <typename Build>
Case binary(std::string name, Shape sa, Shape sb, Build build, std::size_t probes = 0) {
  return {std::move(name), [sa, sb, build, probes](Fixtures& fx, double step) {
            Tensor a = fx.uniform(sa);
            Tensor b = fx.uniform(sb);
            return grad_check([&] { return fx.weigh(build(a, b)); }, {a, b}, probes, step);
          }};
}

synth::Sample probe_sample(std::size_t image_size, std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.image_size = image_size;
  sc.heatmap_size = image_size / 16;
  sc.single_hand_ratio = 0.0;
  sc.camera_scale_lo = sc.camera_scale_hi = 120.0 * static_cast<double>(image_size) / 64.0;
  return synth::make_sample(synth::sample_scene(seed, sc), sc);
}

// Per input tensor, `per_tensor` probes, each the largest-gradient of
// `candidates` random coordinates. Coordinates whose gradient sits below the
// roundoff floor of the difference quotient cannot be verified by it.
std::vector<Probe> resolvable_probes(const std::function<Tensor()>& fn,
                                     std::vector<Tensor>& inputs, std::size_t per_tensor,
                                     std::size_t candidates, std::uint64_t seed) {
  for (auto& t : inputs) t.zero_grad();
  backward(fn());
  std::mt19937_64 rng(seed);
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, inputs[i].numel() - 1);
    auto g = inputs[i].grad();
    for (std::size_t p = 0; p < per_tensor; ++p) {
      std::size_t best = pick(rng);
      for (std::size_t c = 1; c < candidates; ++c) {
        const std::size_t k = pick(rng);
        if (!g.empty() && std::abs(g[k]) > std::abs(g[best])) best = k;
      }
      probes.emplace_back(i, best);
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return probes;
}

// Rescales a layer so its output on the probe input has unit RMS.
void unit_rms(const Tensor& out, const nn::LinearWeights& w) {
  double sq = 0.0;
  for (double v : out.data()) sq += v * v;
  const double gain = 1.0 / std::sqrt(sq / static_cast<double>(out.numel()));
  for (Tensor t : {w.weight, w.bias}) {
    for (double& v : t.data_mut()) v *= gain;
  }
}

GradCheckResult end_to_end(double step, std::uint64_t seed) {
  model::ModelConfig mc;
  model::EANet net(mc, seed);
  const synth::Sample sample = probe_sample(mc.image_size, seed + 1);
  // At the default initialization every attention is uniform to ~1e-5 and all
  // joint tokens coincide, so the q/k gradients sit far below what central
  // differences resolve. The probe point redraws weights as N(0, 1/fan_in) and
  // biases from U(-0.1, 0.1), then scales each encoder layer to unit RMS
  // pre-activations on the probe image.
  std::mt19937_64 draw(seed + 3);
  for (Tensor t : net.parameters().tensors()) {
    const Shape& s = t.shape();
    std::size_t fan_in = 0;
    if (s.size() == 2) fan_in = s[0];
    if (s.size() == 4) fan_in = s[0] * s[1] * s[2];
    std::normal_distribution<double> normal(0.0, fan_in ? 1.0 / std::sqrt(fan_in) : 1.0);
    std::uniform_real_distribution<double> small(-0.1, 0.1);
    for (double& v : t.data_mut()) v = fan_in ? normal(draw) : small(draw);
  }
  {
    NoGradGuard guard;
    const auto& enc = net.weights().encoder;
    Tensor x = sample.image;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& cw = enc.conv[i];
      unit_rms(ops::conv2d(x, cw.weight, cw.bias, enc.stride[i], enc.pad[i]), cw);
      x = ops::gelu(ops::conv2d(x, cw.weight, cw.bias, enc.stride[i], enc.pad[i]));
    }
    unit_rms(ops::conv1x1(x, enc.split_left.weight, enc.split_left.bias), enc.split_left);
    unit_rms(ops::conv1x1(x, enc.split_right.weight, enc.split_right.bias), enc.split_right);
  }
  // A fixed random projection of every output. The L1 training loss has kinks
  // that a difference quotient can straddle; it is checked as a primitive.
  Fixtures fx(seed + 9);
  auto fn = [&] {
    auto o = net.forward(sample.image);
    Tensor acc = fx.weigh(o.rel_translation);
    for (const auto* h : {&o.left, &o.right}) {
      acc = ops::add(acc, fx.weigh(h->joints25));
      acc = ops::add(acc, fx.weigh(h->theta));
      acc = ops::add(acc, fx.weigh(h->beta));
      acc = ops::add(acc, fx.weigh(h->vertices));
    }
    return acc;
  };
  // One probe in every parameter tensor, so every submodule is covered.
  std::vector<Tensor> params = net.parameters().tensors();
  auto probes = resolvable_probes(fn, params, 1, 8, seed + 2);
  return check_probes(fn, params, probes, step);
}

std::vector<Case> cases() {
  using namespace eanet::ops;
  std::vector<Case> c;
  c.push_back(binary("add", {3, 4}, {3, 4}, [](auto& a, auto& b) { return add(a, b); }));
  c.push_back(binary("sub", {3, 4}, {3, 4}, [](auto& a, auto& b) { return sub(a, b); }));
  c.push_back(binary("mul", {3, 4}, {3, 4}, [](auto& a, auto& b) { return mul(a, b); }));
  c.push_back(unary("scale", {3, 4}, [](auto& x) { return scale(x, -1.7); }));
  c.push_back(binary("add_bias", {2, 3, 4}, {4}, [](auto& a, auto& b) { return add_bias(a, b); }));
  c.push_back(unary("gelu", {5, 4}, [](auto& x) { return gelu(ops::scale(x, 3.0)); }));
  c.push_back(unary("sum", {3, 4}, [](auto& x) { return ops::sum(ops::mul(x, x)); }));
  c.push_back(unary("mean", {3, 4}, [](auto& x) { return ops::mean(ops::mul(x, x)); }));
  c.push_back(unary("reshape", {3, 4}, [](auto& x) { return reshape(x, {2, 6}); }));
  c.push_back(unary("transpose", {3, 4}, [](auto& x) { return transpose(x); }));
  c.push_back(binary("concat", {2, 3}, {2, 2}, [](auto& a, auto& b) { return concat({a, b}, 1); }));
  c.push_back(unary("slice", {4, 5}, [](auto& x) { return slice(x, 1, 1, 4); }));
  c.push_back(unary("index_select", {4, 3}, [](auto& x) { return index_select(x, {2, 0, 2, 3}); }));
  c.push_back(binary("matmul", {3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
  c.push_back(binary("bmm", {2, 3, 4}, {2, 4, 2}, [](auto& a, auto& b) { return bmm(a, b); }));
  c.push_back({"linear", [](Fixtures& fx, double step) {
                 Tensor x = fx.uniform({2, 3, 4});
                 Tensor w = fx.uniform({4, 5});
                 Tensor b = fx.uniform({5});
                 return grad_check([&] { return fx.weigh(linear(x, w, b)); }, {x, w, b}, 0, step);
               }});
  c.push_back({"conv1x1", [](Fixtures& fx, double step) {
                 Tensor x = fx.uniform({3, 3, 4});
                 Tensor w = fx.uniform({4, 5});
                 Tensor b = fx.uniform({5});
                 return grad_check([&] { return fx.weigh(conv1x1(x, w, b)); }, {x, w, b}, 0, step);
               }});
  c.push_back(unary("im2col", {5, 5, 2}, [](auto& x) { return im2col(x, 3, 2, 1); }));
  c.push_back({"conv2d", [](Fixtures& fx, double step) {
                 Tensor x = fx.uniform({6, 6, 3});
                 Tensor w = fx.uniform({3, 3, 3, 4});
                 Tensor b = fx.uniform({4});
                 return grad_check([&] { return fx.weigh(conv2d(x, w, b, 2, 1)); }, {x, w, b}, 0,
                                   step);
               }});
  c.push_back(unary("softmax_axis0", {4, 5}, [](auto& x) { return softmax(ops::scale(x, 2.0), 0); }));
  c.push_back(unary("softmax_axis1", {4, 5}, [](auto& x) { return softmax(ops::scale(x, 2.0), 1); }));
  c.push_back({"layer_norm", [](Fixtures& fx, double step) {
                 Tensor x = fx.uniform({4, 6});
                 Tensor g = fx.uniform({6});
                 Tensor b = fx.uniform({6});
                 return grad_check([&] { return fx.weigh(layer_norm(x, g, b)); }, {x, g, b}, 0,
                                   step);
               }});
  for (std::size_t heads : {1, 2}) {
    c.push_back({"attention_h" + std::to_string(heads), [heads](Fixtures& fx, double step) {
                   Tensor q = fx.uniform({3, 4});
                   Tensor k = fx.uniform({5, 4});
                   Tensor v = fx.uniform({5, 4});
                   return grad_check([&] { return fx.weigh(attention(q, k, v, heads)); },
                                     {q, k, v}, 0, step);
                 }});
  }
  c.push_back(unary("soft_argmax_2_5d", {3, 4, 2, 2},
                    [](auto& x) { return soft_argmax_2_5d(ops::scale(x, 3.0)); }));
  c.push_back({"bilinear_sample", [](Fixtures& fx, double step) {
                 Tensor f = fx.uniform({4, 5, 3});
                 // Interior, non-integer coordinates keep the map smooth locally.
                 Tensor xy = fx.uniform({6, 2}, 0.2, 0.8);
                 auto shift = xy.data_mut();
                 for (std::size_t i = 0; i < shift.size(); ++i) shift[i] += (i % 2 == 0) ? 2.0 : 1.0;
                 return grad_check([&] { return fx.weigh(bilinear_sample(f, xy)); }, {f, xy}, 0,
                                   step);
               }});
  c.push_back(unary("global_average_pool", {3, 4, 2}, [](auto& x) { return global_average_pool(x); }));
  c.push_back(binary("l1_loss", {3, 4}, {3, 4}, [](auto& a, auto& b) { return l1_loss(a, b); }));
  c.push_back(unary("rodrigues", {4, 3}, [](auto& x) { return rodrigues(ops::scale(x, 1.5)); }));
  c.push_back(unary("rodrigues_small_angle", {4, 3}, [](auto& x) { return rodrigues(ops::scale(x, 0.02)); }));

  c.push_back({"forward_kinematics", [](Fixtures& fx, double step) {
                 Tensor theta = fx.uniform({hand::kPoseDim}, -0.6, 0.6);
                 Tensor beta = fx.uniform({hand::kShapeDim});
                 const auto& t = hand::default_template();
                 return grad_check([&] { return fx.weigh(hand::forward_kinematics(theta, beta, t)); },
                                   {theta, beta}, 0, step);
               }});
  c.push_back({"skin", [](Fixtures& fx, double step) {
                 Tensor theta = fx.uniform({hand::kPoseDim}, -0.6, 0.6);
                 Tensor beta = fx.uniform({hand::kShapeDim});
                 const auto& t = hand::default_template();
                 return grad_check(
                     [&] {
                       return fx.weigh(hand::pose_hand(theta, beta, hand::Handedness::left, t).vertices);
                     },
                     {theta, beta}, 0, step);
               }});
  c.push_back({"attention_block", [](Fixtures& fx, double step) {
                 nn::ParameterStore store(fx.rng()());
                 auto w = nn::make_attention_block(store, "b", 4, 16, {});
                 for (auto& p : store.tensors()) {
                   Tensor r = fx.uniform(p.shape(), -0.5, 0.5);
                   std::copy(r.data().begin(), r.data().end(), p.data_mut().begin());
                 }
                 Tensor q = fx.uniform({3, 4});
                 Tensor kv = fx.uniform({5, 4});
                 std::vector<Tensor> inputs = store.tensors();
                 inputs.push_back(q);
                 inputs.push_back(kv);
                 return grad_check([&] { return fx.weigh(nn::attention_block(q, kv, w, {})); },
                                   inputs, 0, step);
               }});
  c.push_back({"eablock", [](Fixtures& fx, double step) {
                 model::ModelConfig mc;
                 mc.image_size = 16;
                 mc.feature_size = 2;
                 mc.backbone_channels = 32;
                 nn::ParameterStore store(fx.rng()());
                 model::EABlockWeights w;
                 const auto c = mc.channels();
                 w.extract = model::make_fuseformer(store, "x", c, mc.ca_variant, {});
                 w.adapt.push_back({model::make_fuseformer(store, "l", c, mc.ca_variant, {}),
                                    model::make_fuseformer(store, "r", c, mc.ca_variant, {})});
                 w.reduce = nn::make_linear(store, "reduce", c, c / 4);
                 for (auto& p : store.tensors()) {
                   Tensor r = fx.uniform(p.shape(), -0.4, 0.4);
                   std::copy(r.data().begin(), r.data().end(), p.data_mut().begin());
                 }
                 Tensor fl = fx.uniform({2, 2, c});
                 Tensor fr = fx.uniform({2, 2, c});
                 std::vector<Tensor> inputs = store.tensors();
                 inputs.push_back(fl);
                 inputs.push_back(fr);
                 auto fn = [&] {
                   auto out = model::eablock(fl, fr, w, mc);
                   return ops::add(fx.weigh(out[0]), fx.weigh(out[1]));
                 };
                 auto probes = resolvable_probes(fn, inputs, 4, 4, 11);
                 return check_probes(fn, inputs, probes, step);
               }});
  c.push_back({"end_to_end", [](Fixtures& fx, double step) { return end_to_end(step, fx.rng()()); }});
  return c;
}

}  // namespace

std::vector<SuiteRow> run_suite(const SuiteOptions& options) {
  std::vector<Case> all = cases();
  if (options.corrupt_fixture) {
    all.push_back(unary("corrupted_fixture", {3, 4}, [](auto& x) { return corrupted_square(x); }));
  }
  std::vector<SuiteRow> rows;
  for (std::size_t i = 0; i < all.size(); ++i) {
    Fixtures fx(options.seed * 1000003 + i);
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckResult r = all[i].run(fx, options.step);
    const auto t1 = std::chrono::steady_clock::now();
    SuiteRow row;
    row.name = all[i].name;
    row.max_rel_error = r.max_rel_error;
    row.probes = r.probes;
    row.seconds = std::chrono::duration<double>(t1 - t0).count();
    row.pass = r.max_rel_error < options.threshold;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace eanet::gradcheck
