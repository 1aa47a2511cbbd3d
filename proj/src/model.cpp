#include "eanet/model.hpp"

#include <cmath>
#include <cstdlib>

#include "eanet/ops.hpp"
#include "eanet/synth.hpp"

namespace eanet::model {

namespace {

constexpr std::size_t kConv1Channels = 16;
constexpr std::size_t kConv2Channels = 32;

struct VariantName {
  CaVariant variant;
  const char* id;
};

const VariantName kVariantNames[] = {
    {CaVariant::no_ca, "no_ca"},     {CaVariant::tj_hands, "tj_hands"},
    {CaVariant::tj_tj, "tj_tj"},     {CaVariant::ts_ts, "ts_ts"},
    {CaVariant::ts_tj, "ts_tj"},     {CaVariant::tj_ts, "tj_ts"},
};

bool uses_sim(CaVariant v) {
  return v == CaVariant::ts_ts || v == CaVariant::ts_tj || v == CaVariant::tj_ts;
}

bool query_is_sim(CaVariant v) { return v == CaVariant::ts_ts || v == CaVariant::ts_tj; }

std::size_t linear_count(std::size_t cin, std::size_t cout) { return cin * cout + cout; }

std::size_t block_count(std::size_t c, std::size_t hidden, bool pre_norm) {
  return 3 * linear_count(c, c) - c + linear_count(c, hidden) + linear_count(hidden, c) +
         (pre_norm ? 6 * c : 0);
}

Tensor tokens(const Tensor& f) {
  if (f.rank() != 3) {
    throw DimensionError("expected an [h, w, c] feature map, got " + shape_str(f.shape()));
  }
  return ops::reshape(f, {f.dim(0) * f.dim(1), f.dim(2)});
}

void check_pair(const Tensor& fa, const Tensor& fb, const char* where) {
  if (fa.shape() != fb.shape() || fa.rank() != 3) {
    throw DimensionError(std::string(where) + ": feature shapes differ, " +
                         shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
  }
}

std::vector<Tensor>* maps_of(Diagnostics* diag) { return diag ? &diag->attention : nullptr; }

void name_new_maps(Diagnostics* diag, std::size_t before, const std::string& name) {
  if (!diag) return;
  while (diag->attention_names.size() < diag->attention.size()) {
    const std::size_t k = diag->attention_names.size() - before;
    diag->attention_names.push_back(k == 0 ? name : name + "." + std::to_string(k));
  }
}

Tensor attend(const Tensor& query, const Tensor& context, const nn::AttentionBlockWeights& w,
              const nn::BlockOptions& options, Diagnostics* diag, const std::string& name) {
  const std::size_t before = diag ? diag->attention.size() : 0;
  Tensor out = nn::attention_block(query, context, w, options, maps_of(diag));
  name_new_maps(diag, before, name);
  return out;
}

/// F* = concat(F, reduce(adapted)) along channels.
Tensor enhance(const Tensor& feature, const Tensor& adapted_tokens, const nn::LinearWeights& reduce) {
  Tensor reduced = nn::apply(reduce, adapted_tokens);
  reduced = ops::reshape(reduced, {feature.dim(0), feature.dim(1), reduced.dim(1)});
  return ops::concat({feature, reduced}, 2);
}

nn::BlockOptions block_options(const ModelConfig& c) { return {c.heads, c.pre_norm}; }

}  // namespace

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::fuseformer: return "fuseformer";
    case BlockKind::sa_only: return "sa_only";
    case BlockKind::ca_only: return "ca_only";
  }
  return "?";
}

std::string to_string(CaVariant variant) {
  for (const auto& v : kVariantNames) {
    if (v.variant == variant) return v.id;
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& id) {
  if (id == "fuseformer") return BlockKind::fuseformer;
  if (id == "sa_only") return BlockKind::sa_only;
  if (id == "ca_only") return BlockKind::ca_only;
  throw ConfigError("unknown block kind '" + id + "' (fuseformer, sa_only, ca_only)");
}

CaVariant parse_ca_variant(const std::string& id) {
  for (const auto& v : kVariantNames) {
    if (id == v.id) return v.variant;
  }
  throw ConfigError("unknown CA variant '" + id +
                    "' (no_ca, tj_hands, tj_tj, ts_ts, ts_tj, tj_ts)");
}

bool computes_sim_token(CaVariant variant) { return uses_sim(variant); }

const std::vector<CaVariant>& all_ca_variants() {
  static const std::vector<CaVariant> all = {CaVariant::no_ca, CaVariant::tj_hands,
                                             CaVariant::tj_tj, CaVariant::ts_ts,
                                             CaVariant::ts_tj, CaVariant::tj_ts};
  return all;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (feature_size == 0 || image_size % feature_size != 0) {
    fail("feature_size must divide image_size");
  }
  if ((image_size / feature_size) % 4 != 0 || (image_size / feature_size) < 4) {
    fail("image_size / feature_size must be a multiple of 4");
  }
  if (channels() < 4 || channels() % 4 != 0) fail("backbone_channels yields an invalid width");
  if (channels() % heads != 0) fail("heads must divide the token width");
  if (enhanced_channels() % heads != 0) fail("heads must divide the enhanced width");
  if (depth_bins == 0) fail("depth_bins must be positive");
  if (joints != hand::kJoints) fail("joints must be 21 to match the hand model");
  if (pose_hidden == 0) fail("pose_hidden must be positive");
}

std::size_t fuseformer_parameter_count(std::size_t c, CaVariant variant) {
  std::size_t n = linear_count(2 * c, c);
  if (uses_sim(variant)) n += c + block_count(c, 4 * c, false);
  if (variant != CaVariant::no_ca) n += block_count(c, 4 * c, false);
  return n;
}

std::size_t matched_baseline_hidden(const ModelConfig& config) {
  const std::size_t c = config.channels();
  const double target = static_cast<double>(
      fuseformer_parameter_count(c, CaVariant::tj_ts) * (1 + 2 * config.adaptation_stages));
  const std::size_t blocks = config.block == BlockKind::ca_only ? 2 : 1;
  // Per block: 3c^2 + 3c + hidden * (2c + 1).
  const double fixed = static_cast<double>(blocks * (3 * c * c + 3 * c));
  const double per_hidden = static_cast<double>(blocks * (2 * c + 1));
  const double h = std::round((target - fixed) / per_hidden);
  return h < 1.0 ? 1 : static_cast<std::size_t>(h);
}

FuseFormerWeights make_fuseformer(nn::ParameterStore& store, const std::string& name,
                                  std::size_t c, CaVariant variant,
                                  const nn::BlockOptions& options) {
  FuseFormerWeights w;
  w.join = nn::make_linear(store, name + ".join", 2 * c, c);
  if (uses_sim(variant)) {
    w.has_sim = true;
    w.cls = store.add(name + ".cls", {1, c}, nn::Init::normal(0.02));
    w.sa = nn::make_attention_block(store, name + ".sa", c, 4 * c, options);
  }
  if (variant != CaVariant::no_ca) {
    w.has_ca = true;
    w.ca = nn::make_attention_block(store, name + ".ca", c, 4 * c, options);
  }
  return w;
}

EANetWeights make_weights(nn::ParameterStore& store, const ModelConfig& config) {
  config.validate();
  const std::size_t c = config.channels();
  const std::size_t cs = config.enhanced_channels();
  const std::size_t big_c = config.backbone_channels;
  const auto opts = block_options(config);
  EANetWeights w;

  auto& enc = w.encoder;
  const std::size_t last_kernel = config.image_size / config.feature_size / 4;
  enc.kernel = {3, 3, last_kernel};
  enc.stride = {2, 2, last_kernel};
  enc.pad = {1, 1, 0};
  const std::array<std::size_t, 4> widths = {3, kConv1Channels, kConv2Channels, big_c};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = enc.kernel[i];
    const double he = std::sqrt(2.0 / static_cast<double>(k * k * widths[i]));
    const std::string name = "encoder.conv" + std::to_string(i + 1);
    enc.conv[i] = {store.add(name + ".weight", {k, k, widths[i], widths[i + 1]},
                             nn::Init::normal(he)),
                   store.add(name + ".bias", {widths[i + 1]}, nn::Init::zeros())};
  }
  const double split_std = std::sqrt(1.0 / static_cast<double>(big_c));
  enc.split_left = nn::make_linear(store, "encoder.split_left", big_c, c, split_std);
  enc.split_right = nn::make_linear(store, "encoder.split_right", big_c, c, split_std);

  if (config.block == BlockKind::fuseformer) {
    w.eablock.extract = make_fuseformer(store, "eablock.extract", c, config.ca_variant, opts);
    for (std::size_t s = 0; s < config.adaptation_stages; ++s) {
      const std::string stage = "eablock.adapt" + std::to_string(s + 1);
      w.eablock.adapt.push_back({make_fuseformer(store, stage + ".left", c, config.ca_variant, opts),
                                 make_fuseformer(store, stage + ".right", c, config.ca_variant, opts)});
    }
    w.eablock.reduce = nn::make_linear(store, "eablock.reduce", c, c / 4);
  } else {
    auto& b = w.baseline;
    b.hidden = matched_baseline_hidden(config);
    if (config.block == BlockKind::sa_only) {
      b.sa = nn::make_attention_block(store, "baseline.sa", c, b.hidden, opts);
    } else {
      b.ca[0] = nn::make_attention_block(store, "baseline.ca_left", c, b.hidden, opts);
      b.ca[1] = nn::make_attention_block(store, "baseline.ca_right", c, b.hidden, opts);
    }
    b.reduce = nn::make_linear(store, "baseline.reduce", c, c / 4);
  }

  const nn::BlockOptions head_opts = opts;
  for (std::size_t side = 0; side < 2; ++side) {
    const std::string name = side == 0 ? "head_left" : "head_right";
    auto& hw = w.heads[side];
    hw.heatmap = nn::make_linear(store, name + ".heatmap", cs, config.depth_bins * config.joints);
    hw.sjt = nn::make_attention_block(store, name + ".sjt", cs, 4 * cs, head_opts);
    hw.pose1 = nn::make_linear(store, name + ".pose1", config.joints * (cs + 3), config.pose_hidden);
    hw.pose2 = nn::make_linear(store, name + ".pose2", config.pose_hidden, hand::kPoseDim);
    hw.shape = nn::make_linear(store, name + ".shape", cs, hand::kShapeDim);
  }
  w.rel_translation = nn::make_linear(store, "rel_translation", 2 * cs, 3);
  return w;
}

std::array<Tensor, 2> encode(const Tensor& image, const EncoderWeights& w,
                             const ModelConfig& config) {
  if (image.rank() != 3 || image.dim(0) != config.image_size ||
      image.dim(1) != config.image_size || image.dim(2) != 3) {
    throw DimensionError("encode: expected a [" + std::to_string(config.image_size) + ", " +
                         std::to_string(config.image_size) + ", 3] image, got " +
                         shape_str(image.shape()));
  }
  Tensor x = image;
  for (std::size_t i = 0; i < 3; ++i) {
    x = ops::gelu(ops::conv2d(x, w.conv[i].weight, w.conv[i].bias, w.stride[i], w.pad[i]));
  }
  return {ops::conv1x1(x, w.split_left.weight, w.split_left.bias),
          ops::conv1x1(x, w.split_right.weight, w.split_right.bias)};
}

Tensor make_sim_token(const Tensor& fa, const Tensor& fb, const FuseFormerWeights& w,
                      const nn::BlockOptions& options, Diagnostics* diag) {
  check_pair(fa, fb, "make_sim_token");
  if (!w.has_sim) throw UsageError("make_sim_token: weights carry no SimToken path");
  Tensor t = ops::concat({w.cls, tokens(fa), tokens(fb)}, 0);
  return attend(t, t, w.sa, options, diag, "sim");
}

Tensor make_join_token(const Tensor& fa, const Tensor& fb, const nn::LinearWeights& fc) {
  check_pair(fa, fb, "make_join_token");
  return nn::apply(fc, tokens(ops::concat({fa, fb}, 2)));
}

Tensor fuseformer(const Tensor& fa, const Tensor& fb, const FuseFormerWeights& w,
                  CaVariant variant, const nn::BlockOptions& options, Diagnostics* diag) {
  check_pair(fa, fb, "fuseformer");
  const std::size_t hw = fa.dim(0) * fa.dim(1);
  Tensor tj = make_join_token(fa, fb, w.join);
  Tensor ts;
  if (uses_sim(variant)) ts = make_sim_token(fa, fb, w, options, diag);
  if (diag) diag->tokens.push_back({ts, tj});
  if (variant == CaVariant::no_ca) return tj;
  if (!w.has_ca) throw UsageError("fuseformer: weights carry no cross-attention");

  Tensor q;
  Tensor kv;
  switch (variant) {
    case CaVariant::tj_hands: q = tj; kv = ops::concat({tokens(fa), tokens(fb)}, 0); break;
    case CaVariant::tj_tj: q = tj; kv = tj; break;
    case CaVariant::ts_ts: q = ts; kv = ts; break;
    case CaVariant::ts_tj: q = ts; kv = tj; break;
    case CaVariant::tj_ts: q = tj; kv = ts; break;
    case CaVariant::no_ca: break;
  }
  Tensor out = attend(q, kv, w.ca, options, diag, "cross");
  if (!query_is_sim(variant)) return out;
  // A SimToken query yields l rows; drop the class row and average the halves.
  return ops::scale(ops::add(ops::slice(out, 0, 1, 1 + hw), ops::slice(out, 0, 1 + hw, 1 + 2 * hw)),
                    0.5);
}

std::array<Tensor, 2> eablock(const Tensor& fl, const Tensor& fr, const EABlockWeights& w,
                              const ModelConfig& config, Diagnostics* diag) {
  check_pair(fl, fr, "eablock");
  const auto opts = block_options(config);
  const Shape map_shape = fl.shape();
  Tensor inter = fuseformer(fl, fr, w.extract, config.ca_variant, opts, diag);
  std::array<Tensor, 2> adapted = {inter, inter};
  const std::array<Tensor, 2> features = {fl, fr};
  for (const auto& stage : w.adapt) {
    for (std::size_t side = 0; side < 2; ++side) {
      adapted[side] = fuseformer(features[side], ops::reshape(adapted[side], map_shape),
                                 stage[side], config.ca_variant, opts, diag);
    }
  }
  return {enhance(fl, adapted[0], w.reduce), enhance(fr, adapted[1], w.reduce)};
}

std::array<Tensor, 2> ablation_block(const Tensor& fl, const Tensor& fr,
                                     const EANetWeights& w, const ModelConfig& config,
                                     Diagnostics* diag) {
  check_pair(fl, fr, "ablation_block");
  const auto opts = block_options(config);
  switch (config.block) {
    case BlockKind::fuseformer:
      return eablock(fl, fr, w.eablock, config, diag);
    case BlockKind::sa_only: {
      const std::size_t hw = fl.dim(0) * fl.dim(1);
      Tensor t = ops::concat({tokens(fl), tokens(fr)}, 0);
      Tensor out = attend(t, t, w.baseline.sa, opts, diag, "baseline_sa");
      return {enhance(fl, ops::slice(out, 0, 0, hw), w.baseline.reduce),
              enhance(fr, ops::slice(out, 0, hw, 2 * hw), w.baseline.reduce)};
    }
    case BlockKind::ca_only: {
      Tensor tl = tokens(fl);
      Tensor tr = tokens(fr);
      Tensor left = attend(tl, tr, w.baseline.ca[0], opts, diag, "baseline_ca_left");
      Tensor right = attend(tr, tl, w.baseline.ca[1], opts, diag, "baseline_ca_right");
      return {enhance(fl, left, w.baseline.reduce), enhance(fr, right, w.baseline.reduce)};
    }
  }
  throw ConfigError("ablation_block: invalid block kind");
}

JointFeatures joint_feature_extract(const Tensor& enhanced, const HandHeadWeights& w,
                                    const ModelConfig& config) {
  if (enhanced.rank() != 3) {
    throw DimensionError("joint_feature_extract: expected [h, w, c*], got " +
                         shape_str(enhanced.shape()));
  }
  Tensor logits = ops::conv1x1(enhanced, w.heatmap.weight, w.heatmap.bias);
  logits = ops::reshape(logits, {enhanced.dim(0), enhanced.dim(1), config.depth_bins,
                                 logits.dim(2) / config.depth_bins});
  Tensor j25 = ops::soft_argmax_2_5d(logits);
  Tensor feats = ops::bilinear_sample(enhanced, ops::slice(j25, 1, 0, 2));
  return {j25, feats};
}

Tensor sjt(const Tensor& joint_features, const HandHeadWeights& w,
           const nn::BlockOptions& options, Diagnostics* diag) {
  return attend(joint_features, joint_features, w.sjt, options, diag, "sjt");
}

NetOutputs regress_outputs(const std::array<Tensor, 2>& enhanced,
                           const std::array<Tensor, 2>& joint_tokens,
                           const std::array<Tensor, 2>& joints25,
                           const EANetWeights& w, const ModelConfig& config) {
  (void)config;
  NetOutputs out;
  std::array<Tensor, 2> pooled;
  for (std::size_t side = 0; side < 2; ++side) {
    const auto& hw = w.heads[side];
    Tensor flat = ops::concat({joint_tokens[side], joints25[side]}, 1);
    flat = ops::reshape(flat, {1, flat.numel()});
    Tensor theta = nn::apply(hw.pose2, ops::gelu(nn::apply(hw.pose1, flat)));
    pooled[side] = ops::global_average_pool(enhanced[side]);
    Tensor beta = nn::apply(hw.shape, ops::reshape(pooled[side], {1, pooled[side].numel()}));
    HandOutputs& h = side == 0 ? out.left : out.right;
    h.joints25 = joints25[side];
    h.theta = ops::reshape(theta, {hand::kPoseDim});
    h.beta = ops::reshape(beta, {hand::kShapeDim});
    const auto handed = side == 0 ? hand::Handedness::left : hand::Handedness::right;
    hand::HandMesh mesh = hand::pose_hand(h.theta, h.beta, handed, hand::default_template());
    h.vertices = mesh.vertices;
    h.joints = mesh.joints;
  }
  Tensor both = ops::reshape(ops::concat({pooled[0], pooled[1]}, 0), {1, 2 * pooled[0].numel()});
  out.rel_translation = ops::reshape(nn::apply(w.rel_translation, both), {3});
  return out;
}

NetOutputs eanet_forward(const Tensor& image, const EANetWeights& w,
                         const ModelConfig& config, bool diagnostics) {
  std::optional<Diagnostics> diag;
  if (diagnostics) diag.emplace();
  Diagnostics* d = diag ? &*diag : nullptr;
  auto [fl, fr] = encode(image, w.encoder, config);
  if (d) {
    d->feature_left = fl;
    d->feature_right = fr;
  }
  const auto enhanced = ablation_block(fl, fr, w, config, d);
  std::array<Tensor, 2> j25;
  std::array<Tensor, 2> tokens_out;
  const auto opts = block_options(config);
  for (std::size_t side = 0; side < 2; ++side) {
    JointFeatures jf = joint_feature_extract(enhanced[side], w.heads[side], config);
    j25[side] = jf.joints25;
    tokens_out[side] = sjt(jf.features, w.heads[side], opts, d);
  }
  NetOutputs out = regress_outputs(enhanced, tokens_out, j25, w, config);
  out.diagnostics = std::move(diag);
  return out;
}

EANet::EANet(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), store_(seed), weights_(make_weights(store_, config_)) {}

NetOutputs EANet::forward(const Tensor& image, bool diagnostics) const {
  return eanet_forward(image, weights_, config_, diagnostics);
}

Tensor compute_loss(const NetOutputs& pred, const synth::Sample& gt, const LossWeights& lambdas) {
  std::vector<Tensor> terms;
  auto term = [&](double lambda, const Tensor& p, const Tensor& g) {
    if (lambda == 0.0) return;
    terms.push_back(ops::scale(ops::l1_loss(p, g), lambda));
  };
  for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
    const auto& t = gt.targets(side);
    if (!t.present) continue;
    const auto& p = pred.hand(side);
    term(lambdas.theta, p.theta, t.theta);
    term(lambdas.beta, p.beta, t.beta);
    term(lambdas.joints, p.joints25, t.joints25);
    term(lambdas.vertices, p.vertices, t.vertices);
  }
  if (gt.two_hands()) term(lambdas.rel_translation, pred.rel_translation, gt.rel_translation);
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(total, terms[i]);
  return total;
}

}  // namespace eanet::model
