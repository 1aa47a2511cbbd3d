#include "eanet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace eanet::config {

namespace {

using eanet::ConfigError;

// Reads fields out of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  /// Unsigned integers reject negative and fractional values.
  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
    out = it->get<std::size_t>();
  }

  void get_u64(const char* key, std::uint64_t& out) {
    std::size_t v = out;
    get_size(key, v);
    out = v;
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

synth::SynthConfig read_synth(const Json& j, const std::string& path) {
  synth::SynthConfig c;
  ObjectReader r(j, path);
  r.get_size("image_size", c.image_size);
  r.get_size("heatmap_size", c.heatmap_size);
  r.get_size("depth_bins", c.depth_bins);
  r.get("depth_range", c.depth_range);
  r.get("single_hand_ratio", c.single_hand_ratio);
  r.get("symmetry_lo", c.symmetry_lo);
  r.get("symmetry_hi", c.symmetry_hi);
  r.get("camera_scale_lo", c.camera_scale_lo);
  r.get("camera_scale_hi", c.camera_scale_hi);
  r.get("camera_jitter", c.camera_jitter);
  r.get("splat_sigma", c.splat_sigma);
  r.get("splat_gain", c.splat_gain);
  r.get("pose_scale", c.pose_scale);
  r.finish();
  return c;
}

model::ModelConfig read_model(const Json& j, const std::string& path) {
  model::ModelConfig c;
  ObjectReader r(j, path);
  r.get_size("image_size", c.image_size);
  r.get_size("feature_size", c.feature_size);
  r.get_size("backbone_channels", c.backbone_channels);
  r.get_size("depth_bins", c.depth_bins);
  r.get_size("joints", c.joints);
  r.get_size("adaptation_stages", c.adaptation_stages);
  r.get_size("heads", c.heads);
  r.get("pre_norm", c.pre_norm);
  r.get("light", c.light);
  r.get_size("pose_hidden", c.pose_hidden);
  std::string block = model::to_string(c.block);
  std::string variant = model::to_string(c.ca_variant);
  r.get("block", block);
  r.get("ca_variant", variant);
  try {
    c.block = model::parse_block_kind(block);
    c.ca_variant = model::parse_ca_variant(variant);
  } catch (const ConfigError& e) {
    throw ConfigError(r.field("block/ca_variant") + ": " + e.what());
  }
  r.finish();
  return c;
}

model::LossWeights read_lambdas(const Json& j, const std::string& path) {
  model::LossWeights c;
  ObjectReader r(j, path);
  r.get("theta", c.theta);
  r.get("beta", c.beta);
  r.get("joints", c.joints);
  r.get("vertices", c.vertices);
  r.get("rel_translation", c.rel_translation);
  r.finish();
  return c;
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

Json to_json(const synth::SynthConfig& c) {
  return Json{{"image_size", c.image_size},
              {"heatmap_size", c.heatmap_size},
              {"depth_bins", c.depth_bins},
              {"depth_range", c.depth_range},
              {"single_hand_ratio", c.single_hand_ratio},
              {"symmetry_lo", c.symmetry_lo},
              {"symmetry_hi", c.symmetry_hi},
              {"camera_scale_lo", c.camera_scale_lo},
              {"camera_scale_hi", c.camera_scale_hi},
              {"camera_jitter", c.camera_jitter},
              {"splat_sigma", c.splat_sigma},
              {"splat_gain", c.splat_gain},
              {"pose_scale", c.pose_scale}};
}

Json to_json(const model::ModelConfig& c) {
  return Json{{"image_size", c.image_size},
              {"feature_size", c.feature_size},
              {"backbone_channels", c.backbone_channels},
              {"depth_bins", c.depth_bins},
              {"joints", c.joints},
              {"adaptation_stages", c.adaptation_stages},
              {"heads", c.heads},
              {"pre_norm", c.pre_norm},
              {"light", c.light},
              {"pose_hidden", c.pose_hidden},
              {"block", model::to_string(c.block)},
              {"ca_variant", model::to_string(c.ca_variant)}};
}

Json to_json(const model::LossWeights& c) {
  return Json{{"theta", c.theta},
              {"beta", c.beta},
              {"joints", c.joints},
              {"vertices", c.vertices},
              {"rel_translation", c.rel_translation}};
}

Json to_json(const RunConfig& c) {
  Json data{{"synth", to_json(c.data.synth)},
            {"train_count", c.data.train_count},
            {"val_count", c.data.val_count},
            {"seed", c.data.seed},
            {"sweep_levels", c.data.sweep_levels}};
  Json train{{"epochs", c.train.epochs},
             {"batch_size", c.train.batch_size},
             {"lr", c.train.lr},
             {"anneal_at", c.train.anneal_at},
             {"anneal_factor", c.train.anneal_factor},
             {"seed", c.train.seed},
             {"overfit_samples", c.train.overfit_samples},
             {"overfit_steps", c.train.overfit_steps},
             {"overfit_lr", c.train.overfit_lr},
             {"overfit_anneal_at", c.train.overfit_anneal_at}};
  Json ablation{{"variants", c.ablation.variants}, {"seeds", c.ablation.seeds}};
  return Json{{"model", to_json(c.model)},
              {"data", data},
              {"train", train},
              {"lambdas", to_json(c.lambdas)},
              {"ablation", ablation},
              {"out_dir", c.out_dir}};
}

synth::SynthConfig synth_from_json(const Json& j) { return read_synth(j, "synth"); }

model::ModelConfig model_from_json(const Json& j) { return read_model(j, "model"); }

RunConfig run_from_json(const Json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  if (const Json* m = r.child("model")) c.model = read_model(*m, "model");
  if (const Json* d = r.child("data")) {
    ObjectReader dr(*d, "data");
    if (const Json* s = dr.child("synth")) c.data.synth = read_synth(*s, "data.synth");
    dr.get_size("train_count", c.data.train_count);
    dr.get_size("val_count", c.data.val_count);
    dr.get_u64("seed", c.data.seed);
    dr.get("sweep_levels", c.data.sweep_levels);
    dr.finish();
  }
  if (const Json* t = r.child("train")) {
    ObjectReader tr(*t, "train");
    tr.get_size("epochs", c.train.epochs);
    tr.get_size("batch_size", c.train.batch_size);
    tr.get("lr", c.train.lr);
    tr.get("anneal_at", c.train.anneal_at);
    tr.get("anneal_factor", c.train.anneal_factor);
    tr.get_u64("seed", c.train.seed);
    tr.get_size("overfit_samples", c.train.overfit_samples);
    tr.get_size("overfit_steps", c.train.overfit_steps);
    tr.get("overfit_lr", c.train.overfit_lr);
    tr.get("overfit_anneal_at", c.train.overfit_anneal_at);
    tr.finish();
  }
  if (const Json* l = r.child("lambdas")) c.lambdas = read_lambdas(*l, "lambdas");
  if (const Json* a = r.child("ablation")) {
    ObjectReader ar(*a, "ablation");
    ar.get("variants", c.ablation.variants);
    ar.get("seeds", c.ablation.seeds);
    ar.finish();
  }
  r.get("out_dir", c.out_dir);
  r.finish();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  require(data.synth.image_size == model.image_size, "data.synth.image_size",
          "must equal model.image_size");
  require(data.synth.heatmap_size == model.feature_size, "data.synth.heatmap_size",
          "must equal model.feature_size");
  require(data.synth.depth_bins == model.depth_bins, "data.synth.depth_bins",
          "must equal model.depth_bins");
  require(data.synth.symmetry_lo <= data.synth.symmetry_hi, "data.synth.symmetry_lo",
          "must not exceed symmetry_hi");
  require(data.synth.single_hand_ratio >= 0.0 && data.synth.single_hand_ratio <= 1.0,
          "data.synth.single_hand_ratio", "must lie in [0, 1]");
  for (double s : data.sweep_levels) {
    require(s >= 0.0 && s <= 1.0, "data.sweep_levels", "levels must lie in [0, 1]");
  }
  require(train.batch_size > 0, "train.batch_size", "must be positive");
  require(train.lr > 0.0, "train.lr", "must be positive");
  require(train.overfit_lr > 0.0, "train.overfit_lr", "must be positive");
  require(train.anneal_factor > 0.0, "train.anneal_factor", "must be positive");
  for (double f : train.anneal_at) {
    require(f > 0.0 && f < 1.0, "train.anneal_at", "fractions must lie in (0, 1)");
  }
  for (double f : train.overfit_anneal_at) {
    require(f > 0.0 && f < 1.0, "train.overfit_anneal_at", "fractions must lie in (0, 1)");
  }
  require(train.overfit_samples > 0, "train.overfit_samples", "must be positive");
  require(!ablation.seeds.empty(), "ablation.seeds", "must not be empty");
  require(!ablation.variants.empty(), "ablation.variants", "must not be empty");
  for (const auto& v : ablation.variants) {
    model::ModelConfig probe = model;
    apply_variant(probe, v);
  }
  const double lambda_values[] = {lambdas.theta, lambdas.beta, lambdas.joints, lambdas.vertices,
                                  lambdas.rel_translation};
  for (double l : lambda_values) require(l >= 0.0, "lambdas", "weights must be non-negative");
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_from_json(j);
}

void save(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open " + path.string());
  out << to_json(c).dump(2) << '\n';
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

std::optional<std::string> first_difference(const model::ModelConfig& a,
                                            const model::ModelConfig& b) {
  const Json ja = to_json(a);
  const Json jb = to_json(b);
  for (auto it = ja.begin(); it != ja.end(); ++it) {
    if (jb.at(it.key()) != it.value()) return "model." + it.key();
  }
  return std::nullopt;
}

void apply_variant(model::ModelConfig& c, const std::string& id) {
  for (auto kind : {model::BlockKind::fuseformer, model::BlockKind::sa_only,
                    model::BlockKind::ca_only}) {
    if (id == model::to_string(kind)) {
      c.block = kind;
      c.ca_variant = model::CaVariant::tj_ts;
      return;
    }
  }
  try {
    c.ca_variant = model::parse_ca_variant(id);
  } catch (const ConfigError&) {
    throw ConfigError("variant: unknown id '" + id + "'");
  }
  c.block = model::BlockKind::fuseformer;
}

std::string variant_id(const model::ModelConfig& c) {
  if (c.block != model::BlockKind::fuseformer) return model::to_string(c.block);
  if (c.ca_variant == model::CaVariant::tj_ts) return model::to_string(c.block);
  return model::to_string(c.ca_variant);
}

}  // namespace eanet::config
