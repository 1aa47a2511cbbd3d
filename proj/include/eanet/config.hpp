#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eanet/model.hpp"
#include "eanet/synth.hpp"

namespace eanet::config {

using Json = nlohmann::ordered_json;

struct DataConfig {
  synth::SynthConfig synth;
  std::size_t train_count = 256;
  std::size_t val_count = 64;
  std::uint64_t seed = 1;
  /// Symmetry levels of the per-level validation files.
  std::vector<double> sweep_levels = {0.0, 0.25, 0.5, 0.75, 1.0};

  bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  /// Fractions of the total step count at which the rate is multiplied by
  /// anneal_factor.
  std::vector<double> anneal_at = {1.0 / 3.0, 1.0 / 2.0};
  double anneal_factor = 0.1;
  std::uint64_t seed = 0;
  std::size_t overfit_samples = 8;
  std::size_t overfit_steps = 500;
  double overfit_lr = 3e-3;
  std::vector<double> overfit_anneal_at = {0.8};

  bool operator==(const TrainConfig&) const = default;
};

struct AblationConfig {
  /// Block kinds (fuseformer, sa_only, ca_only) or CA variant ids.
  std::vector<std::string> variants = {"sa_only", "ca_only", "fuseformer"};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};

  bool operator==(const AblationConfig&) const = default;
};

struct RunConfig {
  model::ModelConfig model;
  DataConfig data;
  TrainConfig train;
  model::LossWeights lambdas;
  AblationConfig ablation;
  std::string out_dir = "runs";

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

Json to_json(const synth::SynthConfig& c);
Json to_json(const model::ModelConfig& c);
Json to_json(const model::LossWeights& c);
Json to_json(const RunConfig& c);

/// Missing keys keep their defaults; unknown keys and wrong types raise
/// ConfigError with the dotted key path.
synth::SynthConfig synth_from_json(const Json& j);
model::ModelConfig model_from_json(const Json& j);
RunConfig run_from_json(const Json& j);

RunConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const RunConfig& c);

/// Name of the first field that differs, if any.
std::optional<std::string> first_difference(const model::ModelConfig& a,
                                            const model::ModelConfig& b);

/// Applies a variant id: a block kind selects that block with the default
/// CA assignment; a CA variant id selects the FuseFormer block with it.
void apply_variant(model::ModelConfig& c, const std::string& id);
/// Canonical id of the block/variant pair in a model config.
std::string variant_id(const model::ModelConfig& c);

}  // namespace eanet::config
