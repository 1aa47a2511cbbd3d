#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eanet/hand_model.hpp"
#include "eanet/nn.hpp"
#include "eanet/tensor.hpp"

namespace eanet {

namespace synth {
struct Sample;
}

/// Invalid configuration value or variant id.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace model {

enum class BlockKind { fuseformer, sa_only, ca_only };

/// (query | key-value) assignment of the FuseFormer cross-attention.
enum class CaVariant {
  no_ca,     // t_J used directly as the interaction feature
  tj_hands,  // q = t_J, kv = [F_a; F_b]
  tj_tj,
  ts_ts,
  ts_tj,
  tj_ts,  // the default
};

std::string to_string(BlockKind kind);
std::string to_string(CaVariant variant);
BlockKind parse_block_kind(const std::string& id);
CaVariant parse_ca_variant(const std::string& id);
const std::vector<CaVariant>& all_ca_variants();
/// Whether the variant builds a SimToken.
bool computes_sim_token(CaVariant variant);

struct ModelConfig {
  std::size_t image_size = 64;         // H = W
  std::size_t feature_size = 4;        // h = w
  std::size_t backbone_channels = 128;  // C
  std::size_t depth_bins = 8;
  std::size_t joints = hand::kJoints;
  std::size_t adaptation_stages = 1;
  std::size_t heads = 1;
  bool pre_norm = false;
  bool light = false;  // c = C / 8 instead of C / 4
  std::size_t pose_hidden = 128;
  BlockKind block = BlockKind::fuseformer;
  CaVariant ca_variant = CaVariant::tj_ts;

  std::size_t channels() const { return light ? backbone_channels / 8 : backbone_channels / 4; }
  std::size_t enhanced_channels() const { return channels() + channels() / 4; }
  std::size_t spatial() const { return feature_size * feature_size; }
  std::size_t token_length() const { return 2 * spatial() + 1; }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct FuseFormerWeights {
  nn::LinearWeights join;  // 2c -> c
  // SimToken path; undefined when the CA variant never reads t_S.
  Tensor cls;  // [1, c]
  nn::AttentionBlockWeights sa;
  bool has_sim = false;
  // Cross-attention; undefined for the no-CA variant.
  nn::AttentionBlockWeights ca;
  bool has_ca = false;
};

struct EABlockWeights {
  FuseFormerWeights extract;
  std::vector<std::array<FuseFormerWeights, 2>> adapt;  // per stage: left, right
  nn::LinearWeights reduce;  // c -> c/4, shared by both hands
};

/// Budget-matched Transformer baselines for the block ablation.
struct BaselineWeights {
  nn::AttentionBlockWeights sa;          // sa_only
  std::array<nn::AttentionBlockWeights, 2> ca;  // ca_only: left<-right, right<-left
  nn::LinearWeights reduce;
  std::size_t hidden = 0;
};

struct HandHeadWeights {
  nn::LinearWeights heatmap;  // c* -> d*J (1x1 conv)
  nn::AttentionBlockWeights sjt;
  nn::LinearWeights pose1, pose2;  // J*(c*+3) -> hidden -> 48
  nn::LinearWeights shape;         // c* -> 10
};

struct EncoderWeights {
  std::array<nn::LinearWeights, 3> conv;  // weight stored [k, k, cin, cout]
  std::array<std::size_t, 3> kernel{}, stride{}, pad{};
  nn::LinearWeights split_left, split_right;  // C -> c
};

struct EANetWeights {
  EncoderWeights encoder;
  EABlockWeights eablock;
  BaselineWeights baseline;
  std::array<HandHeadWeights, 2> heads;  // left, right
  nn::LinearWeights rel_translation;     // 2c* -> 3
};

/// Token pair kept for diagnostics; sim undefined when not computed.
struct TokenSet {
  Tensor sim;   // [l, c]
  Tensor join;  // [hw, c]
};

struct Diagnostics {
  Tensor feature_left, feature_right;  // [h, w, c] before the block
  std::vector<TokenSet> tokens;        // extract stage first, then adaptation
  std::vector<Tensor> attention;       // every probability matrix, in call order
  std::vector<std::string> attention_names;
};

struct HandOutputs {
  Tensor joints25;  // [J, 3]
  Tensor theta;     // [48]
  Tensor beta;      // [10]
  Tensor vertices;  // [V, 3]
  Tensor joints;    // [21, 3] skeleton joints of the posed mesh
};

struct NetOutputs {
  HandOutputs left, right;
  Tensor rel_translation;  // [3]
  std::optional<Diagnostics> diagnostics;

  const HandOutputs& hand(hand::Handedness side) const {
    return side == hand::Handedness::left ? left : right;
  }
};

struct LossWeights {
  double theta = 1.0;
  double beta = 1.0;
  double joints = 1.0;
  double vertices = 1.0;
  double rel_translation = 1.0;

  bool operator==(const LossWeights&) const = default;
};

/// Parameter count of one FuseFormer at width c for the given variant.
std::size_t fuseformer_parameter_count(std::size_t c, CaVariant variant);
/// Hidden width that brings a baseline within budget of the EABlock.
std::size_t matched_baseline_hidden(const ModelConfig& config);

FuseFormerWeights make_fuseformer(nn::ParameterStore& store, const std::string& name,
                                  std::size_t c, CaVariant variant,
                                  const nn::BlockOptions& options);
EANetWeights make_weights(nn::ParameterStore& store, const ModelConfig& config);

// Stage functions. Features are channels-last [h, w, c].
std::array<Tensor, 2> encode(const Tensor& image, const EncoderWeights& w,
                             const ModelConfig& config);
Tensor make_sim_token(const Tensor& fa, const Tensor& fb, const FuseFormerWeights& w,
                      const nn::BlockOptions& options, Diagnostics* diag = nullptr);
Tensor make_join_token(const Tensor& fa, const Tensor& fb, const nn::LinearWeights& fc);
/// Returns the (h*w) x c interaction feature.
Tensor fuseformer(const Tensor& fa, const Tensor& fb, const FuseFormerWeights& w,
                  CaVariant variant, const nn::BlockOptions& options,
                  Diagnostics* diag = nullptr);
/// Returns F*_L, F*_R, each [h, w, c + c/4].
std::array<Tensor, 2> eablock(const Tensor& fl, const Tensor& fr, const EABlockWeights& w,
                              const ModelConfig& config, Diagnostics* diag = nullptr);
std::array<Tensor, 2> ablation_block(const Tensor& fl, const Tensor& fr,
                                     const EANetWeights& w, const ModelConfig& config,
                                     Diagnostics* diag = nullptr);

struct JointFeatures {
  Tensor joints25;  // [J, 3]
  Tensor features;  // [J, c*]
};
JointFeatures joint_feature_extract(const Tensor& enhanced, const HandHeadWeights& w,
                                    const ModelConfig& config);
Tensor sjt(const Tensor& joint_features, const HandHeadWeights& w,
           const nn::BlockOptions& options, Diagnostics* diag = nullptr);

/// Regressors plus skinning. `joint_tokens` are the SJT outputs.
NetOutputs regress_outputs(const std::array<Tensor, 2>& enhanced,
                           const std::array<Tensor, 2>& joint_tokens,
                           const std::array<Tensor, 2>& joints25,
                           const EANetWeights& w, const ModelConfig& config);

class EANet {
 public:
  EANet(ModelConfig config, std::uint64_t seed);
  EANet(const EANet&) = delete;
  EANet& operator=(const EANet&) = delete;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  const EANetWeights& weights() const { return weights_; }

  NetOutputs forward(const Tensor& image, bool diagnostics = false) const;

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  nn::ParameterStore store_;
  EANetWeights weights_;
};

/// Full network: encode, block, per-hand joint extraction, SJT, regression.
NetOutputs eanet_forward(const Tensor& image, const EANetWeights& w,
                         const ModelConfig& config, bool diagnostics = false);

/// Sum of weighted L1 terms. Absent hands contribute nothing; the relative
/// translation term needs both hands.
Tensor compute_loss(const NetOutputs& pred, const synth::Sample& gt,
                    const LossWeights& lambdas);

}  // namespace model
}  // namespace eanet
