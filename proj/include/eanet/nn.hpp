#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "eanet/tensor.hpp"

namespace eanet::nn {

struct Init {
  enum class Kind { zeros, ones, normal };
  Kind kind = Kind::zeros;
  double stddev = 0.0;

  static Init zeros() { return {Kind::zeros, 0.0}; }
  static Init ones() { return {Kind::ones, 0.0}; }
  static Init normal(double stddev) { return {Kind::normal, stddev}; }
};

/// Named, ordered collection of trainable leaves with seeded initialization.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  Tensor add(const std::string& name, Shape shape, Init init);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;
  /// Parameter count over entries whose name starts with `prefix`.
  std::size_t parameter_count(const std::string& prefix) const;
  void zero_grad();

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct LinearWeights {
  Tensor weight;  // [cin, cout]
  Tensor bias;    // [cout], or undefined
};

struct MlpWeights {
  LinearWeights fc1;
  LinearWeights fc2;
};

struct LayerNormWeights {
  Tensor gamma;
  Tensor beta;
};

/// q/k/v projections plus the residual MLP of one attention block. The norm
/// slots are only populated for pre-norm blocks.
struct AttentionBlockWeights {
  LinearWeights q, k, v;
  MlpWeights mlp;
  LayerNormWeights norm_query, norm_context, norm_mlp;
};

struct BlockOptions {
  std::size_t heads = 1;
  bool pre_norm = false;
};

LinearWeights make_linear(ParameterStore& store, const std::string& name,
                          std::size_t cin, std::size_t cout,
                          double stddev = 0.02);
MlpWeights make_mlp(ParameterStore& store, const std::string& name,
                    std::size_t width, std::size_t hidden);
AttentionBlockWeights make_attention_block(ParameterStore& store,
                                           const std::string& name,
                                           std::size_t channels,
                                           std::size_t hidden,
                                           const BlockOptions& options);

Tensor apply(const LinearWeights& w, const Tensor& x);

/// x + fc2(gelu(fc1(x))); shape preserved.
Tensor residual_mlp(const Tensor& x, const MlpWeights& w);

/// r = query + Attn(Wq query, Wk context, Wv context); returns r + MLP(r).
/// Self-attention is the case context == query. Probability matrices are
/// appended to `attention_maps` when it is non-null.
Tensor attention_block(const Tensor& query, const Tensor& context,
                       const AttentionBlockWeights& w,
                       const BlockOptions& options,
                       std::vector<Tensor>* attention_maps = nullptr);

}  // namespace eanet::nn
