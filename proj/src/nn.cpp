#include "eanet/nn.hpp"

#include <algorithm>

#include "eanet/ops.hpp"

namespace eanet::nn {

Tensor ParameterStore::add(const std::string& name, Shape shape, Init init) {
  if (contains(name)) throw UsageError("duplicate parameter name " + name);
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::ones:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::Kind::normal: {
      std::normal_distribution<double> dist(0.0, init.stddev);
      for (auto& v : values) v = dist(rng_);
      break;
    }
  }
  Tensor t(std::move(shape), std::move(values), true);
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [key, t] : entries_) {
    if (key == name) return t;
  }
  throw UsageError("unknown parameter " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

std::size_t ParameterStore::parameter_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.first.rfind(prefix, 0) == 0) n += e.second.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

LinearWeights make_linear(ParameterStore& store, const std::string& name,
                          std::size_t cin, std::size_t cout, double stddev) {
  return {store.add(name + ".weight", {cin, cout}, Init::normal(stddev)),
          store.add(name + ".bias", {cout}, Init::zeros())};
}

MlpWeights make_mlp(ParameterStore& store, const std::string& name,
                    std::size_t width, std::size_t hidden) {
  return {make_linear(store, name + ".fc1", width, hidden),
          make_linear(store, name + ".fc2", hidden, width)};
}

namespace {

LayerNormWeights make_norm(ParameterStore& store, const std::string& name,
                           std::size_t width) {
  return {store.add(name + ".gamma", {width}, Init::ones()),
          store.add(name + ".beta", {width}, Init::zeros())};
}

Tensor apply_norm(const LayerNormWeights& w, const Tensor& x) {
  return ops::layer_norm(x, w.gamma, w.beta);
}

}  // namespace

AttentionBlockWeights make_attention_block(ParameterStore& store,
                                           const std::string& name,
                                           std::size_t channels,
                                           std::size_t hidden,
                                           const BlockOptions& options) {
  AttentionBlockWeights w;
  w.q = make_linear(store, name + ".q", channels, channels);
  // A key bias only shifts every logit of a query by the same amount, which
  // softmax cancels, so the key projection has none.
  w.k = {store.add(name + ".k.weight", {channels, channels}, Init::normal(0.02)), Tensor{}};
  w.v = make_linear(store, name + ".v", channels, channels);
  w.mlp = make_mlp(store, name + ".mlp", channels, hidden);
  if (options.pre_norm) {
    w.norm_query = make_norm(store, name + ".norm_query", channels);
    w.norm_context = make_norm(store, name + ".norm_context", channels);
    w.norm_mlp = make_norm(store, name + ".norm_mlp", channels);
  }
  return w;
}

Tensor apply(const LinearWeights& w, const Tensor& x) {
  return ops::linear(x, w.weight, w.bias);
}

Tensor residual_mlp(const Tensor& x, const MlpWeights& w) {
  return ops::add(x, apply(w.fc2, ops::gelu(apply(w.fc1, x))));
}

Tensor attention_block(const Tensor& query, const Tensor& context,
                       const AttentionBlockWeights& w,
                       const BlockOptions& options,
                       std::vector<Tensor>* attention_maps) {
  const bool self_attention = query.node() == context.node();
  Tensor q_in = query;
  Tensor kv_in = context;
  if (options.pre_norm) {
    q_in = apply_norm(w.norm_query, query);
    kv_in = self_attention ? q_in : apply_norm(w.norm_context, context);
  }
  Tensor attended = ops::attention(apply(w.q, q_in), apply(w.k, kv_in),
                                   apply(w.v, kv_in), options.heads,
                                   attention_maps);
  Tensor r = ops::add(query, attended);
  if (!options.pre_norm) return residual_mlp(r, w.mlp);
  Tensor hidden = apply(w.mlp.fc2,
                        ops::gelu(apply(w.mlp.fc1, apply_norm(w.norm_mlp, r))));
  return ops::add(r, hidden);
}

}  // namespace eanet::nn
