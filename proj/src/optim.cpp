#include "eanet/optim.hpp"

#include <cmath>
#include <string>

namespace eanet {

AdamState make_adam_state(const std::vector<Tensor>& params,
                          const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), 0.0);
    state.v.emplace_back(p.numel(), 0.0);
  }
  return state;
}

namespace {

void check_state(const std::vector<Tensor>& params, const AdamState& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam: state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() ||
        state.v[i].size() != params[i].numel()) {
      throw DimensionError("adam: moment buffer " + std::to_string(i) +
                           " does not match parameter shape " +
                           shape_str(params[i].shape()));
    }
  }
}

void update_one(std::span<double> p, std::span<const double> g,
                std::vector<double>& m, std::vector<double>& v,
                const AdamConfig& c, double correction1, double correction2) {
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double gj = g.empty() ? 0.0 : g[j];
    m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
    v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
    const double m_hat = m[j] / correction1;
    const double v_hat = v[j] / correction2;
    p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

}  // namespace

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  check_state(params, state);
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.config.beta1, t);
  const double c2 = 1.0 - std::pow(state.config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    update_one(params[i].data_mut(), params[i].grad(), state.m[i], state.v[i],
               state.config, c1, c2);
  }
}

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state) {
  check_state(params, state);
  if (grads.size() != params.size()) {
    throw DimensionError("adam: gradient count does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) {
      throw DimensionError("adam: gradient " + std::to_string(i) +
                           " does not match parameter shape " +
                           shape_str(params[i].shape()));
    }
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.config.beta1, t);
  const double c2 = 1.0 - std::pow(state.config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    update_one(params[i].data_mut(), grads[i], state.m[i], state.v[i],
               state.config, c1, c2);
  }
}

}  // namespace eanet
