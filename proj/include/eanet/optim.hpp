#pragma once

#include <cstdint>
#include <vector>

#include "eanet/tensor.hpp"

namespace eanet {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  AdamConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const std::vector<Tensor>& params,
                          const AdamConfig& config = {});

/// Bias-corrected Adam update in place, using each parameter's accumulated
/// gradient (parameters without a gradient see a zero gradient).
void adam_step(std::vector<Tensor>& params, AdamState& state);

/// Same update with explicit gradients, one buffer per parameter.
void adam_step(std::vector<Tensor>& params,
               const std::vector<std::vector<double>>& grads, AdamState& state);

}  // namespace eanet
