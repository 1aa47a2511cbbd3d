#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eanet/tensor.hpp"

namespace eanet::gradcheck {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  double max_abs_grad = 0.0;
};

/// Central differences on `probes` coordinates (all coordinates when 0 or
/// larger than the total) against backward gradients. `fn` must rebuild its
/// scalar output from `inputs` on every call. Relative error per coordinate
/// is |a - b| / max(|a|, |b|, 1e-8).
GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                           std::size_t probes = 0, double step = 1e-5,
                           std::uint64_t seed = 0);

struct SuiteRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  double seconds = 0.0;
  bool pass = false;
};

struct SuiteOptions {
  double threshold = 1e-5;
  double step = 1e-5;
  std::uint64_t seed = 0;
  /// Adds a fixture whose backward rule is deliberately wrong.
  bool corrupt_fixture = false;
};

/// Every differentiable primitive, the hand model, the blocks and an
/// end-to-end probe over sampled weight coordinates of every submodule.
std::vector<SuiteRow> run_suite(const SuiteOptions& options);

}  // namespace eanet::gradcheck
