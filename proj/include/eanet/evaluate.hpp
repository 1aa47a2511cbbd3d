#pragma once

#include <iosfwd>
#include <vector>

#include "eanet/metrics.hpp"
#include "eanet/model.hpp"
#include "eanet/synth.hpp"

namespace eanet::evaluate {

struct SampleMetrics {
  std::size_t index = 0;
  bool two_hands = false;
  double mpjpe = 0.0;  // mean over present hands, mm
  double mpvpe = 0.0;
  double mrrpe = 0.0;  // two-hand samples only
};

struct Evaluation {
  metrics::MetricReport report;
  std::vector<SampleMetrics> samples;
};

/// Scores predictions against their samples, one prediction per sample.
Evaluation score(const std::vector<model::NetOutputs>& predictions,
                 const std::vector<synth::Sample>& samples);
/// Runs the network on every sample (no graph) and scores the outputs.
Evaluation evaluate(const model::EANet& net, const std::vector<synth::Sample>& samples);

/// Ground truth laid out as network outputs.
model::NetOutputs ground_truth_outputs(const synth::Sample& sample);

void write_samples_csv(std::ostream& out, const std::vector<SampleMetrics>& rows);

/// Homogeneity ratios at the extraction FuseFormer, averaged over samples.
struct Homogeneity {
  double raw = 0.0;          // F_L rows vs F_R rows
  double sim_halves = 0.0;   // SimToken rows of the left half vs the right half
  double join_vs_sim = 0.0;  // JoinToken rows vs SimToken rows without the class token
  std::size_t samples = 0;

  /// Both fused token comparisons are more homogeneous than the raw features.
  bool fused_more_homogeneous() const { return sim_halves < raw && join_vs_sim < raw; }
};

/// Needs a FuseFormer block whose extraction computes the SimToken.
Homogeneity token_homogeneity(const model::EANet& net, const std::vector<synth::Sample>& samples);

}  // namespace eanet::evaluate
