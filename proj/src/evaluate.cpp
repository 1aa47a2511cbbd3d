#include "eanet/evaluate.hpp"

#include <ostream>

#include "eanet/ops.hpp"

namespace eanet::evaluate {

namespace {

Tensor rows(const Tensor& feature) {
  return ops::reshape(feature, {feature.dim(0) * feature.dim(1), feature.dim(2)});
}

}  // namespace

Evaluation score(const std::vector<model::NetOutputs>& predictions,
                 const std::vector<synth::Sample>& samples) {
  if (predictions.size() != samples.size()) {
    throw DimensionError("evaluate: prediction count does not match the sample count");
  }
  Evaluation ev;
  metrics::ReportBuilder builder;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& gt = samples[i];
    const auto& pred = predictions[i];
    SampleMetrics m;
    m.index = i;
    m.two_hands = gt.two_hands();
    std::size_t hands = 0;
    for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
      const auto& t = gt.targets(side);
      if (!t.present) continue;
      const auto& p = pred.hand(side);
      m.mpjpe += metrics::mpjpe(p.joints, t.joints3d);
      m.mpvpe += metrics::mpvpe_scale_aligned(p.vertices, t.vertices, p.joints, t.joints3d);
      ++hands;
    }
    if (hands == 0) throw metrics::MetricError("evaluate: sample " + std::to_string(i) + " has no hand");
    m.mpjpe /= static_cast<double>(hands);
    m.mpvpe /= static_cast<double>(hands);
    if (m.two_hands) m.mrrpe = metrics::mrrpe(pred.rel_translation, gt.rel_translation);
    builder.add(m.two_hands, m.mpjpe, m.mpvpe, m.mrrpe);
    ev.samples.push_back(m);
  }
  ev.report = builder.finish();
  return ev;
}

Evaluation evaluate(const model::EANet& net, const std::vector<synth::Sample>& samples) {
  NoGradGuard guard;
  std::vector<model::NetOutputs> predictions;
  predictions.reserve(samples.size());
  for (const auto& s : samples) predictions.push_back(net.forward(s.image));
  return score(predictions, samples);
}

model::NetOutputs ground_truth_outputs(const synth::Sample& sample) {
  model::NetOutputs out;
  for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
    const auto& t = sample.targets(side);
    auto& h = side == hand::Handedness::left ? out.left : out.right;
    h.joints25 = t.joints25;
    h.theta = t.theta;
    h.beta = t.beta;
    h.vertices = t.vertices;
    h.joints = t.joints3d;
  }
  out.rel_translation = sample.rel_translation;
  return out;
}

void write_samples_csv(std::ostream& out, const std::vector<SampleMetrics>& rows) {
  out << "index,two_hands,mpjpe,mpvpe,mrrpe\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.index << ',' << (r.two_hands ? 1 : 0) << ',' << r.mpjpe << ',' << r.mpvpe << ','
        << r.mrrpe << '\n';
  }
}

Homogeneity token_homogeneity(const model::EANet& net, const std::vector<synth::Sample>& samples) {
  NoGradGuard guard;
  Homogeneity h;
  for (const auto& s : samples) {
    const auto out = net.forward(s.image, true);
    const auto& d = *out.diagnostics;
    if (d.tokens.empty() || !d.tokens.front().sim.defined()) {
      throw UsageError("token_homogeneity: the extraction stage computes no SimToken");
    }
    const Tensor& sim = d.tokens.front().sim;
    const Tensor& join = d.tokens.front().join;
    const std::size_t hw = join.dim(0);
    const Tensor sim_rows = ops::slice(sim, 0, 1, 1 + 2 * hw);
    h.raw += metrics::token_homogeneity(rows(d.feature_left), rows(d.feature_right)).ratio;
    h.sim_halves += metrics::token_homogeneity(ops::slice(sim, 0, 1, 1 + hw),
                                               ops::slice(sim, 0, 1 + hw, 1 + 2 * hw))
                        .ratio;
    h.join_vs_sim += metrics::token_homogeneity(join, sim_rows).ratio;
    ++h.samples;
  }
  if (h.samples == 0) throw metrics::MetricError("token_homogeneity: no samples");
  const auto n = static_cast<double>(h.samples);
  h.raw /= n;
  h.sim_halves /= n;
  h.join_vs_sim /= n;
  return h;
}

}  // namespace eanet::evaluate
