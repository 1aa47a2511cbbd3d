#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "eanet/checkpoint.hpp"
#include "eanet/config.hpp"
#include "eanet/model.hpp"
#include "eanet/synth.hpp"

namespace eanet::train {

struct Schedule {
  std::size_t total_steps = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t batch_size = 0;
  double base_lr = 0.0;
  std::vector<std::size_t> anneal_steps;  // rate multiplied by factor from here on
  double anneal_factor = 1.0;

  double lr(std::size_t step) const;
};

/// Regular mode: epochs * ceil(n / batch) steps with annealing at the config
/// fractions. Overfit mode: one full batch of the samples per step at the
/// overfit rate and overfit anneal fractions.
Schedule make_schedule(const config::TrainConfig& cfg, std::size_t samples, bool overfit);

/// Sample indices for one step: batches are consecutive slices of a per-epoch
/// permutation drawn from (seed, epoch). The last batch of an epoch may be short.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t samples,
                                       const Schedule& schedule);

struct TrainOptions {
  bool overfit = false;
  /// Run directory for checkpoints and the loss log; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Resume from this checkpoint (written by an earlier call with the same config).
  std::optional<std::filesystem::path> resume;
  /// Stop once this many steps are done, as an interruption would.
  std::optional<std::size_t> stop_after;
  /// Off keeps only loss.csv in out_dir.
  bool write_checkpoints = true;
  std::ostream* log = nullptr;
};

struct TrainResult {
  checkpoint::TrainState state;
  double initial_loss = 0.0;
  /// Mean loss over the training samples after the last step.
  double final_loss = 0.0;
  bool finished = false;
};

/// Mean loss over `samples` without recording a graph.
double mean_loss(const model::EANet& net, const std::vector<synth::Sample>& samples,
                 const model::LossWeights& lambdas);

/// Adam over per-sample backward passes of loss / batch. Writes loss.csv,
/// last.ckpt (resume point), best.ckpt (lowest epoch mean) and final.ckpt to
/// out_dir. A non-finite value raises NumericError naming the step.
TrainResult train(model::EANet& net, const std::vector<synth::Sample>& data,
                  const config::RunConfig& cfg, const TrainOptions& options = {});

void write_loss_csv(std::ostream& out, const checkpoint::TrainState& state,
                    const Schedule& schedule);

}  // namespace eanet::train
