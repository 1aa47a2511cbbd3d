#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eanet/config.hpp"
#include "eanet/model.hpp"
#include "eanet/optim.hpp"

namespace eanet {

/// Single-file zip archive with stored (uncompressed) entries and CRC-32
/// checks on read. Timestamps are fixed so identical content gives identical
/// bytes.
namespace archive {

using Entries = std::vector<std::pair<std::string, std::vector<std::uint8_t>>>;

void write(const std::filesystem::path& path, const Entries& entries);
Entries read(const std::filesystem::path& path);
std::uint32_t crc32(const std::vector<std::uint8_t>& bytes);

}  // namespace archive

namespace checkpoint {

inline constexpr int kVersion = 1;

/// Training progress needed to resume a run exactly.
struct TrainState {
  std::uint64_t step = 0;
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;
  /// Epoch with the lowest mean loss; -1 before the first epoch ends.
  std::int64_t best_epoch = -1;

  bool operator==(const TrainState&) const = default;
};

struct Checkpoint {
  config::RunConfig config;
  std::uint64_t model_seed = 0;
  std::vector<std::pair<std::string, Tensor>> parameters;
  std::optional<AdamState> adam;
  TrainState train;
};

/// Archive layout: manifest.json, params/<name>.eatf, and when an optimizer
/// state is given adam/m/<name>.eatf and adam/v/<name>.eatf. Training
/// progress lives in the manifest.
void save(const std::filesystem::path& path, const model::EANet& net,
          const config::RunConfig& config, const AdamState* adam = nullptr,
          const TrainState* train = nullptr);
Checkpoint load(const std::filesystem::path& path);

/// Copies checkpoint values into `net`. Throws ConfigError naming the first
/// missing, extra or reshaped parameter.
void copy_parameters(model::EANet& net, const Checkpoint& ckpt);
/// Builds the network described by the checkpoint and loads its values.
std::unique_ptr<model::EANet> restore_model(const Checkpoint& ckpt);

}  // namespace checkpoint

}  // namespace eanet
