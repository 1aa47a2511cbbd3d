#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "eanet/checkpoint.hpp"
#include "eanet/config.hpp"
#include "eanet/evaluate.hpp"
#include "eanet/synth.hpp"
#include "eanet/train.hpp"

/// Library side of the command-line operations. Every function writes the
/// resolved config.json into its output directory.
namespace eanet::pipeline {

namespace fs = std::filesystem;

/// Master seed of a dataset split derived from the data seed.
std::uint64_t split_seed(std::uint64_t data_seed, std::uint64_t split);

std::string level_tag(double symmetry);  // "0.25"
fs::path train_file(const fs::path& dir);
fs::path val_file(const fs::path& dir);
fs::path sweep_file(const fs::path& dir, double symmetry);

struct DatasetFile {
  std::string name;
  std::size_t count = 0;
  std::uint64_t master_seed = 0;
  std::optional<double> symmetry;  // fixed level, empty for mixed
  std::string hash;
};

/// Writes train.eads and val.eads at mixed symmetry, plus one val_s<level>.eads
/// per sweep level when `sweep` is set, and manifest.json.
std::vector<DatasetFile> generate_datasets(const config::RunConfig& cfg, const fs::path& out_dir,
                                           bool sweep);

void write_config(const fs::path& dir, const config::RunConfig& cfg);

/// Trains on train.eads of `dataset_dir`.
train::TrainResult train_run(const config::RunConfig& cfg, const fs::path& dataset_dir,
                             const fs::path& out_dir, const train::TrainOptions& options);

/// Raises ConfigError naming the first model field where the checkpoint differs
/// from `expected`, or the dataset disagrees with the checkpoint.
void check_compatible(const checkpoint::Checkpoint& ckpt, const model::ModelConfig* expected,
                      const std::vector<synth::Sample>& data);

/// Writes report.csv, report.json and samples.csv into out_dir.
evaluate::Evaluation eval_run(const fs::path& checkpoint_path, const fs::path& dataset,
                              const model::ModelConfig* expected, const fs::path& out_dir);

void write_report(const fs::path& out_dir, const evaluate::Evaluation& ev);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::string split;  // "mixed" or a symmetry level
  metrics::MetricReport report;
  std::string train_hash, eval_hash;
};

struct HomogeneityRow {
  std::string variant;
  std::uint64_t seed = 0;
  evaluate::Homogeneity stats;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::vector<HomogeneityRow> homogeneity;  // at symmetry 0, sim-token variants
};

/// Worker cap from EANET_THREADS, else the hardware concurrency.
unsigned thread_cap();

/// Trains every variant x seed on the same train file and evaluates each on
/// val.eads and every sweep file present. Writes ablation.csv,
/// homogeneity.csv and per-run loss logs and final weights under out_dir.
AblationResult ablate(const config::RunConfig& cfg, const fs::path& dataset_dir,
                      const fs::path& out_dir, unsigned threads, std::ostream* log = nullptr);

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
void write_homogeneity_csv(std::ostream& out, const std::vector<HomogeneityRow>& rows);

/// "# name=<name> shape=RxC" then one row per line. Higher ranks keep the
/// last axis as columns.
void write_matrix_csv(std::ostream& out, const std::string& name, const Tensor& m);

struct ExportSummary {
  std::vector<fs::path> files;
};

/// left.obj / right.obj from the predicted meshes, raw feature and token
/// CSVs per FuseFormer stage, one CSV per attention matrix, token_stats.csv.
ExportSummary export_sample(const model::EANet& net, const synth::Sample& sample,
                            const fs::path& out_dir);

}  // namespace eanet::pipeline
