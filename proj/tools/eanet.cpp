// eanet command-line tool: gen, train, eval, gradcheck, ablate, export.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "eanet/config.hpp"
#include "eanet/eatf.hpp"
#include "eanet/gradcheck.hpp"
#include "eanet/metrics.hpp"
#include "eanet/pipeline.hpp"

namespace fs = std::filesystem;
using namespace eanet;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string dataset;
  std::string variant;
  bool overfit = false;
};

config::RunConfig load_config(const Common& c) {
  config::RunConfig cfg = c.config_path.empty() ? config::RunConfig{} : config::load(c.config_path);
  if (!c.variant.empty()) config::apply_variant(cfg.model, c.variant);
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c, const config::RunConfig& cfg, const char* sub) {
  return c.out.empty() ? fs::path(cfg.out_dir) / sub : fs::path(c.out);
}

fs::path dataset_dir(const Common& c, const config::RunConfig& cfg) {
  return c.dataset.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(c.dataset);
}

fs::path dataset_file(const Common& c, const config::RunConfig& cfg) {
  const fs::path p = dataset_dir(c, cfg);
  return fs::is_directory(p) ? pipeline::val_file(p) : p;
}

void require_checkpoint(const Common& c) {
  if (c.checkpoint.empty()) throw UsageError("--checkpoint is required");
}

int cmd_gen(const Common& c, bool sweep) {
  auto cfg = load_config(c);
  if (c.seed) cfg.data.seed = *c.seed;
  const auto dir = out_dir(c, cfg, "data");
  for (const auto& f : pipeline::generate_datasets(cfg, dir, sweep)) {
    std::cout << (dir / f.name).string() << "  " << f.count << " samples  hash " << f.hash << '\n';
  }
  return 0;
}

int cmd_train(const Common& c) {
  auto cfg = load_config(c);
  if (c.seed) cfg.train.seed = *c.seed;
  const auto dir = out_dir(c, cfg, c.overfit ? "overfit" : "train");
  train::TrainOptions opts;
  opts.overfit = c.overfit;
  opts.log = &std::cout;
  if (!c.checkpoint.empty()) opts.resume = c.checkpoint;
  const auto r = pipeline::train_run(cfg, dataset_dir(c, cfg), dir, opts);
  std::cout << "steps " << r.state.step << "  initial loss " << r.initial_loss << "  final loss "
            << r.final_loss << "  ratio " << r.final_loss / r.initial_loss << '\n'
            << "run directory " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c) {
  require_checkpoint(c);
  std::optional<config::RunConfig> cfg;
  if (!c.config_path.empty() || !c.variant.empty()) cfg = load_config(c);
  const config::RunConfig base = cfg.value_or(config::RunConfig{});
  const auto dir = out_dir(c, base, "eval");
  const auto ev = pipeline::eval_run(c.checkpoint, dataset_file(c, base),
                                     cfg ? &cfg->model : nullptr, dir);
  metrics::write_report_csv(std::cout, ev.report);
  std::cout << "report " << (dir / "report.csv").string() << '\n';
  return 0;
}

int cmd_gradcheck(const Common& c, bool corrupt) {
  gradcheck::SuiteOptions opts;
  if (c.seed) opts.seed = *c.seed;
  opts.corrupt_fixture = corrupt;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = gradcheck::run_suite(opts);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = true;
  std::cout << std::left << std::setw(28) << "check" << std::setw(14) << "max_rel_err"
            << std::setw(8) << "probes" << "result\n";
  for (const auto& r : rows) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    std::cout << std::setw(28) << r.name << std::setw(14) << err << std::setw(8) << r.probes
              << (r.pass ? "PASS" : "FAIL") << '\n';
    ok = ok && r.pass;
  }
  std::cout << rows.size() << " checks, threshold " << opts.threshold << ", " << std::fixed
            << std::setprecision(1) << seconds << " s: " << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : kExitNumeric;
}

int cmd_ablate(const Common& c) {
  auto cfg = load_config(c);
  if (!c.variant.empty()) cfg.ablation.variants = {c.variant};
  if (c.seed) cfg.ablation.seeds = {*c.seed};
  const auto dir = out_dir(c, cfg, "ablate");
  const auto result =
      pipeline::ablate(cfg, dataset_dir(c, cfg), dir, pipeline::thread_cap(), &std::cout);
  std::cout << result.rows.size() << " rows written to " << (dir / "ablation.csv").string()
            << '\n';
  return 0;
}

int cmd_export(const Common& c, std::size_t index) {
  require_checkpoint(c);
  const auto ckpt = checkpoint::load(c.checkpoint);
  const auto path = dataset_file(c, ckpt.config);
  const auto data = synth::read_dataset(path);
  if (index >= data.size()) {
    throw UsageError("--index " + std::to_string(index) + " out of range for " +
                     std::to_string(data.size()) + " samples");
  }
  pipeline::check_compatible(ckpt, nullptr, data);
  const auto net = checkpoint::restore_model(ckpt);
  const auto dir = out_dir(c, ckpt.config, "export");
  pipeline::write_config(dir, ckpt.config);
  const auto summary = pipeline::export_sample(*net, data[index], dir);
  std::cout << summary.files.size() << " files written to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EANet interacting-hand mesh recovery at desk scale"};
  app.require_subcommand(1);
  Common c;
  bool sweep = false;
  bool corrupt = false;
  std::size_t index = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config_path, "run config JSON");
    sub->add_option("--seed", c.seed, "seed override");
    sub->add_option("--out", c.out, "output directory");
  };
  auto* gen = app.add_subcommand("gen", "generate train/val datasets");
  add_common(gen);
  gen->add_flag("--sweep", sweep, "also write one val file per symmetry level");

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr);
  tr->add_option("--dataset", c.dataset, "dataset directory");
  tr->add_option("--variant", c.variant, "block or CA variant id");
  tr->add_option("--checkpoint", c.checkpoint, "resume from this checkpoint");
  tr->add_flag("--overfit", c.overfit, "memorize the first samples");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev);
  ev->add_option("--checkpoint", c.checkpoint, "checkpoint archive")->required();
  ev->add_option("--dataset", c.dataset, "dataset file or directory (val.eads)");
  ev->add_option("--variant", c.variant, "expected variant id");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--seed", c.seed, "probe seed");
  gc->add_flag("--corrupt-fixture", corrupt, "add a fixture with a wrong backward rule");

  auto* ab = app.add_subcommand("ablate", "train and evaluate the variant grid");
  add_common(ab);
  ab->add_option("--dataset", c.dataset, "dataset directory");
  ab->add_option("--variant", c.variant, "restrict the grid to one variant");

  auto* ex = app.add_subcommand("export", "meshes, tokens and attention maps for one sample");
  add_common(ex);
  ex->add_option("--checkpoint", c.checkpoint, "checkpoint archive")->required();
  ex->add_option("--dataset", c.dataset, "dataset file or directory (val.eads)");
  ex->add_option("--index", index, "sample index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*gen) return cmd_gen(c, sweep);
    if (*tr) return cmd_train(c);
    if (*ev) return cmd_eval(c);
    if (*gc) return cmd_gradcheck(c, corrupt);
    if (*ab) return cmd_ablate(c);
    if (*ex) return cmd_export(c, index);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
