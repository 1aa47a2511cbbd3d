#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "eanet/config.hpp"
#include "eanet/pipeline.hpp"

using namespace eanet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "eanet_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

config::RunConfig tiny() {
  config::RunConfig cfg;
  cfg.data.train_count = 12;
  cfg.data.val_count = 6;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 4;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(EANET_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config defaults and validation") {
  const config::RunConfig cfg;
  CHECK(cfg.data.train_count == 256);
  CHECK(cfg.data.val_count == 64);
  CHECK(cfg.train.batch_size == 32);
  CHECK(cfg.train.lr == 1e-4);
  CHECK(cfg.ablation.variants == std::vector<std::string>{"sa_only", "ca_only", "fuseformer"});
  CHECK(cfg.ablation.seeds.size() == 5);
  CHECK_NOTHROW(cfg.validate());

  const auto back = config::run_from_json(config::to_json(cfg));
  CHECK(back == cfg);

  try {
    config::run_from_json(config::Json::parse(R"({"train": {"epocs": 3}})"));
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epocs") != std::string::npos);
  }
  CHECK_THROWS_AS(config::run_from_json(config::Json::parse(R"({"train": {"epochs": -1}})")), ConfigError);
  CHECK_THROWS_AS(config::run_from_json(config::Json::parse(R"({"model": {"block": "mlp"}})")), ConfigError);
  auto bad = cfg;
  bad.data.synth.image_size = 32;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  model::ModelConfig m;
  config::apply_variant(m, "ts_tj");
  CHECK(m.block == model::BlockKind::fuseformer);
  CHECK(m.ca_variant == model::CaVariant::ts_tj);
  CHECK(config::variant_id(m) == "ts_tj");
  config::apply_variant(m, "sa_only");
  CHECK(config::variant_id(m) == "sa_only");
  CHECK(config::first_difference(m, model::ModelConfig{}) == std::optional<std::string>("model.block"));
  CHECK_THROWS_AS(config::apply_variant(m, "nope"), ConfigError);
}

TEST_CASE("schedule and batches") {
  config::TrainConfig t;
  t.epochs = 6;
  t.batch_size = 4;
  const auto s = train::make_schedule(t, 10, false);
  CHECK(s.steps_per_epoch == 3);
  CHECK(s.total_steps == 18);
  CHECK(s.lr(0) == 1e-4);
  CHECK(s.lr(5) == 1e-4);
  CHECK(s.lr(6) == doctest::Approx(1e-5));
  CHECK(s.lr(9) == doctest::Approx(1e-6));
  std::multiset<std::size_t> seen;
  for (std::size_t step = 0; step < 3; ++step) {
    for (auto i : train::batch_indices(0, step, 10, s)) seen.insert(i);
  }
  CHECK(seen.size() == 10);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 10);
  CHECK(train::batch_indices(0, 2, 10, s).size() == 2);
  CHECK(train::batch_indices(0, 3, 10, s) != train::batch_indices(0, 0, 10, s));

  const auto o = train::make_schedule(t, 10, true);
  CHECK(o.total_steps == 500);
  CHECK(train::batch_indices(0, 7, 8, train::make_schedule(t, 8, true)).size() == 8);
}

TEST_CASE("datasets, training, resume and evaluation") {
  const auto cfg = tiny();
  const auto dir = scratch("run");
  const auto files = pipeline::generate_datasets(cfg, dir / "data", true);
  CHECK(files.size() == 2 + cfg.data.sweep_levels.size());
  CHECK(fs::exists(pipeline::sweep_file(dir / "data", 0.25)));
  CHECK(pipeline::sweep_file(dir / "data", 0.25).filename() == "val_s0.25.eads");
  for (const auto& f : files) CHECK(synth::file_hash(dir / "data" / f.name) == f.hash);

  const auto a = pipeline::train_run(cfg, dir / "data", dir / "a", {});
  CHECK(a.finished);
  CHECK(a.state.step == 6);
  CHECK(a.state.epoch_losses.size() == 2);
  CHECK(std::isfinite(a.final_loss));
  for (const char* f : {"final.ckpt", "last.ckpt", "best.ckpt", "loss.csv", "config.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  CHECK(slurp(dir / "a" / "loss.csv").rfind("step,epoch,lr,loss\n", 0) == 0);

  train::TrainOptions stop;
  stop.stop_after = 4;
  const auto part = pipeline::train_run(cfg, dir / "data", dir / "b", stop);
  CHECK_FALSE(part.finished);
  CHECK(part.state.step == 4);
  train::TrainOptions resume;
  resume.resume = dir / "b" / "last.ckpt";
  pipeline::train_run(cfg, dir / "data", dir / "b", resume);
  CHECK(slurp(dir / "a" / "final.ckpt") == slurp(dir / "b" / "final.ckpt"));
  CHECK(slurp(dir / "a" / "loss.csv") == slurp(dir / "b" / "loss.csv"));

  auto other = cfg;
  other.train.lr = 5e-4;
  CHECK_THROWS_AS(pipeline::train_run(other, dir / "data", dir / "c", resume), ConfigError);

  const auto ckpt = checkpoint::load(dir / "a" / "final.ckpt");
  CHECK(ckpt.config == cfg);
  CHECK(ckpt.adam.has_value());
  CHECK(ckpt.parameters.size() == 111);
  const auto net = checkpoint::restore_model(ckpt);
  const auto val = synth::read_dataset(pipeline::val_file(dir / "data"));
  const auto e1 = pipeline::eval_run(dir / "a" / "final.ckpt", pipeline::val_file(dir / "data"), nullptr, dir / "e1");
  const auto e2 = evaluate::evaluate(*net, val);
  CHECK(e1.report.mpjpe_all == e2.report.mpjpe_all);
  CHECK(e1.report.n_single + e1.report.n_two == val.size());
  CHECK(e1.report.mpjpe_all == doctest::Approx(metrics::weighted_all(
                                   e1.report.mpjpe_single, e1.report.n_single, e1.report.mpjpe_two,
                                   e1.report.n_two)));

  model::ModelConfig expected = cfg.model;
  expected.block = model::BlockKind::ca_only;
  try {
    pipeline::eval_run(dir / "a" / "final.ckpt", pipeline::val_file(dir / "data"), &expected, dir / "e3");
    FAIL("mismatched config accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.block") != std::string::npos);
  }

  std::vector<model::NetOutputs> gt;
  for (const auto& s : val) gt.push_back(evaluate::ground_truth_outputs(s));
  const auto zero = evaluate::score(gt, val);
  CHECK(zero.report.mpjpe_all == 0.0);
  CHECK(zero.report.mpvpe_all == 0.0);
  CHECK(zero.report.mrrpe == 0.0);

  // Export: meshes, token shapes and row-stochastic attention.
  const auto summary = pipeline::export_sample(*net, val.front(), dir / "export");
  CHECK(!summary.files.empty());
  std::size_t attention_files = 0;
  for (const auto& f : summary.files) {
    const std::string name = f.filename().string();
    std::ifstream in(f);
    std::string header, line;
    if (name.rfind("attention_", 0) == 0) {
      ++attention_files;
      std::getline(in, header);
      while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string cell;
        double s = 0.0;
        while (std::getline(ls, cell, ',')) s += std::stod(cell);
        CHECK(std::abs(s - 1.0) <= 1e-9);
      }
    } else if (name.rfind("tokens_", 0) == 0) {
      std::getline(in, header);
      std::size_t rows = 0;
      while (std::getline(in, line)) ++rows;
      const bool sim = name.find("_sim") != std::string::npos;
      INFO(name);
      CHECK(rows == (sim ? cfg.model.token_length() : cfg.model.spatial()));
    }
  }
  CHECK(attention_files > 0);
  CHECK(fs::exists(dir / "export" / "left.obj"));
}

TEST_CASE("small ablation grid") {
  auto cfg = tiny();
  cfg.data.sweep_levels = {0.0, 1.0};
  cfg.ablation.variants = {"fuseformer", "no_ca"};
  cfg.ablation.seeds = {0, 1};
  const auto dir = scratch("ablate");
  pipeline::generate_datasets(cfg, dir / "data", true);
  const auto r = pipeline::ablate(cfg, dir / "data", dir / "out", 2);
  CHECK(r.rows.size() == 2 * 2 * 3);
  std::set<std::string> hashes;
  for (const auto& row : r.rows) {
    if (row.split == "mixed") hashes.insert(row.train_hash + row.eval_hash);
  }
  CHECK(hashes.size() == 1);
  CHECK(r.homogeneity.size() == 2);
  CHECK(fs::exists(dir / "out" / "ablation.csv"));
  CHECK(fs::exists(dir / "out" / "runs" / "no_ca" / "seed1" / "final.ckpt"));

  const auto again = pipeline::ablate(cfg, dir / "data", dir / "out2", 1);
  CHECK(slurp(dir / "out" / "ablation.csv") == slurp(dir / "out2" / "ablation.csv"));
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  const std::string d = dir.string();
  auto cfg = tiny();
  config::save(dir / "cfg.json", cfg);
  const std::string c = " --config " + d + "/cfg.json";
  CHECK(run_cli("gen" + c + " --out " + d + "/data") == 0);
  CHECK(run_cli("train" + c + " --dataset " + d + "/data --out " + d + "/train") == 0);
  CHECK(run_cli("eval --checkpoint " + d + "/train/final.ckpt --dataset " + d + "/data --out " + d + "/eval") == 0);
  CHECK(fs::exists(dir / "eval" / "report.csv"));
  CHECK(run_cli("eval --checkpoint " + d + "/train/final.ckpt --dataset " + d + "/data --variant ca_only --out " +
                d + "/eval2") == 1);
  CHECK(run_cli("eval --checkpoint " + d + "/missing.ckpt --dataset " + d + "/data") == 3);
  CHECK(run_cli("export --checkpoint " + d + "/train/final.ckpt --dataset " + d + "/data --index 2 --out " + d +
                "/export") == 0);
  CHECK(run_cli("export --checkpoint " + d + "/train/final.ckpt --dataset " + d + "/data --index 99") == 1);
  CHECK(run_cli("train --variant bogus" + c) == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("gradcheck") == 0);
  CHECK(run_cli("gradcheck --corrupt-fixture") == 2);
}
