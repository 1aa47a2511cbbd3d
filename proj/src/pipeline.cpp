#include "eanet/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "eanet/ops.hpp"

namespace eanet::pipeline {

namespace {

using config::Json;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open " + path.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

std::vector<synth::Sample> read(const fs::path& path) {
  if (!fs::exists(path)) throw std::ios_base::failure("missing dataset " + path.string());
  return synth::read_dataset(path);
}

std::string stage_name(std::size_t k) {
  if (k == 0) return "extract";
  const std::size_t stage = (k - 1) / 2 + 1;
  return "adapt" + std::to_string(stage) + ((k - 1) % 2 == 0 ? ".left" : ".right");
}

Tensor as_rows(const Tensor& t) {
  if (t.rank() == 3) return ops::reshape(t, {t.dim(0) * t.dim(1), t.dim(2)});
  return t;
}

}  // namespace

std::uint64_t split_seed(std::uint64_t data_seed, std::uint64_t split) {
  if (split == 0) return data_seed;
  return synth::sample_seed(data_seed ^ 0x5eed5eed5eed5eedull, split);
}

std::string level_tag(double symmetry) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << symmetry;
  return os.str();
}

fs::path train_file(const fs::path& dir) { return dir / "train.eads"; }
fs::path val_file(const fs::path& dir) { return dir / "val.eads"; }
fs::path sweep_file(const fs::path& dir, double symmetry) {
  return dir / ("val_s" + level_tag(symmetry) + ".eads");
}

void write_config(const fs::path& dir, const config::RunConfig& cfg) {
  fs::create_directories(dir);
  config::save(dir / "config.json", cfg);
}

std::vector<DatasetFile> generate_datasets(const config::RunConfig& cfg, const fs::path& out_dir,
                                           bool sweep) {
  cfg.validate();
  write_config(out_dir, cfg);
  std::vector<DatasetFile> files;
  auto emit = [&](const fs::path& path, std::size_t count, std::uint64_t seed,
                  const synth::SynthConfig& synth_cfg, std::optional<double> level) {
    synth::write_dataset(synth::generate(seed, count, synth_cfg), path);
    files.push_back({path.filename().string(), count, seed, level, synth::file_hash(path)});
  };
  emit(train_file(out_dir), cfg.data.train_count, split_seed(cfg.data.seed, 0), cfg.data.synth,
       std::nullopt);
  emit(val_file(out_dir), cfg.data.val_count, split_seed(cfg.data.seed, 1), cfg.data.synth,
       std::nullopt);
  if (sweep) {
    for (std::size_t i = 0; i < cfg.data.sweep_levels.size(); ++i) {
      const double s = cfg.data.sweep_levels[i];
      synth::SynthConfig fixed = cfg.data.synth;
      fixed.symmetry_lo = fixed.symmetry_hi = s;
      emit(sweep_file(out_dir, s), cfg.data.val_count, split_seed(cfg.data.seed, 2 + i), fixed, s);
    }
  }
  Json list = Json::array();
  for (const auto& f : files) {
    Json e{{"name", f.name}, {"count", f.count}, {"master_seed", f.master_seed}, {"hash", f.hash}};
    e["symmetry"] = f.symmetry ? Json(*f.symmetry) : Json("mixed");
    list.push_back(e);
  }
  const Json manifest{{"data_seed", cfg.data.seed},
                      {"synth", config::to_json(cfg.data.synth)},
                      {"files", list}};
  auto out = open_out(out_dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  close_out(out, out_dir / "manifest.json");
  return files;
}

train::TrainResult train_run(const config::RunConfig& cfg, const fs::path& dataset_dir,
                             const fs::path& out_dir, const train::TrainOptions& options) {
  cfg.validate();
  const auto data = read(train_file(dataset_dir));
  write_config(out_dir, cfg);
  model::EANet net(cfg.model, cfg.train.seed);
  if (!data.empty()) check_compatible({cfg, cfg.train.seed, {}, {}, {}}, nullptr, data);
  train::TrainOptions opts = options;
  opts.out_dir = out_dir;
  return train::train(net, data, cfg, opts);
}

void check_compatible(const checkpoint::Checkpoint& ckpt, const model::ModelConfig* expected,
                      const std::vector<synth::Sample>& data) {
  if (expected) {
    if (auto field = config::first_difference(ckpt.config.model, *expected)) {
      throw ConfigError("checkpoint and config differ in " + *field);
    }
  }
  const auto& m = ckpt.config.model;
  for (const auto& s : data) {
    if (s.image.dim(0) != m.image_size || s.image.dim(1) != m.image_size) {
      throw ConfigError("dataset image size " + std::to_string(s.image.dim(0)) +
                        " differs from model.image_size " + std::to_string(m.image_size));
    }
  }
}

void write_report(const fs::path& out_dir, const evaluate::Evaluation& ev) {
  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "report.csv");
    metrics::write_report_csv(out, ev.report);
    close_out(out, out_dir / "report.csv");
  }
  {
    auto out = open_out(out_dir / "report.json");
    out << metrics::report_json(ev.report) << '\n';
    close_out(out, out_dir / "report.json");
  }
  auto out = open_out(out_dir / "samples.csv");
  evaluate::write_samples_csv(out, ev.samples);
  close_out(out, out_dir / "samples.csv");
}

evaluate::Evaluation eval_run(const fs::path& checkpoint_path, const fs::path& dataset,
                              const model::ModelConfig* expected, const fs::path& out_dir) {
  const auto ckpt = checkpoint::load(checkpoint_path);
  const auto data = read(dataset);
  check_compatible(ckpt, expected, data);
  const auto net = checkpoint::restore_model(ckpt);
  const auto ev = evaluate::evaluate(*net, data);
  write_config(out_dir, ckpt.config);
  write_report(out_dir, ev);
  return ev;
}

unsigned thread_cap() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EANET_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError(std::string("EANET_THREADS: expected a positive integer, got '") + env + "'");
    }
    cap = static_cast<unsigned>(v);
  }
  return cap;
}

AblationResult ablate(const config::RunConfig& cfg, const fs::path& dataset_dir,
                      const fs::path& out_dir, unsigned threads, std::ostream* log) {
  cfg.validate();
  write_config(out_dir, cfg);
  const auto train_set = read(train_file(dataset_dir));
  const std::string train_hash = synth::file_hash(train_file(dataset_dir));
  struct EvalSet {
    std::string split;
    std::vector<synth::Sample> samples;
    std::string hash;
  };
  std::vector<EvalSet> evals;
  evals.push_back({"mixed", read(val_file(dataset_dir)), synth::file_hash(val_file(dataset_dir))});
  const EvalSet* zero = nullptr;
  for (double s : cfg.data.sweep_levels) {
    const auto path = sweep_file(dataset_dir, s);
    if (!fs::exists(path)) continue;
    evals.push_back({level_tag(s), read(path), synth::file_hash(path)});
  }
  for (const auto& e : evals) {
    if (e.split == level_tag(0.0)) zero = &e;
  }

  struct Job {
    std::string variant;
    std::uint64_t seed;
    std::vector<AblationRow> rows;
    std::optional<HomogeneityRow> homogeneity;
  };
  std::vector<Job> jobs;
  for (const auto& v : cfg.ablation.variants) {
    for (auto seed : cfg.ablation.seeds) jobs.push_back({v, seed, {}, std::nullopt});
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      Job& job = jobs[j];
      try {
        config::RunConfig run = cfg;
        config::apply_variant(run.model, job.variant);
        run.train.seed = job.seed;
        const fs::path dir = out_dir / "runs" / job.variant / ("seed" + std::to_string(job.seed));
        write_config(dir, run);
        model::EANet net(run.model, job.seed);
        train::TrainOptions opts;
        opts.out_dir = dir;
        opts.write_checkpoints = false;
        train::train(net, train_set, run, opts);
        checkpoint::save(dir / "final.ckpt", net, run);
        for (const auto& e : evals) {
          const auto ev = evaluate::evaluate(net, e.samples);
          job.rows.push_back({job.variant, job.seed, e.split, ev.report, train_hash, e.hash});
        }
        if (zero && run.model.block == model::BlockKind::fuseformer &&
            model::computes_sim_token(run.model.ca_variant)) {
          job.homogeneity = HomogeneityRow{job.variant, job.seed,
                                           evaluate::token_homogeneity(net, zero->samples)};
        }
        if (log) {
          std::lock_guard<std::mutex> lock(log_mutex);
          *log << "ablate " << job.variant << " seed " << job.seed << " mpjpe_all(mixed) "
               << job.rows.front().report.mpjpe_all << std::endl;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  const unsigned n_threads =
      std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  AblationResult result;
  for (auto& job : jobs) {
    for (auto& r : job.rows) result.rows.push_back(std::move(r));
    if (job.homogeneity) result.homogeneity.push_back(*job.homogeneity);
  }
  {
    auto out = open_out(out_dir / "ablation.csv");
    write_ablation_csv(out, result.rows);
    close_out(out, out_dir / "ablation.csv");
  }
  auto out = open_out(out_dir / "homogeneity.csv");
  write_homogeneity_csv(out, result.homogeneity);
  close_out(out, out_dir / "homogeneity.csv");
  return result;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,seed,symmetry,n_single,n_two,mpjpe_single,mpjpe_two,mpjpe_all,"
         "mpvpe_single,mpvpe_two,mpvpe_all,mrrpe,train_hash,eval_hash\n";
  out.precision(17);
  for (const auto& r : rows) {
    const auto& m = r.report;
    out << r.variant << ',' << r.seed << ',' << r.split << ',' << m.n_single << ',' << m.n_two
        << ',' << m.mpjpe_single << ',' << m.mpjpe_two << ',' << m.mpjpe_all << ','
        << m.mpvpe_single << ',' << m.mpvpe_two << ',' << m.mpvpe_all << ',' << m.mrrpe << ','
        << r.train_hash << ',' << r.eval_hash << '\n';
  }
}

void write_homogeneity_csv(std::ostream& out, const std::vector<HomogeneityRow>& rows) {
  out << "variant,seed,samples,raw,sim_halves,join_vs_sim,fused_more_homogeneous\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.variant << ',' << r.seed << ',' << r.stats.samples << ',' << r.stats.raw << ','
        << r.stats.sim_halves << ',' << r.stats.join_vs_sim << ','
        << (r.stats.fused_more_homogeneous() ? 1 : 0) << '\n';
  }
}

void write_matrix_csv(std::ostream& out, const std::string& name, const Tensor& m) {
  if (m.rank() == 0) throw DimensionError("write_matrix_csv: scalar input");
  const std::size_t cols = m.shape().back();
  const std::size_t rows = m.numel() / cols;
  out << "# name=" << name << " shape=" << rows << 'x' << cols << '\n';
  out.precision(17);
  auto d = m.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << d[r * cols + c];
    out << '\n';
  }
}

ExportSummary export_sample(const model::EANet& net, const synth::Sample& sample,
                            const fs::path& out_dir) {
  fs::create_directories(out_dir);
  NoGradGuard guard;
  const auto out = net.forward(sample.image, true);
  const auto& d = *out.diagnostics;
  ExportSummary summary;
  auto file = [&](const std::string& name, auto&& body) {
    const fs::path path = out_dir / name;
    auto os = open_out(path);
    body(os);
    close_out(os, path);
    summary.files.push_back(path);
  };
  const auto& tmpl = hand::default_template();
  for (auto side : {hand::Handedness::left, hand::Handedness::right}) {
    const auto& h = out.hand(side);
    file(std::string(hand::to_string(side)) + ".obj", [&](std::ostream& os) {
      hand::write_obj(os, hand::HandMesh{h.vertices, h.joints, side}, tmpl);
    });
  }
  file("features_left.csv", [&](std::ostream& os) { write_matrix_csv(os, "feature_left", as_rows(d.feature_left)); });
  file("features_right.csv", [&](std::ostream& os) { write_matrix_csv(os, "feature_right", as_rows(d.feature_right)); });
  for (std::size_t k = 0; k < d.tokens.size(); ++k) {
    const std::string stage = stage_name(k);
    if (d.tokens[k].sim.defined()) {
      file("tokens_" + stage + "_sim.csv", [&](std::ostream& os) { write_matrix_csv(os, stage + ".sim", d.tokens[k].sim); });
    }
    file("tokens_" + stage + "_join.csv", [&](std::ostream& os) { write_matrix_csv(os, stage + ".join", d.tokens[k].join); });
  }
  for (std::size_t i = 0; i < d.attention.size(); ++i) {
    const std::string name = d.attention_names[i];
    std::ostringstream fname;
    fname << "attention_" << std::setw(2) << std::setfill('0') << i << '_' << name << ".csv";
    file(fname.str(), [&](std::ostream& os) { write_matrix_csv(os, name, d.attention[i]); });
  }
  file("token_stats.csv", [&](std::ostream& os) {
    os << "stage,pair,intra_a,intra_b,inter,ratio\n";
    os.precision(17);
    auto row = [&](const std::string& stage, const char* pair, const Tensor& a, const Tensor& b) {
      const auto s = metrics::token_homogeneity(a, b);
      os << stage << ',' << pair << ',' << s.intra_a << ',' << s.intra_b << ',' << s.inter << ','
         << s.ratio << '\n';
    };
    row("input", "left_vs_right", as_rows(d.feature_left), as_rows(d.feature_right));
    for (std::size_t k = 0; k < d.tokens.size(); ++k) {
      const auto& ts = d.tokens[k];
      if (!ts.sim.defined()) continue;
      const std::size_t hw = ts.join.dim(0);
      row(stage_name(k), "sim_halves", ops::slice(ts.sim, 0, 1, 1 + hw),
          ops::slice(ts.sim, 0, 1 + hw, 1 + 2 * hw));
      row(stage_name(k), "join_vs_sim", ts.join, ops::slice(ts.sim, 0, 1, 1 + 2 * hw));
    }
  });
  return summary;
}

}  // namespace eanet::pipeline
