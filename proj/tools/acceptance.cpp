// Acceptance run: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "eanet/eatf.hpp"
#include "eanet/gradcheck.hpp"
#include "eanet/ops.hpp"
#include "eanet/pipeline.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace eanet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_files(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && read_bytes(a) == read_bytes(b);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// 1. Gradient suite.
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = gradcheck::run_suite({});
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& r : rows) {
    all = all && r.pass && r.max_rel_error < 1e-5;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  return {all && secs < 60.0,
          std::to_string(rows.size()) + " checks, worst " + fmt("%.2e", worst) + " (" + worst_name +
              ") < 1e-5, " + fmt("%.1f", secs) + " s < 60 s"};
}

// 2. Shape laws at paper scale and desk scale.
Outcome shape_laws() {
  NoGradGuard guard;
  std::vector<std::string> bad;
  model::ModelConfig paper;
  paper.image_size = 256;
  paper.feature_size = 8;
  paper.backbone_channels = 2048;
  nn::ParameterStore store(0);
  const auto w = model::make_weights(store, paper);
  const std::size_t c = paper.channels();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_map = [&] {
    std::vector<double> v(8 * 8 * c);
    for (auto& x : v) x = g(rng);
    return Tensor({8, 8, c}, v);
  };
  const Tensor fl = random_map();
  const Tensor fr = random_map();
  const nn::BlockOptions opts{paper.heads, paper.pre_norm};
  const Tensor sim = model::make_sim_token(fl, fr, w.eablock.extract, opts);
  if (sim.shape() != Shape{129, 512}) bad.push_back("sim_token " + shape_str(sim.shape()));
  const Tensor inter = model::fuseformer(fl, fr, w.eablock.extract, paper.ca_variant, opts);
  if (inter.shape() != Shape{64, 512}) bad.push_back("fuseformer " + shape_str(inter.shape()));
  const auto enhanced = model::eablock(fl, fr, w.eablock, paper);
  for (const auto& e : enhanced) {
    if (e.shape() != Shape{8, 8, 640}) bad.push_back("eablock " + shape_str(e.shape()));
  }

  config::RunConfig desk;
  const auto sample = synth::generate(1, 1, desk.data.synth).front();
  const model::EANet net(desk.model, 0);
  const auto out = net.forward(sample.image, true);
  const std::size_t hw = desk.model.spatial();
  const auto& tok = out.diagnostics->tokens.front();
  if (tok.sim.dim(0) != 2 * hw + 1) bad.push_back("desk sim_token " + shape_str(tok.sim.shape()));
  if (tok.join.dim(0) != hw) bad.push_back("desk join_token " + shape_str(tok.join.shape()));
  for (const auto* h : {&out.left, &out.right}) {
    if (h->theta.numel() != 48) bad.push_back("theta " + shape_str(h->theta.shape()));
    if (h->beta.numel() != 10) bad.push_back("beta " + shape_str(h->beta.shape()));
  }
  if (out.rel_translation.numel() != 3) bad.push_back("translation");
  std::string detail = "sim 129x512, fuseformer 64x512, eablock 8x8x640, theta/beta/translation 48/10/3";
  if (!bad.empty()) {
    detail = "mismatch:";
    for (const auto& b : bad) detail += " " + b;
  }
  return {bad.empty(), detail};
}

// 3. Overfit.
Outcome overfit() {
  config::RunConfig cfg;
  const auto data = synth::generate(pipeline::split_seed(cfg.data.seed, 0),
                                    cfg.train.overfit_samples, cfg.data.synth);
  model::EANet net(cfg.model, cfg.train.seed);
  train::TrainOptions opts;
  opts.overfit = true;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::train(net, data, cfg, opts);
  const double secs = seconds_since(t0);
  const double ratio = r.final_loss / r.initial_loss;
  return {ratio < 0.05 && secs < 300.0,
          std::to_string(data.size()) + " samples, " + std::to_string(r.state.step) +
              " steps: loss " + fmt("%.4f", r.initial_loss) + " -> " + fmt("%.4f", r.final_loss) +
              " (" + fmt("%.2f", 100.0 * ratio) + "% < 5%), " + fmt("%.0f", secs) + " s < 300 s"};
}

// 4-6. Ablation grid.
struct AblationOutcomes {
  Outcome blocks, ca, homogeneity;
};

AblationOutcomes ablation(const fs::path& config_path, const fs::path& work, std::ostream* log) {
  auto cfg = config::load(config_path);
  cfg.ablation.variants = {"fuseformer", "sa_only", "ca_only", "no_ca"};
  cfg.ablation.seeds = {0, 1, 2, 3, 4};
  const fs::path data = work / "data";
  pipeline::generate_datasets(cfg, data, true);
  const auto result = pipeline::ablate(cfg, data, work / "ablate", pipeline::thread_cap(), log);

  std::map<std::pair<std::string, std::uint64_t>, double> mixed;
  std::set<std::string> hashes;
  for (const auto& r : result.rows) {
    if (r.split != "mixed") continue;
    mixed[{r.variant, r.seed}] = r.report.mpjpe_all;
    hashes.insert(r.train_hash + "/" + r.eval_hash);
  }
  auto value = [&](const std::string& v, std::uint64_t s) { return mixed.at({v, s}); };

  AblationOutcomes out;
  int wins_blocks = 0, wins_ca = 0;
  std::string per_seed_blocks, per_seed_ca;
  for (auto s : cfg.ablation.seeds) {
    const double ff = value("fuseformer", s);
    const bool block_win = ff < value("sa_only", s) && ff < value("ca_only", s);
    const bool ca_win = ff < value("no_ca", s);
    wins_blocks += block_win;
    wins_ca += ca_win;
    per_seed_blocks += " s" + std::to_string(s) + ":" + fmt("%.2f", ff) + "/" +
                       fmt("%.2f", value("sa_only", s)) + "/" + fmt("%.2f", value("ca_only", s));
    per_seed_ca += " s" + std::to_string(s) + ":" + fmt("%.2f", ff) + "/" + fmt("%.2f", value("no_ca", s));
  }
  const bool same_data = hashes.size() == 1;
  out.blocks = {wins_blocks >= 3 && same_data,
                std::to_string(wins_blocks) + "/5 seeds fuseformer < sa_only and ca_only (need 3);" +
                    " mpjpe_all ff/sa/ca" + per_seed_blocks + (same_data ? "" : "; data hashes differ")};
  out.ca = {wins_ca >= 3 && same_data,
            std::to_string(wins_ca) + "/5 seeds tj_ts < no_ca (need 3); mpjpe_all tj_ts/no_ca" + per_seed_ca};

  int wins_h = 0;
  std::string per_seed_h;
  for (const auto& h : result.homogeneity) {
    if (h.variant != "fuseformer") continue;
    wins_h += h.stats.fused_more_homogeneous();
    per_seed_h += " s" + std::to_string(h.seed) + ":" + fmt("%.3f", h.stats.sim_halves) + "," +
                  fmt("%.3f", h.stats.join_vs_sim) + "<" + fmt("%.3f", h.stats.raw) + "?" +
                  (h.stats.fused_more_homogeneous() ? "y" : "n");
  }
  out.homogeneity = {wins_h >= 3, std::to_string(wins_h) +
                                      "/5 seeds with sim-halves and join-vs-sim ratios below raw (need 3);" +
                                      per_seed_h};
  return out;
}

// 7. Metric oracles.
Outcome metric_oracles() {
  NoGradGuard guard;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  const auto& tmpl = hand::default_template();
  const auto bones = tmpl.bones();
  double worst = 0.0;
  double self = 0.0;
  auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  const auto limits = hand::PoseLimits::defaults();
  for (int t = 0; t < 100; ++t) {
    const auto gj = oracle::random_cloud(rng, hand::kJoints, 0.04);
    const auto pj = oracle::random_cloud(rng, hand::kJoints, 0.04);
    const Tensor gjt = oracle::tensor(gj), pjt = oracle::tensor(pj);
    track(metrics::mpjpe(pjt, gjt), oracle::mpjpe(pj, gj, hand::kRootJoint, bones));
    self = std::max(self, metrics::mpjpe(gjt, gjt));

    const auto gv = oracle::random_cloud(rng, hand::kVertices, 0.05);
    const auto pv = oracle::random_cloud(rng, hand::kVertices, 0.05);
    track(metrics::mpvpe_scale_aligned(oracle::tensor(pv), oracle::tensor(gv), pjt, gjt),
          oracle::mpvpe(pv, gv, pj[hand::kRootJoint], gj[hand::kRootJoint]));
    self = std::max(self, metrics::mpvpe_scale_aligned(oracle::tensor(gv), oracle::tensor(gv), gjt, gjt));

    const oracle::Point a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)};
    const Tensor at = Tensor::vector({a[0], a[1], a[2]}), bt = Tensor::vector({b[0], b[1], b[2]});
    track(metrics::mrrpe(at, bt), oracle::mrrpe(a, b));
    self = std::max(self, metrics::mrrpe(at, at));

    const auto pl = hand::sample_pose(rng, limits);
    const auto pr = hand::sample_pose(rng, limits);
    track(metrics::pose_difference(pl, pr), oracle::pose_difference(pl, pr));
    self = std::max(self, metrics::pose_difference(pl, hand::mirror_pose(pl)));
  }
  // Bone-length alignment absorbs a uniform x2 scaling of the prediction.
  double scale_gap = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto gj = oracle::random_cloud(rng, hand::kJoints, 0.04);
    const auto pj = oracle::random_cloud(rng, hand::kJoints, 0.04);
    const Tensor pjt = oracle::tensor(pj), gjt = oracle::tensor(gj);
    scale_gap = std::max(scale_gap, std::abs(metrics::mpjpe(ops::scale(pjt, 2.0), gjt) -
                                             metrics::mpjpe(pjt, gjt)));
    scale_gap = std::max(scale_gap, metrics::mpjpe(ops::scale(gjt, 2.0), gjt));
  }
  return {worst <= 1e-12 && self <= 1e-12 && scale_gap <= 1e-12,
          "4 metrics x 100 fixtures: max |lib - oracle| " + fmt("%.1e", worst) +
              " mm <= 1e-12; metric(x,x) max " + fmt("%.1e", self) + "; x2 scale gap " +
              fmt("%.1e", scale_gap)};
}

// 8. Hand-model fidelity.
Outcome hand_fidelity() {
  NoGradGuard guard;
  const auto& tmpl = hand::default_template();
  const hand::HandPose zero;
  const auto rest = hand::pose_hand(zero, hand::Handedness::right, tmpl);
  const double template_err = std::max(max_abs_diff(rest.vertices, tmpl.vertices),
                                       max_abs_diff(rest.joints, tmpl.rest_joints));

  std::mt19937_64 rng(8);
  const auto limits = hand::PoseLimits::defaults();
  bool involution = true;
  double rigid_err = 0.0;
  std::uniform_real_distribution<double> ang(-3.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    hand::HandPose p = hand::sample_pose(rng, limits);
    const auto mesh = hand::pose_hand(p, hand::Handedness::right, tmpl);
    const auto twice = hand::flip_hand(hand::flip_hand(mesh));
    involution = involution && bitwise_equal(twice.vertices, mesh.vertices) &&
                 bitwise_equal(twice.joints, mesh.joints) && twice.side == mesh.side;
    involution = involution && hand::mirror_pose(hand::mirror_pose(p)) == p;

    // Changing the global rotation from identity to R rotates the mesh about the wrist.
    p.theta[0] = p.theta[1] = p.theta[2] = 0.0;
    const auto base = hand::pose_hand(p, hand::Handedness::right, tmpl);
    hand::HandPose q = p;
    const double r[3] = {ang(rng), ang(rng), ang(rng)};
    for (int k = 0; k < 3; ++k) q.theta[k] = r[k] / 2.0;
    const auto turned = hand::pose_hand(q, hand::Handedness::right, tmpl);
    const Tensor rot = ops::rodrigues(Tensor({1, 3}, {q.theta[0], q.theta[1], q.theta[2]}));
    const auto R = rot.to_vector();
    const auto bw = base.joints.to_vector();
    const auto tw = turned.joints.to_vector();
    const auto bv = base.vertices.to_vector();
    const auto tv = turned.vertices.to_vector();
    for (std::size_t i = 0; i < bv.size() / 3; ++i) {
      for (int a = 0; a < 3; ++a) {
        double x = 0.0;
        for (int b = 0; b < 3; ++b) x += R[a * 3 + b] * (bv[i * 3 + b] - bw[b]);
        rigid_err = std::max(rigid_err, std::abs(x - (tv[i * 3 + a] - tw[a])));
      }
    }
  }
  return {template_err <= 1e-12 && involution && rigid_err <= 1e-9,
          "zero pose vs template " + fmt("%.1e", template_err) + " <= 1e-12; flip/mirror involution " +
              (involution ? "bitwise" : "BROKEN") + "; rigid equivariance " + fmt("%.1e", rigid_err) +
              " <= 1e-9"};
}

// 9. Determinism and formats.
Outcome determinism(const fs::path& work) {
  std::vector<std::string> bad;
  config::RunConfig cfg;
  cfg.data.train_count = 16;
  cfg.data.val_count = 8;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 8;
  const fs::path a = work / "det_a", b = work / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto files = pipeline::generate_datasets(cfg, a / "data", true);
  pipeline::generate_datasets(cfg, b / "data", true);
  for (const auto& f : files) {
    if (!same_files(a / "data" / f.name, b / "data" / f.name)) bad.push_back("dataset " + f.name);
  }

  pipeline::train_run(cfg, a / "data", a / "train", {});
  pipeline::train_run(cfg, a / "data", b / "train", {});
  if (!same_files(a / "train" / "final.ckpt", b / "train" / "final.ckpt")) bad.push_back("training");
  train::TrainOptions stop;
  stop.stop_after = 3;
  pipeline::train_run(cfg, a / "data", a / "resume", stop);
  train::TrainOptions resume;
  resume.resume = a / "resume" / "last.ckpt";
  pipeline::train_run(cfg, a / "data", a / "resume", resume);
  if (!same_files(a / "train" / "final.ckpt", a / "resume" / "final.ckpt") ||
      !same_files(a / "train" / "loss.csv", a / "resume" / "loss.csv")) {
    bad.push_back("resume");
  }

  pipeline::eval_run(a / "train" / "final.ckpt", pipeline::val_file(a / "data"), &cfg.model, a / "eval");
  pipeline::eval_run(a / "train" / "final.ckpt", pipeline::val_file(a / "data"), &cfg.model, b / "eval");
  for (const char* f : {"report.csv", "report.json", "samples.csv"}) {
    if (!same_files(a / "eval" / f, b / "eval" / f)) bad.push_back(std::string("evaluation ") + f);
  }

  // EATF round trip including signed zero, subnormal and extreme magnitudes.
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> vals(3 * 4 * 5);
  for (auto& v : vals) v = g(rng);
  vals[0] = -0.0;
  vals[1] = 4.9e-324;
  vals[2] = 1.7976931348623157e308;
  const Tensor t({3, 4, 5}, vals);
  eatf::save(a / "t.eatf", t);
  if (!bitwise_equal(eatf::load(a / "t.eatf"), t) || !bitwise_equal(eatf::decode(eatf::encode(t)), t)) {
    bad.push_back("eatf");
  }
  const auto ds = synth::read_dataset(pipeline::train_file(a / "data"));
  const auto regen = synth::generate(pipeline::split_seed(cfg.data.seed, 0), cfg.data.train_count, cfg.data.synth);
  bool ds_ok = ds.size() == regen.size();
  for (std::size_t i = 0; ds_ok && i < ds.size(); ++i) ds_ok = synth::same_sample(ds[i], regen[i]);
  synth::write_dataset(ds, a / "again.eads");
  ds_ok = ds_ok && same_files(a / "again.eads", pipeline::train_file(a / "data"));
  if (!ds_ok) bad.push_back("dataset round trip");

  // OBJ: parse back as a viewer would.
  const auto net = checkpoint::restore_model(checkpoint::load(a / "train" / "final.ckpt"));
  pipeline::export_sample(*net, ds.front(), a / "export");
  const auto& tmpl = hand::default_template();
  for (const char* name : {"left.obj", "right.obj"}) {
    std::ifstream in(a / "export" / name);
    std::string line;
    std::size_t verts = 0, faces = 0;
    bool ok = true;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "v") {
        double x, y, z;
        ok = ok && static_cast<bool>(ls >> x >> y >> z) && std::isfinite(x + y + z);
        ++verts;
      } else if (tag == "f") {
        long i, j, k;
        ok = ok && static_cast<bool>(ls >> i >> j >> k);
        ok = ok && i >= 1 && j >= 1 && k >= 1 && i != j && j != k && i != k;
        ok = ok && static_cast<std::size_t>(std::max({i, j, k})) <= tmpl.vertex_count();
        ++faces;
      } else {
        ok = ok && (tag.empty() || tag[0] == '#');
      }
    }
    if (!ok || verts != tmpl.vertex_count() || faces != tmpl.faces.size()) {
      bad.push_back(std::string("obj ") + name);
    }
  }
  std::string detail = "datasets, training (incl. interrupted resume), evaluation bit-identical; "
                       "EATF and dataset round trips bitwise; OBJ " +
                       std::to_string(tmpl.vertex_count()) + " v / " +
                       std::to_string(tmpl.faces.size()) + " f parse cleanly";
  if (!bad.empty()) {
    detail = "failed:";
    for (const auto& s : bad) detail += " [" + s + "]";
  }
  return {bad.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-9"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  std::string config_path = EANET_ACCEPTANCE_CONFIG;
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--work", work, "scratch directory");
  app.add_option("--config", config_path, "config for the ablation criteria");
  std::vector<int> expect_fail;
  app.add_option("--expect-fail", expect_fail,
                 "criteria known to fail at this scale; they still run and print FAIL but do not set "
                 "the exit code (an unexpected PASS does)")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  fs::create_directories(work);

  std::map<int, std::pair<std::string, Outcome>> results;
  auto run = [&](int k, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    results[k] = {name, o};
    std::cout << "[" << (o.pass ? "PASS" : "FAIL") << "] " << k << " " << name << ": " << o.detail
              << " (" << fmt("%.1f", seconds_since(t0)) << " s)" << std::endl;
  };

  run(1, "gradient suite", gradient_suite);
  run(2, "shape laws", shape_laws);
  run(3, "overfit", overfit);
  if (wanted(4) || wanted(5) || wanted(6)) {
    const auto t0 = std::chrono::steady_clock::now();
    AblationOutcomes ab;
    try {
      ab = ablation(config_path, fs::path(work) / "ablation", &std::cerr);
    } catch (const std::exception& e) {
      const Outcome f{false, std::string("exception: ") + e.what()};
      ab = {f, f, f};
    }
    const std::string took = " (" + fmt("%.1f", seconds_since(t0)) + " s for the grid)";
    const std::pair<int, std::pair<const char*, Outcome*>> items[] = {
        {4, {"ablation ordering", &ab.blocks}},
        {5, {"CA assignment vs no CA", &ab.ca}},
        {6, {"token homogeneity", &ab.homogeneity}}};
    for (const auto& [k, item] : items) {
      if (!wanted(k)) continue;
      results[k] = {item.first, *item.second};
      std::cout << "[" << (item.second->pass ? "PASS" : "FAIL") << "] " << k << " " << item.first
                << ": " << item.second->detail << took << std::endl;
    }
  }
  run(7, "metric oracles", metric_oracles);
  run(8, "hand-model fidelity", hand_fidelity);
  run(9, "determinism and formats", [&] { return determinism(work); });

  std::size_t passed = 0;
  bool ok = true;
  std::string expected, unexpected;
  for (const auto& [k, r] : results) {
    passed += r.second.pass;
    const bool listed = std::find(expect_fail.begin(), expect_fail.end(), k) != expect_fail.end();
    if (listed && !r.second.pass) expected += " " + std::to_string(k);
    if (listed == r.second.pass) {
      ok = false;
      unexpected += " " + std::to_string(k);
    }
  }
  std::cout << passed << "/" << results.size() << " criteria passed";
  if (!expected.empty()) std::cout << "; expected failures:" << expected;
  if (!unexpected.empty()) std::cout << "; unexpected results:" << unexpected;
  std::cout << std::endl;
  return ok ? 0 : 1;
}
