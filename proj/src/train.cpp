#include "eanet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>

#include "eanet/ops.hpp"

namespace eanet::train {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::vector<std::size_t> permutation(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 rng(mix(seed) ^ mix(epoch + 1));
  // Fisher-Yates with an explicit draw so the order is library independent.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

/// Sample-weighted mean of the step losses belonging to one epoch.
double epoch_mean(const checkpoint::TrainState& st, const Schedule& s, std::size_t epoch,
                  std::size_t n) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < s.steps_per_epoch; ++k) {
    const std::size_t step = epoch * s.steps_per_epoch + k;
    const std::size_t begin = k * s.batch_size;
    const std::size_t size = std::min(s.batch_size, n - begin);
    sum += st.step_losses[step] * static_cast<double>(size);
    count += size;
  }
  return sum / static_cast<double>(count);
}

void save_loss_csv(const std::filesystem::path& path, const checkpoint::TrainState& st,
                   const Schedule& s) {
  std::ofstream out(path);
  if (!out) throw std::ios_base::failure("cannot open " + path.string());
  write_loss_csv(out, st, s);
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

}  // namespace

double Schedule::lr(std::size_t step) const {
  double rate = base_lr;
  for (std::size_t at : anneal_steps) {
    if (step >= at) rate *= anneal_factor;
  }
  return rate;
}

Schedule make_schedule(const config::TrainConfig& cfg, std::size_t samples, bool overfit) {
  if (samples == 0) throw ConfigError("train: empty training set");
  Schedule s;
  s.anneal_factor = cfg.anneal_factor;
  if (overfit) {
    s.batch_size = samples;
    s.steps_per_epoch = 1;
    s.total_steps = cfg.overfit_steps;
    s.base_lr = cfg.overfit_lr;
  } else {
    s.batch_size = std::min(cfg.batch_size, samples);
    s.steps_per_epoch = (samples + s.batch_size - 1) / s.batch_size;
    s.total_steps = cfg.epochs * s.steps_per_epoch;
    s.base_lr = cfg.lr;
  }
  for (double f : overfit ? cfg.overfit_anneal_at : cfg.anneal_at) {
    s.anneal_steps.push_back(static_cast<std::size_t>(std::llround(f * static_cast<double>(s.total_steps))));
  }
  return s;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step, std::size_t samples,
                                       const Schedule& schedule) {
  const std::size_t epoch = step / schedule.steps_per_epoch;
  const std::size_t k = step % schedule.steps_per_epoch;
  const auto perm = permutation(seed, epoch, samples);
  const std::size_t begin = k * schedule.batch_size;
  const std::size_t end = std::min(samples, begin + schedule.batch_size);
  return {perm.begin() + static_cast<std::ptrdiff_t>(begin),
          perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

double mean_loss(const model::EANet& net, const std::vector<synth::Sample>& samples,
                 const model::LossWeights& lambdas) {
  NoGradGuard guard;
  double sum = 0.0;
  for (const auto& s : samples) sum += model::compute_loss(net.forward(s.image), s, lambdas).item();
  return sum / static_cast<double>(samples.size());
}

void write_loss_csv(std::ostream& out, const checkpoint::TrainState& state,
                    const Schedule& schedule) {
  out << "step,epoch,lr,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < state.step_losses.size(); ++i) {
    out << i << ',' << i / schedule.steps_per_epoch << ',' << schedule.lr(i) << ','
        << state.step_losses[i] << '\n';
  }
}

TrainResult train(model::EANet& net, const std::vector<synth::Sample>& data,
                  const config::RunConfig& cfg, const TrainOptions& options) {
  std::vector<synth::Sample> subset;
  if (options.overfit) {
    const std::size_t n = std::min(cfg.train.overfit_samples, data.size());
    subset.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n));
  }
  const std::vector<synth::Sample>& samples = options.overfit ? subset : data;
  const std::size_t n = samples.size();
  const Schedule schedule = make_schedule(cfg.train, n, options.overfit);

  std::vector<Tensor> params = net.parameters().tensors();
  AdamState adam = make_adam_state(params, AdamConfig{schedule.base_lr});
  checkpoint::TrainState state;
  if (options.resume) {
    const auto ckpt = checkpoint::load(*options.resume);
    if (auto field = config::first_difference(ckpt.config.model, cfg.model)) {
      throw ConfigError("resume: checkpoint differs in " + *field);
    }
    if (!(ckpt.config.train == cfg.train) || !(ckpt.config.lambdas == cfg.lambdas)) {
      throw ConfigError("resume: checkpoint was written with a different training config");
    }
    if (!ckpt.adam) throw ConfigError("resume: checkpoint has no optimizer state");
    checkpoint::copy_parameters(net, ckpt);
    adam = *ckpt.adam;
    state = ckpt.train;
  }

  const bool to_disk = !options.out_dir.empty();
  if (to_disk) std::filesystem::create_directories(options.out_dir);
  auto save = [&](const char* file) {
    if (to_disk && options.write_checkpoints) checkpoint::save(options.out_dir / file, net, cfg, &adam, &state);
  };

  const std::size_t stop = std::min(schedule.total_steps, options.stop_after.value_or(schedule.total_steps));
  while (state.step < stop) {
    const std::size_t step = state.step;
    adam.config.lr = schedule.lr(step);
    const auto batch = batch_indices(cfg.train.seed, step, n, schedule);
    net.parameters().zero_grad();
    double loss_sum = 0.0;
    try {
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        const auto& s = samples[idx];
        Tensor loss = model::compute_loss(net.forward(s.image), s, cfg.lambdas);
        loss_sum += loss.item();
        backward(ops::scale(loss, inv));
      }
      for (const auto& p : params) {
        if (p.has_grad()) detail::check_finite(p.grad(), "gradient");
      }
      adam_step(params, adam);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    state.step_losses.push_back(loss_sum / static_cast<double>(batch.size()));
    state.step += 1;

    if (state.step % schedule.steps_per_epoch == 0) {
      const std::size_t epoch = state.step / schedule.steps_per_epoch - 1;
      const double mean = epoch_mean(state, schedule, epoch, n);
      state.epoch_losses.push_back(mean);
      const bool best = state.best_epoch < 0 ||
                        mean < state.epoch_losses[static_cast<std::size_t>(state.best_epoch)];
      if (best) state.best_epoch = static_cast<std::int64_t>(epoch);
      if (options.log && (!options.overfit || state.step % 50 == 0 || state.step == 1)) {
        *options.log << "epoch " << epoch << " step " << state.step << " loss " << mean << '\n';
      }
      if (best && !options.overfit) save("best.ckpt");
    }
  }
  net.parameters().zero_grad();

  TrainResult result;
  result.finished = state.step >= schedule.total_steps;
  if (to_disk) {
    save("last.ckpt");
    save_loss_csv(options.out_dir / "loss.csv", state, schedule);
    if (result.finished) save("final.ckpt");
  }
  result.state = state;
  result.initial_loss = state.step_losses.empty() ? 0.0 : state.step_losses.front();
  result.final_loss = mean_loss(net, samples, cfg.lambdas);
  return result;
}

}  // namespace eanet::train
