#include "gameprior/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "gameprior/parallel.hpp"

namespace gameprior {

void TrainConfig::validate() const {
  if (epochs == 0 || batch_size == 0 || lr_decay_every == 0 || backtrack_check_every == 0) {
    throw std::invalid_argument("TrainConfig: epochs, batch size and periods must be positive");
  }
  if (!(lr0 > 0.0) || !(lr_decay > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
  if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) {
    throw std::invalid_argument("TrainConfig: backtrack factor must lie in (0,1)");
  }
  if (!(backtrack_tolerance > 0.0)) throw std::invalid_argument("TrainConfig: backtrack tolerance must be positive");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("TrainConfig: noise sigma must be non-negative");
}

AdamState make_adam(const ModelParams& params) {
  AdamState s;
  for (const auto& p : params.parameters()) {
    s.m.emplace_back(p.free.shape(), 0.0);
    s.v.emplace_back(p.free.shape(), 0.0);
  }
  return s;
}

void adam_update(ModelParams& params, AdamState& state, const std::vector<Tensor>& grads, double lr) {
  auto& ps = params.parameters();
  if (grads.size() != ps.size() || state.m.size() != ps.size()) {
    throw std::invalid_argument("adam_update: one gradient and moment pair per parameter required");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i].trainable) continue;
    Tensor& f = ps[i].free;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    if (grads[i].shape() != f.shape()) {
      throw std::invalid_argument("adam_update: gradient of '" + ps[i].name + "' has shape " +
                                  shape_string(grads[i].shape()) + ", parameter " + shape_string(f.shape()));
    }
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double g = grads[i][k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      f[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

double loss(const Tensor& clean, const Tensor& estimate) {
  if (clean.shape() != estimate.shape()) {
    throw std::invalid_argument("loss: shapes " + shape_string(clean.shape()) + " and " +
                                shape_string(estimate.shape()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) s += (clean[i] - estimate[i]) * (clean[i] - estimate[i]);
  return s / static_cast<double>(clean.size());
}

double loss(const std::vector<Tensor>& clean, const std::vector<Tensor>& estimates) {
  if (clean.size() != estimates.size() || clean.empty()) {
    throw std::invalid_argument("loss: batch sizes differ or are empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) s += loss(clean[i], estimates[i]);
  return s / static_cast<double>(clean.size());
}

Tensor denoise(const ModelConfig& model, const std::vector<PriorSpec>& priors, const SolverConfig& solver,
               const ModelParams& params, const Tensor& noisy, std::vector<TraceRow>* trace) {
  const BoundParams bound(params, nullptr);
  Game game(model, priors, bound, ad::constant(noisy));
  SolveResult r = solve(game, solver);
  if (trace) *trace = std::move(r.trace);
  return game.reconstruct(r.codes).value();
}

StepResult loss_and_gradient(const ModelConfig& model, const std::vector<PriorSpec>& priors,
                             const SolverConfig& solver, const ModelParams& params,
                             const std::vector<TrainItem>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  const auto& ps = params.parameters();
  std::vector<double> losses(batch.size());
  std::vector<std::vector<Tensor>> grads(batch.size());
  parallel_for(batch.size(), [&](std::size_t b) {
    ad::Graph graph;
    const BoundParams bound(params, &graph);
    const TrainItem& item = batch[b];
    Game game(model, priors, bound, ad::constant(item.noisy));
    const SolveResult r = solve(game, solver);
    auto diff = ad::sub(game.reconstruct(r.codes), ad::constant(item.clean));
    auto l = ad::scale(ad::sum(ad::square(diff)), 1.0 / static_cast<double>(item.clean.size()));
    losses[b] = l.value()[0];
    if (!std::isfinite(losses[b])) throw DivergenceError(solver.iterations, "non-finite training loss");
    const ad::Gradients g = graph.backward(l, Tensor::scalar(1.0));
    auto& out = grads[b];
    for (const auto& p : ps) {
      out.push_back(p.trainable ? g.of(bound.free(p.name)) : Tensor(p.free.shape(), 0.0));
      if (!out.back().all_finite()) {
        throw DivergenceError(solver.iterations, "non-finite gradient for '" + p.name + "'");
      }
    }
  });

  StepResult result;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& p : ps) result.grads.emplace_back(p.free.shape(), 0.0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    result.loss += losses[b] * inv;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t k = 0; k < result.grads[i].size(); ++k) result.grads[i][k] += grads[b][i][k] * inv;
    }
  }
  return result;
}

double train_step(const std::vector<TrainItem>& batch, const ModelConfig& model, const std::vector<PriorSpec>& priors,
                  const SolverConfig& solver, ModelParams& params, AdamState& optimizer, double lr) {
  const StepResult r = loss_and_gradient(model, priors, solver, params, batch);
  adam_update(params, optimizer, r.grads, lr);
  return r.loss;
}

Tensor rotate90(const Tensor& image, int quarter_turns) {
  if (image.rank() != 2) throw std::invalid_argument("rotate90: image must be rank 2");
  Tensor out = image;
  for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) {
    const std::size_t h = out.dim(0), w = out.dim(1);
    Tensor next({w, h});
    // counter-clockwise: (r, c) -> (w-1-c, r)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) next[(w - 1 - c) * h + r] = out[r * w + c];
    out = std::move(next);
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.rank() != 2) throw std::invalid_argument("flip_horizontal: image must be rank 2");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out(image.shape());
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = image[r * w + (w - 1 - c)];
  return out;
}

Tensor random_crop(const Tensor& image, std::size_t size, bool rot90, bool hflip, std::mt19937_64& rng) {
  if (image.rank() != 2) throw std::invalid_argument("random_crop: image must be rank 2");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t ch = size == 0 ? h : std::min(size, h);
  const std::size_t cw = size == 0 ? w : std::min(size, w);
  const std::size_t r0 = std::uniform_int_distribution<std::size_t>(0, h - ch)(rng);
  const std::size_t c0 = std::uniform_int_distribution<std::size_t>(0, w - cw)(rng);
  Tensor crop({ch, cw});
  for (std::size_t r = 0; r < ch; ++r)
    for (std::size_t c = 0; c < cw; ++c) crop[r * cw + c] = image[(r0 + r) * w + c0 + c];
  if (rot90) crop = rotate90(crop, static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng)));
  if (hflip && std::uniform_int_distribution<int>(0, 1)(rng) == 1) crop = flip_horizontal(crop);
  return crop;
}

double learning_rate(const TrainConfig& config, const TrainState& state) {
  const double decays = static_cast<double>(state.step / config.lr_decay_every);
  return config.lr0 * state.lr_scale * std::pow(config.lr_decay, decays);
}

TrainState make_train_state(const ModelParams& params, const TrainConfig& config) {
  TrainState s{params, make_adam(params), 0, 1.0, std::mt19937_64(config.seed)};
  return s;
}

namespace {

Tensor centre_crop(const Tensor& image, std::size_t size) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t ch = size == 0 ? h : std::min(size, h);
  const std::size_t cw = size == 0 ? w : std::min(size, w);
  const std::size_t r0 = (h - ch) / 2, c0 = (w - cw) / 2;
  Tensor crop({ch, cw});
  for (std::size_t r = 0; r < ch; ++r)
    for (std::size_t c = 0; c < cw; ++c) crop[r * cw + c] = image[(r0 + r) * w + c0 + c];
  return crop;
}

Tensor noisy_copy(const Tensor& clean, double sigma, std::mt19937_64& rng) {
  Tensor out = clean;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : out.values()) v += n(rng);
  return out;
}

}  // namespace

double training_loss(const std::vector<Tensor>& dataset, const ModelConfig& model,
                     const std::vector<PriorSpec>& priors, const SolverConfig& solver, const TrainConfig& train,
                     const ModelParams& params) {
  if (dataset.empty()) throw std::invalid_argument("training_loss: empty dataset");
  std::vector<double> losses(dataset.size());
  parallel_for(dataset.size(), [&](std::size_t i) {
    std::mt19937_64 rng(train.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    const Tensor clean = centre_crop(dataset[i], train.crop_size);
    try {
      losses[i] = loss(clean, denoise(model, priors, solver, params, noisy_copy(clean, train.noise_sigma, rng)));
    } catch (const DivergenceError&) {
      losses[i] = std::numeric_limits<double>::infinity();
    }
  });
  double s = 0.0;
  for (double l : losses) s += l;
  return s / static_cast<double>(losses.size());
}

TrainResult run_training(const std::vector<Tensor>& dataset, const ModelConfig& model,
                         const std::vector<PriorSpec>& priors, const SolverConfig& solver, const TrainConfig& train,
                         TrainState state, const TrainHooks& hooks) {
  if (dataset.empty()) throw std::invalid_argument("run_training: dataset is empty");
  train.validate();
  solver.validate();
  if (state.optimizer.m.size() != state.params.parameters().size()) state.optimizer = make_adam(state.params);

  const std::uint64_t steps_per_epoch = (dataset.size() + train.batch_size - 1) / train.batch_size;
  std::uint64_t total = steps_per_epoch * train.epochs;
  if (train.max_steps) total = std::min<std::uint64_t>(total, train.max_steps);
  const std::uint64_t check_period = steps_per_epoch * train.backtrack_check_every;

  TrainResult result;
  Snapshot snapshot{state.params, state.optimizer, state.step,
                    training_loss(dataset, model, priors, solver, train, state.params)};
  if (!std::isfinite(snapshot.loss)) throw TrainingAborted("run_training: initial parameters diverge");

  auto restore = [&] {
    state.params = snapshot.params;
    state.optimizer = snapshot.optimizer;
    state.lr_scale *= train.backtrack_factor;
    ++result.restores;
    const double lr = learning_rate(train, state);
    if (hooks.on_restore) hooks.on_restore(snapshot, lr);
    if (lr < 1e-12) {
      std::ostringstream msg;
      msg << "training aborted at step " << state.step << ": learning rate " << lr << " underflowed after "
          << result.restores << " restores (last good loss " << snapshot.loss << ")";
      throw TrainingAborted(msg.str());
    }
  };

  std::vector<std::size_t> order(dataset.size());
  while (state.step < total) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
    std::vector<TrainItem> batch;
    for (std::size_t b = 0; b < std::min(train.batch_size, order.size()); ++b) {
      const Tensor clean = random_crop(dataset[order[b]], train.crop_size, train.rot90, train.hflip, state.rng);
      batch.push_back({noisy_copy(clean, train.noise_sigma, state.rng), clean});
    }
    const double lr = learning_rate(train, state);
    bool diverged = hooks.force_divergence && hooks.force_divergence(state.step);
    double batch_loss = std::numeric_limits<double>::quiet_NaN();
    if (!diverged) {
      try {
        batch_loss = train_step(batch, model, priors, solver, state.params, state.optimizer, lr);
      } catch (const DivergenceError&) {
        diverged = true;
      }
    }
    ++state.step;
    result.curve.push_back({state.step, batch_loss, lr});
    if (diverged) {
      restore();
      continue;
    }
    if (state.step % check_period == 0) {
      const double l = training_loss(dataset, model, priors, solver, train, state.params);
      if (!std::isfinite(l) || l > train.backtrack_tolerance * snapshot.loss) {
        restore();
      } else {
        snapshot = Snapshot{state.params, state.optimizer, state.step, l};
      }
    }
  }
  result.final_loss = training_loss(dataset, model, priors, solver, train, state.params);
  result.state = std::move(state);
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<LossRow>& curve) {
  out << "step,loss,lr\n";
  for (const auto& r : curve) out << r.step << ',' << r.loss << ',' << r.lr << '\n';
}

}  // namespace gameprior
