#pragma once

// Training loop: minibatches of noisy crops, unrolled solve, l2 loss, Adam,
// step decay and snapshot backtracking.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gameprior/model.hpp"
#include "gameprior/priors.hpp"
#include "gameprior/solver.hpp"
#include "gameprior/tensor.hpp"

namespace gameprior {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  double lr0 = 6e-4;
  double lr_decay = 0.35;
  std::size_t lr_decay_every = 80;  // minibatch steps
  double backtrack_factor = 0.8;
  std::size_t backtrack_check_every = 10;  // epochs
  double backtrack_tolerance = 1.05;
  bool rot90 = true;
  bool hflip = true;
  std::size_t crop_size = 56;  // 0 trains on full images
  double noise_sigma = 25.0;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Adam moments, one pair per parameter in ModelParams order.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam(const ModelParams& params);

/// One Adam update of every trainable parameter's free value.
void adam_update(ModelParams& params, AdamState& state, const std::vector<Tensor>& grads, double lr);

struct Snapshot {
  ModelParams params;
  AdamState optimizer;
  std::uint64_t step = 0;
  double loss = 0.0;  // last known-good training loss
};

struct TrainItem {
  Tensor noisy;  // x, [h,w]
  Tensor clean;  // y, [h,w]
};

/// Mean squared error over pixels, averaged over the batch.
double loss(const Tensor& clean, const Tensor& estimate);
double loss(const std::vector<Tensor>& clean, const std::vector<Tensor>& estimates);

/// Restored image for one noisy input with fixed parameters.
Tensor denoise(const ModelConfig& model, const std::vector<PriorSpec>& priors, const SolverConfig& solver,
               const ModelParams& params, const Tensor& noisy, std::vector<TraceRow>* trace = nullptr);

struct StepResult {
  double loss = 0.0;
  std::vector<Tensor> grads;  // d loss / d free value, ModelParams order
};

/// Batch loss and its gradient. Items run in parallel; gradients are summed in
/// item order. Throws DivergenceError on non-finite loss or gradients.
StepResult loss_and_gradient(const ModelConfig& model, const std::vector<PriorSpec>& priors,
                             const SolverConfig& solver, const ModelParams& params,
                             const std::vector<TrainItem>& batch);

/// loss_and_gradient followed by one Adam step. Returns the batch loss.
double train_step(const std::vector<TrainItem>& batch, const ModelConfig& model, const std::vector<PriorSpec>& priors,
                  const SolverConfig& solver, ModelParams& params, AdamState& optimizer, double lr);

/// Random crop of side `size` (whole image when 0 or larger than the image),
/// then optional rot90 and horizontal flip.
Tensor random_crop(const Tensor& image, std::size_t size, bool rot90, bool hflip, std::mt19937_64& rng);
Tensor rotate90(const Tensor& image, int quarter_turns);
Tensor flip_horizontal(const Tensor& image);

struct LossRow {
  std::uint64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainState {
  ModelParams params;
  AdamState optimizer;
  std::uint64_t step = 0;  // minibatch updates performed
  double lr_scale = 1.0;   // product of backtracking factors
  std::mt19937_64 rng;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct TrainHooks {
  /// Returning true before step `s` treats that step as divergent.
  std::function<bool(std::uint64_t step)> force_divergence;
  /// Called after each backtracking restore.
  std::function<void(const Snapshot& restored, double new_lr)> on_restore;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  TrainState state;
  std::vector<LossRow> curve;
  double final_loss = 0.0;  // training loss on the fixed evaluation set
  std::size_t restores = 0;
};

/// Current learning rate of a state.
double learning_rate(const TrainConfig& config, const TrainState& state);

TrainState make_train_state(const ModelParams& params, const TrainConfig& config);

/// Loss on the fixed evaluation set (each image once, centre crop, seeded noise).
double training_loss(const std::vector<Tensor>& dataset, const ModelConfig& model,
                     const std::vector<PriorSpec>& priors, const SolverConfig& solver, const TrainConfig& train,
                     const ModelParams& params);

/// Trains from `state` (fresh or resumed) until `epochs` or `max_steps`.
TrainResult run_training(const std::vector<Tensor>& dataset, const ModelConfig& model,
                         const std::vector<PriorSpec>& priors, const SolverConfig& solver, const TrainConfig& train,
                         TrainState state, const TrainHooks& hooks = {});

void write_loss_csv(std::ostream& out, const std::vector<LossRow>& curve);

}  // namespace gameprior
