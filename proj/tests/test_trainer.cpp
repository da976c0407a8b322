#include <chrono>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gameprior/checkpoint.hpp"
#include "gameprior/config.hpp"
#include "gameprior/trainer.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace gameprior;
using gameprior::testing::piecewise_constant;
using gameprior::testing::random_tensor;

namespace {

struct Setup {
  ModelConfig model{DataKind::pixel, 1, 1, false};
  std::vector<PriorSpec> priors{{PriorKind::tv}};
  SolverConfig solver;
  TrainConfig train;
  std::vector<Tensor> data;
  ModelParams params;
};

Setup small_setup(std::size_t images = 3, std::size_t side = 12, std::size_t K = 4) {
  Setup s;
  s.solver.iterations = K;
  s.solver.eta0 = 0.5;
  s.train.batch_size = 2;
  s.train.crop_size = 8;
  s.train.lr0 = 0.02;
  s.train.backtrack_check_every = 1000;
  s.train.seed = 7;
  for (std::size_t i = 0; i < images; ++i) s.data.push_back(piecewise_constant(side, side, 10 + i));
  s.params = init_params(s.data, s.model, s.priors, InitOptions{K, 0.5, 1});
  return s;
}

std::vector<TrainItem> items(const Setup& s, std::uint64_t seed) {
  std::vector<TrainItem> out;
  for (std::size_t i = 0; i < s.data.size(); ++i) out.push_back({s.data[i] + random_tensor(s.data[i].shape(), seed + i, 25.0), s.data[i]});
  return out;
}

}  // namespace

TEST_CASE("mean squared error") {
  CHECK(loss(Tensor({3, 3}, 1.0), Tensor({3, 3}, 3.0)) == doctest::Approx(4.0));
  CHECK(loss({Tensor({2, 2}, 0.0), Tensor({2, 2}, 0.0)}, {Tensor({2, 2}, 1.0), Tensor({2, 2}, 3.0)}) ==
        doctest::Approx(5.0));
  CHECK_THROWS_AS(loss(Tensor({2, 2}, 0.0), Tensor({2, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("adam") {
  ModelParams p;
  p.add("a", Tensor::vector({1.0, -2.0, 0.5}));
  p.add("b", Tensor::vector({3.0}), Constraint::positive);
  p.get("b").trainable = false;
  const ModelParams before = p;
  AdamState s = make_adam(p);
  const std::vector<Tensor> grads{Tensor::vector({0.3, -40.0, 1e-3}), Tensor::vector({5.0})};

  SUBCASE("first step has magnitude lr") {
    adam_update(p, s, grads, 0.01);
    for (std::size_t i = 0; i < 3; ++i) {
      const double moved = p.get("a").free[i] - before.get("a").free[i];
      CHECK(std::abs(moved) == doctest::Approx(0.01).epsilon(1e-4));
      CHECK((moved < 0) == (grads[0][i] > 0));
    }
    CHECK(p.get("b") == before.get("b"));
    CHECK(s.step == 1);
  }
  SUBCASE("zero learning rate keeps the parameters") {
    for (int k = 0; k < 3; ++k) adam_update(p, s, grads, 0.0);
    CHECK(p == before);
  }
  SUBCASE("second step against the textbook recursion") {
    const std::vector<Tensor> g2{Tensor::vector({-0.1, 2.0, 0.0}), Tensor::vector({0.0})};
    adam_update(p, s, grads, 0.01);
    adam_update(p, s, g2, 0.01);
    for (std::size_t i = 0; i < 3; ++i) {
      double m = 0, v = 0, x = before.get("a").free[i];
      for (int t = 1; t <= 2; ++t) {
        const double g = (t == 1 ? grads : g2)[0][i];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      }
      CHECK(p.get("a").free[i] == doctest::Approx(x).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(adam_update(p, s, {Tensor::vector({1.0})}, 0.1), std::invalid_argument);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c;
  c.lr0 = 1e-3;
  TrainState s = make_train_state(ModelParams{}, c);
  CHECK(learning_rate(c, s) == doctest::Approx(1e-3));
  s.step = 79;
  CHECK(learning_rate(c, s) == doctest::Approx(1e-3));
  s.step = 80;
  CHECK(learning_rate(c, s) == doctest::Approx(0.35e-3));
  s.step = 160;
  CHECK(learning_rate(c, s) == doctest::Approx(1e-3 * 0.35 * 0.35));
  s.lr_scale = 0.8;
  CHECK(learning_rate(c, s) == doctest::Approx(0.8e-3 * 0.35 * 0.35));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.backtrack_factor = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("augmentation") {
  const Tensor img = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(rotate90(img, 1) == Tensor::matrix({{3, 6}, {2, 5}, {1, 4}}));
  CHECK(rotate90(img, 4) == img);
  CHECK(rotate90(rotate90(img, 1), 3) == img);
  CHECK(flip_horizontal(img) == Tensor::matrix({{3, 2, 1}, {6, 5, 4}}));

  const Tensor big = random_tensor({10, 13}, 3);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor c = random_crop(big, 4, false, false, rng);
    REQUIRE(c.shape() == Shape{4, 4});
    bool found = false;
    for (std::size_t r = 0; r + 4 <= 10 && !found; ++r)
      for (std::size_t col = 0; col + 4 <= 13 && !found; ++col) {
        bool same = true;
        for (std::size_t i = 0; i < 16 && same; ++i) same = c[i] == big.at(r + i / 4, col + i % 4);
        found = same;
      }
    CHECK(found);
    CHECK(random_crop(big, 5, true, true, rng).shape() == Shape{5, 5});
  }
  CHECK(random_crop(big, 0, false, false, rng) == big);
  const Shape whole = random_crop(big, 0, true, false, rng).shape();
  CHECK((whole == Shape{10, 13} || whole == Shape{13, 10}));
}

TEST_CASE("batch gradient does not depend on item order") {
  const Setup s = small_setup();
  std::vector<TrainItem> batch = items(s, 100);
  const StepResult a = loss_and_gradient(s.model, s.priors, s.solver, s.params, batch);
  std::swap(batch[0], batch[2]);
  const StepResult b = loss_and_gradient(s.model, s.priors, s.solver, s.params, batch);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-13));
  REQUIRE(a.grads.size() == b.grads.size());
  for (std::size_t i = 0; i < a.grads.size(); ++i)
    CHECK(gameprior::testing::relative_error(a.grads[i], b.grads[i]) < 1e-12);
  // the batch loss is the mean of single-item losses
  double mean = 0.0;
  for (const auto& it : batch) mean += loss_and_gradient(s.model, s.priors, s.solver, s.params, {it}).loss / 3.0;
  CHECK(a.loss == doctest::Approx(mean).epsilon(1e-13));
}

TEST_CASE("training is deterministic") {
  Setup s = small_setup();
  s.train.max_steps = 5;
  const TrainResult a = run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train));
  const TrainResult b = run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train));
  CHECK(a.state == b.state);
  CHECK(a.state.step == 5);
  REQUIRE(a.curve.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.curve[i].loss == b.curve[i].loss);
  CHECK_FALSE(a.state.params == s.params);
}

TEST_CASE("divergence restores the snapshot and shrinks the step") {
  Setup s = small_setup();
  s.train.max_steps = 4;
  std::size_t calls = 0;
  TrainHooks hooks;
  hooks.force_divergence = [](std::uint64_t step) { return step == 3; };
  hooks.on_restore = [&](const Snapshot& snap, double lr) {
    ++calls;
    CHECK(snap.params == s.params);
    CHECK(snap.step == 0);
    CHECK(lr == doctest::Approx(0.8 * s.train.lr0));
  };
  const TrainResult r = run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train), hooks);
  CHECK(calls == 1);
  CHECK(r.restores == 1);
  CHECK(r.state.params == s.params);
  CHECK(r.state.optimizer == make_adam(s.params));
  CHECK(r.state.lr_scale == doctest::Approx(0.8));
  CHECK(r.state.step == 4);
  CHECK(std::isnan(r.curve.back().loss));

  // always diverging: the learning rate underflows and training stops
  hooks.force_divergence = [](std::uint64_t) { return true; };
  hooks.on_restore = nullptr;
  s.train.max_steps = 1000;
  CHECK_THROWS_AS(run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train), hooks),
                  TrainingAborted);
}

TEST_CASE("loss increase at a check triggers backtracking") {
  Setup s = small_setup();
  s.train.max_steps = 6;
  s.train.batch_size = 3;  // one step per epoch
  s.train.backtrack_check_every = 2;
  s.train.backtrack_tolerance = 1e-9;  // every check counts as an increase
  const TrainResult r = run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train));
  CHECK(r.restores == 3);
  CHECK(r.state.lr_scale == doctest::Approx(0.8 * 0.8 * 0.8));
  CHECK(r.state.params == s.params);
}

TEST_CASE("resuming from a checkpoint continues the same trajectory") {
  Setup s = small_setup();
  s.train.max_steps = 10;
  const TrainResult straight =
      run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train));

  TrainConfig first = s.train;
  first.max_steps = 5;
  const TrainResult half = run_training(s.data, s.model, s.priors, s.solver, first, make_train_state(s.params, s.train));
  RunConfig rc{s.model, s.priors, s.solver, s.train};
  std::stringstream buf;
  write_checkpoint(buf, Checkpoint{rc, half.state});
  const Checkpoint back = read_checkpoint(buf);
  CHECK(back.state == half.state);
  const TrainResult resumed = run_training(s.data, back.config.model, back.config.priors, back.config.solver,
                                           back.config.train, back.state);
  CHECK(resumed.state == straight.state);
  for (std::size_t i = 0; i < 5; ++i) CHECK(resumed.curve[i].loss == straight.curve[5 + i].loss);
}

TEST_CASE("pixel TV training halves the loss") {
  Setup s;
  s.solver = preset("tv").solver;
  s.train.batch_size = 1;
  s.train.crop_size = 0;
  s.train.lr0 = 0.05;
  s.train.lr_decay_every = 200;
  s.train.max_steps = 200;
  s.train.epochs = 200;
  s.train.backtrack_check_every = 50;
  s.data = {piecewise_constant(16, 16, 42)};
  s.params = init_params(s.data, s.model, s.priors, InitOptions{s.solver.iterations, s.solver.eta0, 0});
  const double before = training_loss(s.data, s.model, s.priors, s.solver, s.train, s.params);
  const TrainResult r = run_training(s.data, s.model, s.priors, s.solver, s.train, make_train_state(s.params, s.train));
  MESSAGE("loss " << before << " -> " << r.final_loss);
  CHECK(r.final_loss <= 0.5 * before);
}

TEST_CASE("loss csv") {
  std::ostringstream out;
  write_loss_csv(out, {{1, 2.5, 0.001}});
  CHECK(out.str() == "step,loss,lr\n1,2.5,0.001\n");
}
