#include <benchmark/benchmark.h>

#include <random>

#include "gameprior/config.hpp"
#include "gameprior/patch.hpp"
#include "gameprior/priors.hpp"
#include "gameprior/solver.hpp"
#include "gameprior/trainer.hpp"

using namespace gameprior;

namespace {

Tensor noise_image(std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(128.0, 40.0);
  Tensor t({side, side});
  for (double& v : t.values()) v = n(rng);
  return t;
}

void BM_Extract(benchmark::State& state) {
  const std::size_t side = static_cast<std::size_t>(state.range(0));
  const PatchOperator op(PatchLayout{side, side, 9, 1, Boundary::valid});
  const ad::Var img = ad::constant(noise_image(side, 1));
  for (auto _ : state) benchmark::DoNotOptimize(op.extract(img));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(op.patch_count()));
}
BENCHMARK(BM_Extract)->Arg(64)->Arg(128);

void BM_PlaceTranspose(benchmark::State& state) {
  const std::size_t side = static_cast<std::size_t>(state.range(0));
  const PatchOperator op(PatchLayout{side, side, 9, 1, Boundary::valid});
  const ad::Var patches = op.extract(ad::constant(noise_image(side, 2)));
  for (auto _ : state) benchmark::DoNotOptimize(op.place_transpose(patches));
}
BENCHMARK(BM_PlaceTranspose)->Arg(64)->Arg(128);

void BM_NonlocalWeights(benchmark::State& state) {
  const std::size_t side = 32;
  const PatchOperator op(PatchLayout{side, side, 5, 1, Boundary::reflect});
  const ad::Var patches = op.extract(ad::constant(noise_image(side, 3)));
  const ad::Var kappa = ad::constant(Tensor({25}, 0.05));
  const std::size_t window = static_cast<std::size_t>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(nonlocal_weights(patches, kappa, GridShape{side, side}, window, 32, false));
}
BENCHMARK(BM_NonlocalWeights)->Arg(7)->Arg(15);

void BM_Solve(benchmark::State& state) {
  const RunConfig c = preset(state.range(0) == 0 ? "tv" : "nltv");
  const Tensor img = noise_image(48, 4);
  const ModelParams p = init_params({}, c.model, c.priors, InitOptions{c.solver.iterations, c.solver.eta0, 0});
  for (auto _ : state) benchmark::DoNotOptimize(denoise(c.model, c.priors, c.solver, p, img));
  state.SetLabel(state.range(0) == 0 ? "pixel tv 48x48" : "pixel nltv 48x48");
}
BENCHMARK(BM_Solve)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SolvePatchDictionary(benchmark::State& state) {
  RunConfig c = preset("sc");
  c.model.atoms = static_cast<std::size_t>(state.range(0));
  const Tensor img = noise_image(32, 5);
  const ModelParams p = init_params({img}, c.model, c.priors, InitOptions{c.solver.iterations, 1.0, 0});
  for (auto _ : state) benchmark::DoNotOptimize(denoise(c.model, c.priors, c.solver, p, img));
}
BENCHMARK(BM_SolvePatchDictionary)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_LossAndGradient(benchmark::State& state) {
  const RunConfig c = preset("tv");
  const Tensor clean = noise_image(32, 6), noisy = noise_image(32, 7);
  const ModelParams p = init_params({}, c.model, c.priors, InitOptions{c.solver.iterations, c.solver.eta0, 0});
  const std::vector<TrainItem> batch(static_cast<std::size_t>(state.range(0)), TrainItem{noisy, clean});
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradient(c.model, c.priors, c.solver, p, batch));
}
BENCHMARK(BM_LossAndGradient)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
