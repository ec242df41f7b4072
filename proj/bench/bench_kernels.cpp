// Windowed OpenMP kernels vs the serial O(n^2) reference versions.

#include <benchmark/benchmark.h>

#include "trunc_sim/index_estimator.hpp"
#include "trunc_sim/kernel_smoothing.hpp"
#include "trunc_sim/sim_models.hpp"

using namespace trunc_sim;

namespace {

TruncatedSample sample(std::size_t N) {
  auto rng = substream(1, 0, N, 0);
  return generate_truncated(model2(), -0.13, N, rng);
}

const Eigen::Vector2d kTheta(0.5, 0.8660254037844386);

void BM_GHat(benchmark::State& state) {
  const auto in = make_smoother(sample(static_cast<std::size_t>(state.range(0))), KernelSpec{});
  for (auto _ : state) benchmark::DoNotOptimize(g_hat_at_observations(in, kTheta));
  state.SetComplexityN(state.range(0));
}

void BM_GHatReference(benchmark::State& state) {
  const auto in = make_smoother(sample(static_cast<std::size_t>(state.range(0))), KernelSpec{});
  for (auto _ : state) benchmark::DoNotOptimize(reference::g_hat_at_observations(in, kTheta));
  state.SetComplexityN(state.range(0));
}

void BM_Gradient(benchmark::State& state) {
  const auto in = make_smoother(sample(static_cast<std::size_t>(state.range(0))), KernelSpec{});
  for (auto _ : state) benchmark::DoNotOptimize(gradient_at_observations(in, kTheta));
  state.SetComplexityN(state.range(0));
}

void BM_GradientReference(benchmark::State& state) {
  const auto in = make_smoother(sample(static_cast<std::size_t>(state.range(0))), KernelSpec{});
  for (auto _ : state) benchmark::DoNotOptimize(reference::gradient_at_observations(in, kTheta));
  state.SetComplexityN(state.range(0));
}

void BM_Objective(benchmark::State& state) {
  const Objective obj(sample(static_cast<std::size_t>(state.range(0))), FitConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(kTheta));
}

void BM_ObjectiveReference(benchmark::State& state) {
  const Objective obj(sample(static_cast<std::size_t>(state.range(0))), FitConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate_reference(kTheta));
}

void BM_Fit(benchmark::State& state) {
  const auto s = sample(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit(s, FitConfig{}));
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int n : {200, 800, 3200, 12800}) b->Arg(n);
}

}  // namespace

BENCHMARK(BM_GHat)->Apply(sizes)->Complexity();
BENCHMARK(BM_GHatReference)->Apply(sizes)->Complexity();
BENCHMARK(BM_Gradient)->Apply(sizes)->Complexity();
BENCHMARK(BM_GradientReference)->Apply(sizes)->Complexity();
BENCHMARK(BM_Objective)->Apply(sizes);
BENCHMARK(BM_ObjectiveReference)->Apply(sizes);
BENCHMARK(BM_Fit)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
