// Serial reference vs OpenMP analyzers.

#include <benchmark/benchmark.h>

#include "kpac/harness.hpp"

using namespace kpac;

namespace {

void BM_ForgerySerial(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(forgery_rate_serial(8, state.range(0), 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForgeryParallel(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(forgery_rate(8, state.range(0), 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

CollisionConfig collision_config(int threads) {
  CollisionConfig c;
  c.scheme = ModifierScheme::PartsLike;
  c.n_threads = threads;
  c.callsites = random_callsites(64, 2);
  c.seed = 3;
  return c;
}

void BM_CollisionSerial(benchmark::State& state) {
  const auto cfg = collision_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(collision_rate_serial(cfg));
}

void BM_CollisionParallel(benchmark::State& state) {
  const auto cfg = collision_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(collision_rate(cfg));
}

}  // namespace

BENCHMARK(BM_ForgerySerial)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForgeryParallel)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CollisionSerial)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CollisionParallel)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
