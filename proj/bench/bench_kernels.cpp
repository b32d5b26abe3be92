// SPDX-License-Identifier: Apache-2.0
//
// OpenMP kernels against their serial reference versions.

#include <benchmark/benchmark.h>

#include "dagrpo/trainer.hpp"

namespace {

using namespace dagrpo;

TrainConfig bench_config() {
  TrainConfig cfg;
  cfg.algorithm = Algorithm::dagrpo;
  cfg.task.chain_lengths = {1, 2};
  return cfg;
}

// A partly trained policy so rollouts have realistic lengths.
const TrainState& trained_state() {
  static const TrainState state = [] {
    const auto cfg = bench_config();
    auto s = initial_state(cfg);
    for (int i = 0; i < 20; ++i) train_step(s, cfg);
    return s;
  }();
  return state;
}

Execution exec_of(const benchmark::State& st) { return st.range(0) ? Execution::parallel : Execution::serial; }

void BM_CollectGroups(benchmark::State& st) {
  const auto cfg = bench_config();
  const auto& s = trained_state();
  for (auto _ : st) benchmark::DoNotOptimize(collect_groups(s.params, cfg, 21, exec_of(st)));
  st.SetItemsProcessed(st.iterations() * cfg.task.prompts_per_batch);
}

void BM_PrepareGroups(benchmark::State& st) {
  const auto cfg = bench_config();
  const auto& s = trained_state();
  const auto groups = collect_groups(s.params, cfg, 21, Execution::serial);
  for (auto _ : st) benchmark::DoNotOptimize(prepare_groups(groups, cfg, exec_of(st)));
}

void BM_BatchGradient(benchmark::State& st) {
  const auto cfg = bench_config();
  const auto& s = trained_state();
  const auto groups = prepare_groups(collect_groups(s.params, cfg, 21, Execution::serial), cfg, Execution::serial);
  for (auto _ : st) {
    benchmark::DoNotOptimize(
        batch_gradient(groups, 0, groups.size(), s.params, s.params, s.reference, cfg, exec_of(st)));
  }
}

void BM_Evaluate(benchmark::State& st) {
  auto eval = bench_config().effective_eval();
  eval.prompts_per_level = 128;
  const auto& s = trained_state();
  for (auto _ : st) benchmark::DoNotOptimize(evaluate(s.params, eval, 16, exec_of(st)));
}

void BM_TrainStep(benchmark::State& st) {
  const auto cfg = bench_config();
  for (auto _ : st) {
    st.PauseTiming();
    auto s = trained_state();
    st.ResumeTiming();
    benchmark::DoNotOptimize(train_step(s, cfg, exec_of(st)));
  }
}

}  // namespace

BENCHMARK(BM_CollectGroups)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PrepareGroups)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Evaluate)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
