// Serial reference loop against the OpenMP batch kernels.
#include <benchmark/benchmark.h>

#include "tacmpc/bench.hpp"

using namespace tacmpc;

namespace {

template <Execution E>
void BM_forward_batch(benchmark::State& st) {
    const MpcConfig cfg;
    const MpcLayer layer(cfg);
    const auto params = MpcParams::init(cfg.embed_dim, 0, 1e4, 3e-4);
    const auto in = bench_inputs(cfg, static_cast<int>(st.range(0)), 7);
    for (auto _ : st) benchmark::DoNotOptimize(forward_batch(layer, params, in, E));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

template <Execution E>
void BM_forward_single_batch(benchmark::State& st) {
    const MpcConfig cfg;
    const MpcLayer layer(cfg);
    const auto params = MpcParams::init(cfg.embed_dim, 0, 1e4, 3e-4);
    const auto in = bench_inputs(cfg, static_cast<int>(st.range(0)), 7);
    for (auto _ : st) benchmark::DoNotOptimize(forward_single_batch(layer, params, in, E));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}

}  // namespace

BENCHMARK(BM_forward_batch<Execution::Serial>)->RangeMultiplier(4)->Range(1, 128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_forward_batch<Execution::Parallel>)->RangeMultiplier(4)->Range(1, 128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_forward_single_batch<Execution::Serial>)->RangeMultiplier(4)->Range(1, 128)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_forward_single_batch<Execution::Parallel>)->RangeMultiplier(4)->Range(1, 128)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
