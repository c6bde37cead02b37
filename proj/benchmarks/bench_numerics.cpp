#include <benchmark/benchmark.h>

#include "mqar/numerics.hpp"
#include "mqar/rng.hpp"

using namespace mqar;

namespace {

SeqTensor random_tensor(uint64_t seed, size_t n, size_t d) {
    Rng rng(seed);
    SeqTensor m(n, d);
    for (auto& v : m.data) v = rng.next_normal();
    return m;
}

}  // namespace

static void BM_CausalConvFFT(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 8;
    SeqTensor u = random_tensor(1, n, d), h = random_tensor(2, n, d);
    for (auto _ : state) benchmark::DoNotOptimize(causal_conv_fft(u, h));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CausalConvFFT)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

static void BM_CausalConvDirect(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 8;
    SeqTensor u = random_tensor(1, n, d), h = random_tensor(2, n, d);
    for (auto _ : state) benchmark::DoNotOptimize(causal_conv_direct(u, h));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CausalConvDirect)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

static void BM_SoftmaxRows(benchmark::State& state) {
    SeqTensor m = random_tensor(3, 256, static_cast<size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(m));
}
BENCHMARK(BM_SoftmaxRows)->Arg(64)->Arg(512)->Arg(4096);

static void BM_Autocorrelation(benchmark::State& state) {
    Rng rng(4);
    std::vector<double> v(static_cast<size_t>(state.range(0)));
    for (auto& x : v) x = rng.next_normal();
    for (auto _ : state) benchmark::DoNotOptimize(autocorrelation(v));
}
BENCHMARK(BM_Autocorrelation)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
