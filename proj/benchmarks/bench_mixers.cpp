#include <benchmark/benchmark.h>

#include "mqar/mixers.hpp"
#include "mqar/rng.hpp"

using namespace mqar;

namespace {

SeqTensor random_tensor(uint64_t seed, size_t n, size_t d) {
    Rng rng(seed);
    SeqTensor m(n, d);
    for (auto& v : m.data) v = 0.5 * rng.next_normal();
    return m;
}

}  // namespace

static void BM_AttentionForward(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 64;
    SeqTensor u = random_tensor(1, n, d);
    AttentionParams p{random_tensor(2, d, d), random_tensor(3, d, d), random_tensor(4, d, d)};
    for (auto _ : state) benchmark::DoNotOptimize(attention_forward(u, p, {}));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AttentionForward)->RangeMultiplier(2)->Range(32, 256)->Complexity();

static void BM_BaseConvForward(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 64;
    SeqTensor u = random_tensor(1, n, d);
    BaseConvParams p;
    p.w = random_tensor(2, d, d);
    p.b1 = random_tensor(3, n, d);
    p.b2 = random_tensor(4, n, d);
    p.h = random_tensor(5, n, d);
    for (auto _ : state) benchmark::DoNotOptimize(baseconv_forward(u, p));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_BaseConvForward)->RangeMultiplier(2)->Range(32, 256)->Complexity();

static void BM_RetNetForward(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 64;
    SeqTensor u = random_tensor(1, n, d);
    RetNetParams p{0.9, random_tensor(2, d, d), random_tensor(3, d, d), random_tensor(4, d, d)};
    for (auto _ : state) benchmark::DoNotOptimize(retnet_forward(u, p));
}
BENCHMARK(BM_RetNetForward)->Arg(64)->Arg(128);

static void BM_HyenaForward(benchmark::State& state) {
    size_t n = static_cast<size_t>(state.range(0)), d = 64;
    SeqTensor u = random_tensor(1, n, d);
    HyenaParams p;
    p.order = 1;
    p.w_proj = random_tensor(2, d, 2 * d);
    p.short_filter = random_tensor(3, 3, 2 * d);
    p.filters.push_back(random_tensor(4, n, d));
    for (auto _ : state) benchmark::DoNotOptimize(hyena_forward(u, p));
}
BENCHMARK(BM_HyenaForward)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
