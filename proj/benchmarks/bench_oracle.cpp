#include <benchmark/benchmark.h>

#include <algorithm>

#include "mqar/oracle.hpp"
#include "mqar/rng.hpp"

using namespace mqar;

namespace {

std::vector<Triple> random_triples(uint64_t seed, size_t count, size_t vocab) {
    Rng rng(seed);
    std::vector<Triple> out(count);
    for (auto& t : out) {
        t.key = static_cast<int64_t>(rng.next_below(vocab));
        t.value = static_cast<int64_t>(rng.next_below(vocab));
        t.query = static_cast<int64_t>(rng.next_below(vocab));
    }
    return out;
}

}  // namespace

static void BM_SequentialMqar(benchmark::State& state) {
    auto triples = random_triples(1, static_cast<size_t>(state.range(0)), 4096);
    for (auto _ : state) benchmark::DoNotOptimize(sequential_mqar(triples));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SequentialMqar)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_ParallelMqar(benchmark::State& state) {
    auto triples = random_triples(2, static_cast<size_t>(state.range(0)), 4096);
    for (auto _ : state) benchmark::DoNotOptimize(parallel_mqar(triples, 1));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ParallelMqar)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_PbsMultipleSearch(benchmark::State& state) {
    Rng rng(3);
    size_t n = static_cast<size_t>(state.range(0));
    std::vector<int64_t> a(n), b(n);
    for (auto& v : a) v = static_cast<int64_t>(rng.next_below(1 << 20));
    for (auto& v : b) v = static_cast<int64_t>(rng.next_below(1 << 20));
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    for (auto _ : state) benchmark::DoNotOptimize(pbs_multiple_search(a, b));
}
BENCHMARK(BM_PbsMultipleSearch)->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
