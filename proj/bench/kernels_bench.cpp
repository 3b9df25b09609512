// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fcl/kernels.hpp"

namespace {

using fcl::real;
namespace k = fcl::kernels;

std::vector<real> random_vector(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> d;
    std::vector<real> v(n);
    for (auto& x : v) x = real(d(rng));
    return v;
}

void BM_GemmReference(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
    std::vector<real> c(n * n);
    for (auto _ : state) {
        k::gemm_reference(k::Trans::no, k::Trans::no, {n, n, n}, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(std::int64_t(state.iterations() * n * n * n));
}

void BM_GemmParallel(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
    std::vector<real> c(n * n);
    for (auto _ : state) {
        k::gemm(k::Trans::no, k::Trans::no, {n, n, n}, a.data(), b.data(), c.data(), false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(std::int64_t(state.iterations() * n * n * n));
}

k::AttentionShape attention_shape(const benchmark::State& state) {
    return {std::size_t(state.range(0)), 32, 2, 32};
}

void BM_AttentionReference(benchmark::State& state) {
    const auto s = attention_shape(state);
    const auto n = s.batch * s.seq * s.model_dim();
    const auto q = random_vector(n, 1), kk = random_vector(n, 2), v = random_vector(n, 3);
    std::vector<real> out(n), probs(s.batch * s.heads * s.seq * s.seq);
    for (auto _ : state) {
        k::attention_forward_reference(s, q.data(), kk.data(), v.data(), probs.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

void BM_AttentionParallel(benchmark::State& state) {
    const auto s = attention_shape(state);
    const auto n = s.batch * s.seq * s.model_dim();
    const auto q = random_vector(n, 1), kk = random_vector(n, 2), v = random_vector(n, 3);
    std::vector<real> out(n), probs(s.batch * s.heads * s.seq * s.seq);
    for (auto _ : state) {
        k::attention_forward(s, q.data(), kk.data(), v.data(), probs.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
}

}  // namespace

BENCHMARK(BM_GemmReference)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_AttentionReference)->Arg(8)->Arg(32);
BENCHMARK(BM_AttentionParallel)->Arg(8)->Arg(32);

BENCHMARK_MAIN();
