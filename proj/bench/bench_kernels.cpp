// Serial reference kernels against their OpenMP versions.
#include "oclbench/kernels.hpp"
#include "oclbench/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace k = oclb::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
    oclb::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

void matmul(benchmark::State& state, k::Exec exec) {
    const auto m = static_cast<std::size_t>(state.range(0));
    const std::size_t kk = 32, n = 128;
    const auto a = noise(m * kk, 1), b = noise(kk * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        k::matmul(a.data(), b.data(), c.data(), m, kk, n, exec);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(m * kk * n));
}

// Toy-encoder shape: 9 tokens, width 32, 4 heads, prefix of 4 shared by every sample.
k::AttentionShape attention_shape(std::size_t batch) {
    k::AttentionShape s;
    s.batch = batch;
    s.tokens = 9;
    s.dim = 32;
    s.heads = 4;
    s.prefix_len = 4;
    return s;
}

void attention_fwd(benchmark::State& state, k::Exec exec) {
    const auto s = attention_shape(static_cast<std::size_t>(state.range(0)));
    const auto qkv = noise(s.batch * s.tokens * 3 * s.dim, 3);
    const auto pk = noise(s.prefix_len * s.dim, 4), pv = noise(s.prefix_len * s.dim, 5);
    const std::vector<int> prefix_of(s.batch, 0);
    const k::AttentionPrefixes p{{pk.data()}, {pv.data()}, prefix_of};
    std::vector<double> out(s.batch * s.tokens * s.dim), probs(s.probs_size());
    for (auto _ : state) {
        k::attention_forward(s, qkv.data(), p, out.data(), probs.data(), exec);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

void attention_bwd(benchmark::State& state, k::Exec exec) {
    const auto s = attention_shape(static_cast<std::size_t>(state.range(0)));
    const auto qkv = noise(s.batch * s.tokens * 3 * s.dim, 3);
    const auto pk = noise(s.prefix_len * s.dim, 4), pv = noise(s.prefix_len * s.dim, 5);
    const std::vector<int> prefix_of(s.batch, 0);
    const k::AttentionPrefixes p{{pk.data()}, {pv.data()}, prefix_of};
    std::vector<double> out(s.batch * s.tokens * s.dim), probs(s.probs_size());
    k::attention_forward(s, qkv.data(), p, out.data(), probs.data(), k::Exec::serial);
    const auto grad_out = noise(out.size(), 6);
    std::vector<double> gq(qkv.size()), gk(s.batch * s.prefix_len * s.dim), gv(gk.size());
    for (auto _ : state) {
        k::attention_backward(s, qkv.data(), p, probs.data(), grad_out.data(), gq.data(), gk.data(),
                              gv.data(), exec);
        benchmark::DoNotOptimize(gq.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(s.batch));
}

} // namespace

BENCHMARK_CAPTURE(matmul, serial, k::Exec::serial)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK_CAPTURE(matmul, parallel, k::Exec::parallel)->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK_CAPTURE(attention_fwd, serial, k::Exec::serial)->RangeMultiplier(4)->Range(8, 512);
BENCHMARK_CAPTURE(attention_fwd, parallel, k::Exec::parallel)->RangeMultiplier(4)->Range(8, 512);
BENCHMARK_CAPTURE(attention_bwd, serial, k::Exec::serial)->RangeMultiplier(4)->Range(8, 512);
BENCHMARK_CAPTURE(attention_bwd, parallel, k::Exec::parallel)->RangeMultiplier(4)->Range(8, 512);

BENCHMARK_MAIN();
