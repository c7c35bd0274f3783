// Serial reference vs. OpenMP kernels. Run with OMP_NUM_THREADS set to the
// core count; on a single core both variants do the same work.

#include "ibt/kernels.hpp"
#include "ibt/tensor.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace k = ibt::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<double> c(n * n);
    k::GemmArgs g;
    g.m = g.n = g.k = n;
    g.a = a.data();
    g.b = b.data();
    g.c = c.data();
    for (auto _ : state) {
        Parallel ? k::parallel::gemm(g) : k::serial::gemm(g);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

template <bool Parallel>
void BM_Knn(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::size_t kk = 40;
    const auto xyz = random_values(3 * n, 3);
    std::vector<std::size_t> out(n * kk);
    for (auto _ : state) {
        Parallel ? k::parallel::knn({xyz, n, kk, out}) : k::serial::knn({xyz, n, kk, out});
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Parallel>
void BM_Gather(benchmark::State& state) {
    const std::size_t rows = 1024, kk = 40, width = static_cast<std::size_t>(state.range(0));
    const auto src = random_values(rows * width, 4);
    std::vector<std::size_t> idx(rows * kk);
    std::mt19937_64 rng(5);
    for (auto& i : idx) i = rng() % rows;
    std::vector<double> out(rows * kk * width);
    for (auto _ : state) {
        Parallel ? k::parallel::gather_rows({src, rows, width, idx, out})
                 : k::serial::gather_rows({src, rows, width, idx, out});
        benchmark::DoNotOptimize(out.data());
    }
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * out.size() * sizeof(double)));
}

template <bool Parallel>
void BM_ScatterAdd(benchmark::State& state) {
    const std::size_t rows = 1024, kk = 40, width = static_cast<std::size_t>(state.range(0));
    const auto grad = random_values(rows * kk * width, 6);
    std::vector<std::size_t> idx(rows * kk);
    std::mt19937_64 rng(7);
    for (auto& i : idx) i = rng() % rows;
    std::vector<double> dst(rows * width);
    for (auto _ : state) {
        Parallel ? k::parallel::scatter_add_rows({grad, width, idx, dst})
                 : k::serial::scatter_add_rows({grad, width, idx, dst});
        benchmark::DoNotOptimize(dst.data());
    }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_Knn<false>)->Name("knn/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_Knn<true>)->Name("knn/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_Gather<false>)->Name("gather/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_Gather<true>)->Name("gather/parallel")->Arg(64)->Arg(128);
BENCHMARK(BM_ScatterAdd<false>)->Name("scatter_add/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_ScatterAdd<true>)->Name("scatter_add/parallel")->Arg(64)->Arg(128);

int main(int argc, char** argv) {
    ibt::tune_allocator();
    benchmark::Initialize(&argc, argv);
    if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
