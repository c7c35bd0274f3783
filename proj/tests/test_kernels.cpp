#include "ibt/kernels.hpp"

#include "support.hpp"

#include <gtest/gtest.h>
#include <omp.h>

#include <algorithm>
#include <numeric>

using namespace ibt;
namespace k = ibt::kernels;

namespace {

// Triple loop over the logical (untransposed) operands.
std::vector<double> naive_gemm(const k::GemmArgs& g, std::vector<double> c) {
    for (std::size_t i = 0; i < g.m; ++i) {
        for (std::size_t j = 0; j < g.n; ++j) {
            double acc = g.accumulate ? c[i * g.n + j] : 0.0;
            for (std::size_t p = 0; p < g.k; ++p) {
                const double a = g.trans_a ? g.a[p * g.m + i] : g.a[i * g.k + p];
                const double b = g.trans_b ? g.b[j * g.k + p] : g.b[p * g.n + j];
                acc += a * b;
            }
            c[i * g.n + j] = acc;
        }
    }
    return c;
}

class ThreadsScope {
public:
    explicit ThreadsScope(int n) : previous_(omp_get_max_threads()) { omp_set_num_threads(n); }
    ~ThreadsScope() { omp_set_num_threads(previous_); }

private:
    int previous_;
};

}  // namespace

TEST(Kernels, GemmMatchesTripleLoop) {
    std::mt19937_64 rng(1);
    const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {4, 8, 16}, {9, 13, 5}, {17, 3, 300}, {33, 40, 513}};
    for (const auto& d : dims) {
        for (int flags = 0; flags < 8; ++flags) {
            k::GemmArgs g;
            g.m = d[0], g.n = d[1], g.k = d[2];
            g.trans_a = flags & 1, g.trans_b = flags & 2, g.accumulate = flags & 4;
            const auto a = test::uniform(g.m * g.k, rng);
            const auto b = test::uniform(g.k * g.n, rng);
            const auto c0 = test::uniform(g.m * g.n, rng);
            g.a = a.data(), g.b = b.data();
            const auto expect = naive_gemm(g, c0);
            for (auto backend : {k::Backend::serial, k::Backend::parallel}) {
                auto c = c0;
                g.c = c.data();
                backend == k::Backend::serial ? k::serial::gemm(g) : k::parallel::gemm(g);
                EXPECT_LE(test::max_abs_diff(c, expect), 1e-12 * static_cast<double>(g.k))
                    << g.m << "x" << g.n << "x" << g.k << " flags " << flags;
            }
        }
    }
}

TEST(Kernels, GemmSerialAndParallelAgreeBitwise) {
    ThreadsScope threads(4);
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 6; ++trial) {
        k::GemmArgs g;
        g.m = 37 + 11 * trial, g.n = 29 + 5 * trial, g.k = 140 + 90 * trial;
        g.trans_a = trial % 2, g.trans_b = trial % 3 == 0;
        const auto a = test::uniform(g.m * g.k, rng);
        const auto b = test::uniform(g.k * g.n, rng);
        g.a = a.data(), g.b = b.data();
        std::vector<double> cs(g.m * g.n), cp(g.m * g.n);
        g.c = cs.data();
        k::serial::gemm(g);
        g.c = cp.data();
        k::parallel::gemm(g);
        EXPECT_EQ(cs, cp);
    }
}

TEST(Kernels, KnnMatchesSortedDistances) {
    std::mt19937_64 rng(3);
    for (std::size_t n : {1u, 5u, 64u}) {
        const auto xyz = test::uniform(3 * n, rng);
        for (std::size_t kk = 1; kk <= std::min<std::size_t>(n, 8); kk += 3) {
            std::vector<std::size_t> out(n * kk);
            k::serial::knn({xyz, n, kk, out});
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<std::pair<double, std::size_t>> all;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    double d = 0;
                    for (int c = 0; c < 3; ++c) d += (xyz[3 * i + c] - xyz[3 * j + c]) * (xyz[3 * i + c] - xyz[3 * j + c]);
                    all.emplace_back(d, j);
                }
                std::sort(all.begin(), all.end());
                EXPECT_EQ(out[i * kk], i);
                for (std::size_t j = 1; j < kk; ++j) EXPECT_EQ(out[i * kk + j], all[j - 1].second);
            }
        }
    }
}

TEST(Kernels, KnnBreaksTiesByIndex) {
    // Four points on a unit circle around the origin point 0: all equidistant.
    const std::vector<double> xyz = {0, 0, 0, 1, 0, 0, 0, 1, 0, -1, 0, 0, 0, -1, 0};
    std::vector<std::size_t> out(5 * 3);
    k::serial::knn({xyz, 5, 3, out});
    EXPECT_EQ(out[0], 0u);
    EXPECT_EQ(out[1], 1u);
    EXPECT_EQ(out[2], 2u);
}

TEST(Kernels, KnnGatherScatterSerialAndParallelAgree) {
    ThreadsScope threads(3);
    std::mt19937_64 rng(4);
    const std::size_t n = 200, kk = 16, width = 40;
    const auto xyz = test::uniform(3 * n, rng);
    std::vector<std::size_t> s(n * kk), p(n * kk);
    k::serial::knn({xyz, n, kk, s});
    k::parallel::knn({xyz, n, kk, p});
    EXPECT_EQ(s, p);

    const auto src = test::uniform(n * width, rng);
    std::vector<double> gs(n * kk * width), gp(n * kk * width);
    k::serial::gather_rows({src, n, width, s, gs});
    k::parallel::gather_rows({src, n, width, s, gp});
    EXPECT_EQ(gs, gp);
    for (std::size_t r = 0; r < n * kk; ++r)
        for (std::size_t c = 0; c < width; ++c) ASSERT_EQ(gs[r * width + c], src[s[r] * width + c]);

    const auto grad = test::uniform(n * kk * width, rng);
    std::vector<double> ds(n * width, 0.0), dp(n * width, 0.0), naive(n * width, 0.0);
    k::serial::scatter_add_rows({grad, width, s, ds});
    k::parallel::scatter_add_rows({grad, width, s, dp});
    for (std::size_t r = 0; r < n * kk; ++r)
        for (std::size_t c = 0; c < width; ++c) naive[s[r] * width + c] += grad[r * width + c];
    EXPECT_EQ(ds, dp);
    EXPECT_EQ(ds, naive);
}

TEST(Kernels, BackendSwitchIsGlobal) {
    const auto before = k::backend();
    k::set_backend(k::Backend::serial);
    EXPECT_EQ(k::backend(), k::Backend::serial);
    k::set_backend(before);
}
