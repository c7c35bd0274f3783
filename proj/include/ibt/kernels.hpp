#pragma once

#include <cstddef>
#include <span>

namespace ibt::kernels {

// Hot loops of the library, each in two flavours: a serial reference and an
// OpenMP version that splits only over independent output rows. Every output
// element is accumulated in the same order by both, so results agree bitwise.

enum class Backend { serial, parallel };

void set_backend(Backend backend);
Backend backend();

/// Row-major GEMM description: C[m,n] (+)= op(A)[m,k] * op(B)[k,n].
/// A is stored [m,k] (or [k,m] when trans_a); B is [k,n] (or [n,k] when trans_b).
struct GemmArgs {
    std::size_t m = 0, n = 0, k = 0;
    const double* a = nullptr;
    const double* b = nullptr;
    double* c = nullptr;
    bool trans_a = false;
    bool trans_b = false;
    bool accumulate = false;
};

/// Squared-distance KNN over one cloud of `n` points (xyz interleaved).
/// Row i of `out` (k entries) starts with i, then the k-1 nearest other points
/// ordered by (distance, index).
struct KnnArgs {
    std::span<const double> coords;
    std::size_t n = 0;
    std::size_t k = 0;
    std::span<std::size_t> out;
};

/// out[r,j,:] = src[idx[r,j],:]
struct GatherArgs {
    std::span<const double> src;
    std::size_t src_rows = 0;
    std::size_t width = 0;
    std::span<const std::size_t> idx;
    std::span<double> out;
};

/// dst[idx[r,j],:] += grad[r,j,:], visiting (r,j) in row-major order for every column.
struct ScatterAddArgs {
    std::span<const double> grad;
    std::size_t width = 0;
    std::span<const std::size_t> idx;
    std::span<double> dst;
};

namespace serial {
void gemm(const GemmArgs& args);
void knn(const KnnArgs& args);
void gather_rows(const GatherArgs& args);
void scatter_add_rows(const ScatterAddArgs& args);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& args);
void knn(const KnnArgs& args);
void gather_rows(const GatherArgs& args);
void scatter_add_rows(const ScatterAddArgs& args);
}  // namespace parallel

// Dispatch on the active backend.
void gemm(const GemmArgs& args);
void knn(const KnnArgs& args);
void gather_rows(const GatherArgs& args);
void scatter_add_rows(const ScatterAddArgs& args);

int max_threads();

}  // namespace ibt::kernels
