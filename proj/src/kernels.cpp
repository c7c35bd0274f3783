#include "ibt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ibt::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::parallel};

constexpr std::size_t kRowBlock = 4;

// Reads op(A)[i,kk] through strides so the transposed case needs no copy.
struct AView {
    const double* a;
    std::size_t row_stride;
    std::size_t col_stride;
    double operator()(std::size_t i, std::size_t kk) const { return a[i * row_stride + kk * col_stride]; }
};

// C rows [row_begin, row_end) of C = A * B with B packed row-major [k,n].
// Work is tiled 4 rows x 8 columns; every C element sums over kk in ascending
// order whichever tile path handles it.
constexpr std::size_t kColBlock = 8;

using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
    v4d v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}

inline void store4(double* p, v4d v) { __builtin_memcpy(p, &v, sizeof(v)); }

// Full 4x8 tile: eight 4-wide accumulators stay in registers across kk.
struct KRange {
    std::size_t begin, end;
    bool accumulate;  // start from the existing C value instead of zero
};

void gemm_tile_full(const GemmArgs& g, const AView& a, const double* __restrict b, std::size_t i0, std::size_t j0,
                    KRange kr) {
    v4d acc[kRowBlock][2];
    for (std::size_t r = 0; r < kRowBlock; ++r) {
        if (kr.accumulate) {
            acc[r][0] = load4(g.c + (i0 + r) * g.n + j0);
            acc[r][1] = load4(g.c + (i0 + r) * g.n + j0 + 4);
        } else {
            acc[r][0] = v4d{0, 0, 0, 0};
            acc[r][1] = v4d{0, 0, 0, 0};
        }
    }
    for (std::size_t kk = kr.begin; kk < kr.end; ++kk) {
        const double* brow = b + kk * g.n + j0;
        const v4d b0 = load4(brow);
        const v4d b1 = load4(brow + 4);
        for (std::size_t r = 0; r < kRowBlock; ++r) {
            const double ar = a(i0 + r, kk);
            acc[r][0] += ar * b0;
            acc[r][1] += ar * b1;
        }
    }
    for (std::size_t r = 0; r < kRowBlock; ++r) {
        store4(g.c + (i0 + r) * g.n + j0, acc[r][0]);
        store4(g.c + (i0 + r) * g.n + j0 + 4, acc[r][1]);
    }
}

// Edge tiles: same per-element order (start value, then kk ascending).
void gemm_tile_edge(const GemmArgs& g, const AView& a, const double* __restrict b, std::size_t i0, std::size_t rows,
                    std::size_t j0, std::size_t cols, KRange kr) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* crow = g.c + (i0 + r) * g.n + j0;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            v4d acc = kr.accumulate ? load4(crow + j) : v4d{0, 0, 0, 0};
            for (std::size_t kk = kr.begin; kk < kr.end; ++kk) acc += a(i0 + r, kk) * load4(b + kk * g.n + j0 + j);
            store4(crow + j, acc);
        }
        for (; j < cols; ++j) {
            double acc = kr.accumulate ? crow[j] : 0.0;
            for (std::size_t kk = kr.begin; kk < kr.end; ++kk) acc += a(i0 + r, kk) * b[kk * g.n + j0 + j];
            crow[j] = acc;
        }
    }
}

void gemm_rows(const GemmArgs& g, const AView& a, const double* b, std::size_t row_begin, std::size_t row_end,
               KRange kr) {
    for (std::size_t i = row_begin; i < row_end; i += kRowBlock) {
        const std::size_t rows = std::min(kRowBlock, row_end - i);
        for (std::size_t j = 0; j < g.n; j += kColBlock) {
            const std::size_t cols = std::min(kColBlock, g.n - j);
            if (rows == kRowBlock && cols == kColBlock) {
                gemm_tile_full(g, a, b, i, j, kr);
            } else {
                gemm_tile_edge(g, a, b, i, rows, j, cols, kr);
            }
        }
    }
}

// Long reductions are split into consecutive chunks so the B panel stays in
// cache; chunks run in order, so each element's summation order is unchanged.
constexpr std::size_t kDepthChunk = 256;

std::vector<KRange> depth_chunks(const GemmArgs& g) {
    std::vector<KRange> out;
    if (g.k == 0) return {{0, 0, g.accumulate}};
    for (std::size_t kb = 0; kb < g.k; kb += kDepthChunk) {
        out.push_back({kb, std::min(g.k, kb + kDepthChunk), kb == 0 ? g.accumulate : true});
    }
    return out;
}

struct PreparedGemm {
    AView a;
    const double* b;
    std::vector<double> packed;
};

PreparedGemm prepare(const GemmArgs& g) {
    PreparedGemm p{g.trans_a ? AView{g.a, 1, g.m} : AView{g.a, g.k, 1}, g.b, {}};
    if (g.trans_b) {
        p.packed.resize(g.k * g.n);
        for (std::size_t j = 0; j < g.n; ++j)
            for (std::size_t kk = 0; kk < g.k; ++kk) p.packed[kk * g.n + j] = g.b[j * g.k + kk];
        p.b = p.packed.data();
    }
    return p;
}

void knn_row(const KnnArgs& args, std::size_t i, std::vector<std::pair<double, std::size_t>>& scratch) {
    const double* x = args.coords.data();
    std::size_t* row = args.out.data() + i * args.k;
    row[0] = i;
    if (args.k == 1) return;
    scratch.clear();
    const double xi = x[3 * i], yi = x[3 * i + 1], zi = x[3 * i + 2];
    for (std::size_t j = 0; j < args.n; ++j) {
        if (j == i) continue;
        const double dx = xi - x[3 * j];
        const double dy = yi - x[3 * j + 1];
        const double dz = zi - x[3 * j + 2];
        scratch.emplace_back(dx * dx + dy * dy + dz * dz, j);
    }
    const auto take = static_cast<std::ptrdiff_t>(args.k - 1);
    std::partial_sort(scratch.begin(), scratch.begin() + take, scratch.end());
    for (std::size_t j = 1; j < args.k; ++j) row[j] = scratch[j - 1].second;
}

void gather_row(const GatherArgs& args, std::size_t r) {
    const double* src = args.src.data();
    double* out = args.out.data() + r * args.width;
    const double* from = src + args.idx[r] * args.width;
    std::copy(from, from + args.width, out);
}

void scatter_columns(const ScatterAddArgs& args, std::size_t col_begin, std::size_t col_end) {
    const std::size_t entries = args.idx.size();
    const double* grad = args.grad.data();
    double* dst = args.dst.data();
    for (std::size_t e = 0; e < entries; ++e) {
        const double* g = grad + e * args.width;
        double* d = dst + args.idx[e] * args.width;
        for (std::size_t c = col_begin; c < col_end; ++c) d[c] += g[c];
    }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

void gemm(const GemmArgs& g) {
    if (g.m == 0 || g.n == 0) return;
    const auto p = prepare(g);
    for (const auto& kr : depth_chunks(g)) gemm_rows(g, p.a, p.b, 0, g.m, kr);
}

void knn(const KnnArgs& args) {
    std::vector<std::pair<double, std::size_t>> scratch;
    scratch.reserve(args.n);
    for (std::size_t i = 0; i < args.n; ++i) knn_row(args, i, scratch);
}

void gather_rows(const GatherArgs& args) {
    for (std::size_t r = 0; r < args.idx.size(); ++r) gather_row(args, r);
}

void scatter_add_rows(const ScatterAddArgs& args) { scatter_columns(args, 0, args.width); }

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& g) {
    if (g.m == 0 || g.n == 0) return;
    const auto p = prepare(g);
    const auto blocks = static_cast<std::ptrdiff_t>((g.m + kRowBlock - 1) / kRowBlock);
    const auto chunks = depth_chunks(g);
#pragma omp parallel if (g.m * g.n * g.k > 32768)
    for (const auto& kr : chunks) {
#pragma omp for schedule(static)
        for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
            const std::size_t begin = static_cast<std::size_t>(blk) * kRowBlock;
            gemm_rows(g, p.a, p.b, begin, std::min(begin + kRowBlock, g.m), kr);
        }
    }
}

void knn(const KnnArgs& args) {
#pragma omp parallel
    {
        std::vector<std::pair<double, std::size_t>> scratch;
        scratch.reserve(args.n);
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(args.n); ++i)
            knn_row(args, static_cast<std::size_t>(i), scratch);
    }
}

void gather_rows(const GatherArgs& args) {
    const auto rows = static_cast<std::ptrdiff_t>(args.idx.size());
#pragma omp parallel for schedule(static) if (rows * static_cast<std::ptrdiff_t>(args.width) > 65536)
    for (std::ptrdiff_t r = 0; r < rows; ++r) gather_row(args, static_cast<std::size_t>(r));
}

void scatter_add_rows(const ScatterAddArgs& args) {
    // Columns are independent, so threads own disjoint column ranges.
    const int threads = max_threads();
    if (threads <= 1 || args.width < 16) {
        scatter_columns(args, 0, args.width);
        return;
    }
#pragma omp parallel num_threads(threads)
    {
#ifdef _OPENMP
        const auto t = static_cast<std::size_t>(omp_get_thread_num());
        const auto nt = static_cast<std::size_t>(omp_get_num_threads());
#else
        const std::size_t t = 0, nt = 1;
#endif
        const std::size_t chunk = (args.width + nt - 1) / nt;
        const std::size_t begin = std::min(args.width, t * chunk);
        const std::size_t end = std::min(args.width, begin + chunk);
        if (begin < end) scatter_columns(args, begin, end);
    }
}

}  // namespace parallel

void gemm(const GemmArgs& args) {
    backend() == Backend::serial ? serial::gemm(args) : parallel::gemm(args);
}

void knn(const KnnArgs& args) {
    backend() == Backend::serial ? serial::knn(args) : parallel::knn(args);
}

void gather_rows(const GatherArgs& args) {
    backend() == Backend::serial ? serial::gather_rows(args) : parallel::gather_rows(args);
}

void scatter_add_rows(const ScatterAddArgs& args) {
    backend() == Backend::serial ? serial::scatter_add_rows(args) : parallel::scatter_add_rows(args);
}

}  // namespace ibt::kernels
