#include "ibt/geometry.hpp"

#include "ibt/errors.hpp"
#include "ibt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ibt {

void validate_cloud(const PointCloud& cloud) {
    if (cloud.coords.size() % 3 != 0) throw DataError("point cloud coordinate buffer is not N x 3");
    if (cloud.size() == 0) throw DataError("point cloud '" + cloud.name + "' is empty");
    for (double v : cloud.coords)
        if (!std::isfinite(v)) throw DataError("point cloud '" + cloud.name + "' has a non-finite coordinate");
    if (cloud.has_labels() && cloud.point_labels.size() != cloud.size()) {
        throw DataError("point cloud '" + cloud.name + "' has " + std::to_string(cloud.point_labels.size()) +
                        " labels for " + std::to_string(cloud.size()) + " points");
    }
}

NeighborGraph knn_graph(std::span<const double> coords, std::size_t k) {
    const std::size_t n = coords.size() / 3;
    if (k < 1 || k > n) {
        throw DomainError("knn_graph: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
    }
    for (double v : coords)
        if (std::isnan(v)) throw DataError("knn_graph: NaN coordinate");
    NeighborGraph g;
    g.k = k;
    g.indices = {n, k, std::vector<std::size_t>(n * k)};
    kernels::knn({coords, n, k, g.indices.data});
    return g;
}

NeighborGraph knn_graph(const PointCloud& cloud, std::size_t k) { return knn_graph(cloud.coords, k); }

IndexTable stack_graphs(const std::vector<NeighborGraph>& graphs) {
    IndexTable out;
    if (graphs.empty()) return out;
    out.cols = graphs.front().k;
    std::size_t offset = 0;
    for (const auto& g : graphs) {
        if (g.k != out.cols) throw DimensionError("stack_graphs: graphs with different k");
        for (auto v : g.indices.data) out.data.push_back(v + offset);
        out.rows += g.indices.rows;
        offset += g.indices.rows;
    }
    return out;
}

RelativeGeometry relative_geometry(std::span<const double> coords, const IndexTable& graph) {
    const std::size_t n = coords.size() / 3;
    if (graph.rows != n) throw DimensionError("relative_geometry: graph rows do not match point count");
    std::vector<double> deltas(graph.rows * graph.cols * 3);
    std::vector<double> dists(graph.rows * graph.cols);
    for (std::size_t i = 0; i < graph.rows; ++i) {
        for (std::size_t j = 0; j < graph.cols; ++j) {
            const std::size_t nb = graph(i, j);
            if (nb >= n) throw IndexError("relative_geometry: neighbour index out of range");
            double sq = 0.0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = coords[3 * i + c] - coords[3 * nb + c];
                deltas[(i * graph.cols + j) * 3 + c] = d;
                sq += d * d;
            }
            dists[i * graph.cols + j] = std::sqrt(sq);
        }
    }
    return {Tensor::from({graph.rows, graph.cols, 3}, std::move(deltas)),
            Tensor::from({graph.rows, graph.cols, 1}, std::move(dists))};
}

RelativeGeometry relative_geometry(const PointCloud& cloud, const NeighborGraph& graph) {
    return relative_geometry(cloud.coords, graph.indices);
}

PointCloud sample_points(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw DomainError("sample_points: n must be positive");
    const std::size_t total = cloud.size();
    if (total == 0) throw DataError("sample_points: empty cloud");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> pick;
    if (n <= total) {
        pick.resize(total);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(n);
    } else {
        std::uniform_int_distribution<std::size_t> dist(0, total - 1);
        pick.resize(n);
        for (auto& p : pick) p = dist(rng);
    }
    PointCloud out;
    out.category = cloud.category;
    out.name = cloud.name;
    out.coords.reserve(3 * n);
    for (auto i : pick) {
        out.coords.insert(out.coords.end(), cloud.coords.begin() + static_cast<std::ptrdiff_t>(3 * i),
                          cloud.coords.begin() + static_cast<std::ptrdiff_t>(3 * i + 3));
        if (cloud.has_labels()) out.point_labels.push_back(cloud.point_labels[i]);
    }
    return out;
}

}  // namespace ibt
