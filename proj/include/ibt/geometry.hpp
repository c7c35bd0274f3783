#pragma once

#include "ibt/ops.hpp"
#include "ibt/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ibt {

struct PointCloud {
    std::vector<double> coords;             // N x 3, xyz interleaved
    std::vector<std::size_t> point_labels;  // empty or N part ids
    std::optional<std::size_t> category;
    std::string name;

    std::size_t size() const { return coords.size() / 3; }
    std::array<double, 3> point(std::size_t i) const { return {coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]}; }
    bool has_labels() const { return !point_labels.empty(); }
};

/// Throws DataError unless the cloud is non-empty, finite and label-consistent.
void validate_cloud(const PointCloud& cloud);

/// k nearest neighbours per point; column 0 is the point itself.
struct NeighborGraph {
    IndexTable indices;
    std::size_t k = 0;
};

NeighborGraph knn_graph(const PointCloud& cloud, std::size_t k);
NeighborGraph knn_graph(std::span<const double> coords, std::size_t k);

/// Concatenates per-cloud graphs into one table over the stacked rows of all
/// clouds (cloud b's rows start at b * points_per_cloud).
IndexTable stack_graphs(const std::vector<NeighborGraph>& graphs);

struct RelativeGeometry {
    Tensor deltas;  // [R, K, 3]  x_i - x_j
    Tensor dists;   // [R, K, 1]  |x_i - x_j|
};

RelativeGeometry relative_geometry(const PointCloud& cloud, const NeighborGraph& graph);
RelativeGeometry relative_geometry(std::span<const double> coords, const IndexTable& graph);

/// Uniform subsample: without replacement when n <= N, with replacement otherwise.
PointCloud sample_points(const PointCloud& cloud, std::size_t n, std::uint64_t seed);

}  // namespace ibt
