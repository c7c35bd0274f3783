#pragma once

#include "ibt/geometry.hpp"
#include "ibt/model.hpp"
#include "ibt/tensor.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace ibt::test {

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor::from(std::move(shape), uniform(n, rng), requires_grad);
}

inline PointCloud random_cloud(std::size_t n, std::mt19937_64& rng) {
    PointCloud c;
    c.coords = uniform(3 * n, rng);
    c.category = 0;
    return c;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

/// Small network used by the model-level tests.
inline IbtConfig tiny_config(Task task) {
    IbtConfig c;
    c.task = task;
    c.embed_dim = 8;
    c.embed_hidden = 8;
    c.num_layers = 2;
    c.k = 4;
    c.num_classes = 3;
    c.num_parts = 5;
    c.num_categories = 2;
    c.category_embed_dim = 4;
    c.global_dim = 16;
    c.cls_head = {16, 8};
    c.seg_head = {16, 8};
    c.seg_dropout_stages = 1;
    return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ibt_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace ibt::test
