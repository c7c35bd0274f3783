#pragma once

#include "ibt/tensor.hpp"

#include <cstddef>
#include <random>
#include <vector>

namespace ibt {

/// rows x cols table of row indices, row-major.
struct IndexTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> data;

    std::size_t operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Trailing-dimension-aligned broadcast of two shapes; throws DimensionError.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Batched matrix product over the last two axes. Leading (batch) axes
// broadcast from size 1; a rank-2 right operand applies to every batch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

struct MaxResult {
    Tensor values;
    std::vector<std::size_t> indices;  // argmax along the reduced axis, lowest index on ties
};

// Reductions drop the reduced axis.
MaxResult reduce_max(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x: [M, D], idx: R x K  ->  [R, K, D]
Tensor gather_rows(const Tensor& x, const IndexTable& idx);

/// Affine batch normalisation over the trailing channel axis.
struct NormState {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    static NormState create(std::size_t channels);
    std::size_t channels() const { return gamma.numel(); }
};

/// Statistics are taken over every axis except the last (channel) one.
/// Training mode updates the running statistics in place.
Tensor batch_norm(const Tensor& x, NormState& state, bool training);

/// Inverted dropout; identity outside training.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

}  // namespace ibt
