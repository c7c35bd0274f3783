#pragma once

#include "ibt/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ibt {

struct GradCheckOptions {
    double tol = 1e-4;
    double abs_tol = 1e-7;  // accepted regardless of relative error
    std::size_t subsample_threshold = 2000;
    std::size_t subsample = 500;
    std::uint64_t seed = 0;
};

struct ParameterCheck {
    std::string name;
    std::size_t size = 0;
    std::size_t checked = 0;
    double max_rel_error = 0.0;  // over coordinates with |grad| >= abs_tol / tol
    double max_abs_error = 0.0;
    std::size_t refined = 0;  // coordinates re-tested with a smaller step
    bool pass = true;
};

struct GradCheckReport {
    std::string label;
    std::vector<ParameterCheck> entries;
    double tol = 0.0;
    double elapsed_seconds = 0.0;
    bool pass = true;

    double max_rel_error() const;
};

/// Central differences against the analytic gradient of `fn`, which must
/// rebuild its graph from the current parameter values on every call.
/// The step is h = 1e-5 max(1, |theta|); a coordinate that fails is retried
/// at h/10 and h/100 before it counts as a failure.
/// Blocks with more than `subsample_threshold` scalars check a seeded subset
/// of `subsample` coordinates per tensor. Throws ContractError when two
/// baseline evaluations disagree.
GradCheckReport finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Parameter>& params,
                                  const GradCheckOptions& options = {});

struct GradCheckCase {
    std::string name;
    std::function<GradCheckReport(const GradCheckOptions&)> run;
};

/// Every differentiable primitive on small random inputs.
std::vector<GradCheckCase> op_cases();
/// RPE, pooling, transformer, whole layers and the shared MLP.
std::vector<GradCheckCase> layer_cases();
/// Classification and segmentation losses of tiny networks in eval mode.
std::vector<GradCheckCase> model_cases();

/// An elementwise product whose backward rule has the wrong sign for the
/// second operand. Exists only so tests can confirm the checker catches it.
Tensor faulty_mul(const Tensor& a, const Tensor& b);
GradCheckCase faulty_case();

/// Aligned text table, one row per parameter.
std::string format_table(const std::vector<GradCheckReport>& reports);
std::string to_json(const std::vector<GradCheckReport>& reports);

}  // namespace ibt
