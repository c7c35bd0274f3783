#pragma once

#include "ibt/ops.hpp"
#include "ibt/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace ibt {

using Rng = std::mt19937_64;

/// Flat, ordered view of a model's state. Trainable parameters and
/// non-trainable buffers (running statistics) share one namespace.
class ParameterRegistry {
public:
    void add_parameter(std::string name, Tensor tensor);
    void add_buffer(std::string name, Tensor tensor);

    std::vector<Parameter> parameters() const;
    const std::vector<Parameter>& state() const { return entries_; }
    std::size_t parameter_count() const;
    const Tensor* find(const std::string& name) const;

private:
    void add(std::string name, Tensor tensor, bool trainable);

    std::vector<Parameter> entries_;
    std::vector<bool> trainable_;
};

/// y = x W + b over the trailing axis. W is [in, out].
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Tensor weight_;
    Tensor bias_;
};

struct MlpStage {
    std::size_t out = 0;
    bool norm = true;
    bool relu = true;
};

// Pointwise MLP: every stage is linear, then optional batch-norm and ReLU.
class SharedMlp {
public:
    SharedMlp() = default;
    SharedMlp(std::size_t in, const std::vector<MlpStage>& stages, Rng& rng);

    Tensor forward(const Tensor& x, bool training);
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const;
    bool empty() const { return layers_.empty(); }

private:
    struct Stage {
        Linear linear;
        bool has_norm = false;
        NormState norm;
        bool relu = false;
    };
    std::size_t in_ = 0;
    std::vector<Stage> layers_;
};

}  // namespace ibt
