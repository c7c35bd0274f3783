#include "ibt/nn.hpp"

#include "ibt/errors.hpp"

#include <cmath>

namespace ibt {

void ParameterRegistry::add(std::string name, Tensor tensor, bool trainable) {
    if (find(name)) throw ContractError("duplicate parameter name: " + name);
    entries_.push_back({std::move(name), std::move(tensor)});
    trainable_.push_back(trainable);
}

void ParameterRegistry::add_parameter(std::string name, Tensor tensor) { add(std::move(name), std::move(tensor), true); }

void ParameterRegistry::add_buffer(std::string name, Tensor tensor) { add(std::move(name), std::move(tensor), false); }

std::vector<Parameter> ParameterRegistry::parameters() const {
    std::vector<Parameter> out;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (trainable_[i]) out.push_back(entries_[i]);
    return out;
}

std::size_t ParameterRegistry::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        if (trainable_[i]) n += entries_[i].tensor.numel();
    return n;
}

const Tensor* ParameterRegistry::find(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return &e.tensor;
    return nullptr;
}

Linear::Linear(std::size_t in, std::size_t out, bool bias, Rng& rng) : in_(in), out_(out) {
    if (in == 0 || out == 0) throw ConfigError("linear layer with zero width");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> w(in * out);
    for (auto& v : w) v = dist(rng);
    weight_ = Tensor::from({in, out}, std::move(w), true);
    if (bias) {
        std::vector<double> b(out);
        for (auto& v : b) v = dist(rng);
        bias_ = Tensor::from({out}, std::move(b), true);
    }
}

Tensor Linear::forward(const Tensor& x) const {
    auto y = matmul(x, weight_);
    return bias_.defined() ? add(y, bias_) : y;
}

void Linear::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    registry.add_parameter(prefix + ".weight", weight_);
    if (bias_.defined()) registry.add_parameter(prefix + ".bias", bias_);
}

SharedMlp::SharedMlp(std::size_t in, const std::vector<MlpStage>& stages, Rng& rng) : in_(in) {
    std::size_t width = in;
    for (const auto& s : stages) {
        Stage st;
        // A bias in front of batch-norm is cancelled by the mean subtraction.
        st.linear = Linear(width, s.out, !s.norm, rng);
        st.has_norm = s.norm;
        if (s.norm) st.norm = NormState::create(s.out);
        st.relu = s.relu;
        layers_.push_back(std::move(st));
        width = s.out;
    }
}

std::size_t SharedMlp::out_features() const { return layers_.empty() ? in_ : layers_.back().linear.out_features(); }

Tensor SharedMlp::forward(const Tensor& x, bool training) {
    Tensor y = x;
    for (auto& st : layers_) {
        y = st.linear.forward(y);
        if (st.has_norm) y = batch_norm(y, st.norm, training);
        if (st.relu) y = relu(y);
    }
    return y;
}

void SharedMlp::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& st = layers_[i];
        const std::string p = prefix + "." + std::to_string(i);
        st.linear.register_into(registry, p + ".linear");
        if (st.has_norm) {
            registry.add_parameter(p + ".norm.gamma", st.norm.gamma);
            registry.add_parameter(p + ".norm.beta", st.norm.beta);
            registry.add_buffer(p + ".norm.running_mean", st.norm.running_mean);
            registry.add_buffer(p + ".norm.running_var", st.norm.running_var);
        }
    }
}

}  // namespace ibt
