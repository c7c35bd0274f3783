#pragma once

#include "ibt/layers.hpp"
#include "ibt/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ibt {

enum class Task { classification, segmentation };

std::string to_string(Task task);
Task parse_task(const std::string& text);

struct IbtConfig {
    Task task = Task::classification;
    std::size_t embed_dim = 128;
    std::size_t embed_hidden = 64;
    std::size_t num_layers = 3;
    std::size_t k = 40;
    std::size_t num_classes = 40;
    std::size_t num_parts = 50;
    std::size_t num_categories = 16;
    std::size_t category_embed_dim = 64;
    std::size_t global_dim = 1024;
    std::vector<std::size_t> cls_head = {512, 256};
    std::vector<std::size_t> seg_head = {512, 256, 128};
    std::size_t seg_dropout_stages = 2;  // MBRD stages followed by dropout
    double dropout = 0.5;
    bool seg_include_embedding = false;  // also concat the embedding output f0
    AblationSwitches switches;
    LocalityStream stream = LocalityStream::gate_only;

    LayerConfig layer_config() const;
    void validate() const;
};

/// Embedding layer followed by the stacked IBT layers.
struct BackboneOutput {
    LayerInputs inputs;
    Tensor embedding;             // f0, [R, D]
    std::vector<Tensor> layers;   // f1..fL, each [R, D]
    Tensor coarse_global;         // [B, D], max of f0 over points
};

/// Classification or segmentation network. Parameters are created at
/// construction from `seed` and enumerated, in a fixed order, by registry().
class IbtModel {
public:
    IbtModel(const IbtConfig& config, std::uint64_t seed);

    /// coords [B, N, 3] -> logits [B, num_classes]
    Tensor classify(const Tensor& coords, bool training);
    /// coords [B, N, 3], one-hot [B, num_categories] -> logits [B, N, num_parts]
    Tensor segment(const Tensor& coords, const Tensor& category_onehot, bool training);

    BackboneOutput backbone(const Tensor& coords, bool training);

    const IbtConfig& config() const { return config_; }
    const ParameterRegistry& registry() const { return registry_; }
    std::vector<Parameter> parameters() const { return registry_.parameters(); }
    std::size_t parameter_count() const { return registry_.parameter_count(); }

    /// Mutable access for tests that probe individual blocks.
    std::vector<IbtLayer>& ibt_layers() { return layers_; }

private:
    struct HeadStage {
        Linear linear;
        NormState norm;
        bool dropout = false;
    };

    Tensor run_head(std::vector<HeadStage>& stages, Tensor x, bool training);
    Tensor global_feature(const BackboneOutput& bb, bool training);
    void build_registry();

    IbtConfig config_;
    Rng dropout_rng_;
    SharedMlp embed_;
    std::vector<IbtLayer> layers_;
    SharedMlp trunk_;  // concatenated features -> global_dim, before max-pooling
    std::vector<HeadStage> head_;
    Linear classifier_;
    SharedMlp category_embed_;
    ParameterRegistry registry_;
};

}  // namespace ibt
