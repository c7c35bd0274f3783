#pragma once

#include "ibt/geometry.hpp"
#include "ibt/nn.hpp"
#include "ibt/ops.hpp"

#include <optional>
#include <string>

namespace ibt {

/// Module and branch toggles used by the ablation runner. The three
/// module-level flags mirror the "Position / Pooling / Transformer" columns of
/// the module ablation; the rest remove single operations inside a module.
struct AblationSwitches {
    bool use_position_encoding = true;
    bool use_max_pool = true;
    bool use_attention_pool = true;
    bool use_channel_gate = true;        // W = sigmoid(local features)
    bool use_position_embedding = true;  // delta = MLP(xyz)
    bool use_pooling_module = true;      // whole local-feature branch
    bool use_transformer = true;

    /// Throws ConfigError for combinations that leave nothing to compute.
    void validate() const;
};

/// How the pooled local feature reaches the transformer.
enum class LocalityStream {
    gate_only,     // F_in = f + delta; local features act only through W
    feed_forward,  // F_in = f_hat + delta
};

struct LayerConfig {
    std::size_t dim = 128;          // D, feature width in and out
    std::size_t edge_dim = 128;     // D', width of fused edge features
    std::size_t delta_hidden = 64;  // hidden width of the position-embedding MLP
    AblationSwitches switches;
    LocalityStream stream = LocalityStream::gate_only;

    std::size_t qk_dim() const { return dim / 4; }
    bool needs_local_branch() const;
    void validate() const;
};

/// Per-batch constants shared by every IBT layer: coordinates, the stacked
/// neighbour table and the relative geometry (x_i - x_j, |x_i - x_j|).
struct LayerInputs {
    Tensor coords;         // [R, 3]
    Tensor edge_geometry;  // [R, K, 4]
    IndexTable graph;      // R x K over stacked rows
    std::size_t batch = 1;
    std::size_t points = 0;  // per cloud; R = batch * points
};

/// `coords` holds `batch` clouds of equal size back to back (xyz interleaved).
LayerInputs make_layer_inputs(std::span<const double> coords, std::size_t batch, std::size_t k);
LayerInputs make_layer_inputs(std::span<const double> coords, std::size_t batch, const IndexTable& graph);

/// Edge features from relative positions, distances and feature differences,
/// fused with the neighbour feature.
class RelativePositionEncoding {
public:
    RelativePositionEncoding() = default;
    RelativePositionEncoding(std::size_t dim, std::size_t edge_dim, bool with_position, Rng& rng);

    /// features [R, D] -> edge features [R, K, D']
    Tensor forward(const Tensor& features, const LayerInputs& inputs, bool training);
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

private:
    bool with_position_ = true;
    SharedMlp encode_;  // (3 + 1 + D) -> D
    SharedMlp fuse_;    // (D + D) -> D', or D -> D' without position encoding
};

struct PoolingTrace {
    Tensor scores;     // [R, K, D'], softmax over K per channel
    Tensor attention;  // [R, D']
    Tensor max;        // [R, D']
};

/// Channel-wise attention pooling plus max pooling over the K neighbours.
class AttentiveFeaturePooling {
public:
    AttentiveFeaturePooling() = default;
    AttentiveFeaturePooling(std::size_t edge_dim, std::size_t dim, bool use_attention, bool use_max, Rng& rng);

    /// edge features [R, K, D'] -> [R, D]
    Tensor forward(const Tensor& edges, bool training, PoolingTrace* trace = nullptr);
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

private:
    bool use_attention_ = true;
    bool use_max_ = true;
    Linear score_;
    SharedMlp out_;
};

struct TransformerTrace {
    Tensor delta;      // [R, D] or undefined when ablated
    Tensor f_in;       // [R, D]
    Tensor gate;       // [R, D] or undefined when ablated (all ones)
    Tensor attention;  // [B, N, N]
    Tensor f_sa;       // [R, D]
    Tensor offset;     // MBR(F_in - F_sa)
    Tensor out;        // [R, D]
};

/// Offset-attention block whose value matrix is gated by local features.
class LocalityAwareTransformer {
public:
    LocalityAwareTransformer() = default;
    LocalityAwareTransformer(const LayerConfig& config, Rng& rng);

    /// `local` may be undefined when neither the gate nor the feed-forward
    /// stream needs it.
    Tensor forward(const Tensor& features, const Tensor& coords, const Tensor& local, std::size_t batch,
                   bool training, TransformerTrace* trace = nullptr);
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

private:
    LayerConfig config_;
    SharedMlp delta_;
    Linear query_;
    Linear key_;
    Linear value_;
    SharedMlp mbr_;
};

struct IbtTrace {
    Tensor edges;  // RPE output
    Tensor local;  // pooled local feature
    PoolingTrace pooling;
    TransformerTrace transformer;
};

/// One Inductive Bias-aided Transformer layer: local branch (RPE + pooling)
/// feeding a locality-aware transformer. Width in == width out == D.
class IbtLayer {
public:
    IbtLayer() = default;
    IbtLayer(const LayerConfig& config, Rng& rng);

    Tensor forward(const Tensor& features, const LayerInputs& inputs, bool training, IbtTrace* trace = nullptr);
    void register_into(ParameterRegistry& registry, const std::string& prefix) const;

    const LayerConfig& config() const { return config_; }

private:
    LayerConfig config_;
    std::optional<RelativePositionEncoding> rpe_;
    std::optional<AttentiveFeaturePooling> afp_;
    std::optional<LocalityAwareTransformer> lat_;
    SharedMlp fallback_;  // replaces the transformer when it is ablated
};

}  // namespace ibt
