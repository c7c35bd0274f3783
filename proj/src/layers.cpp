#include "ibt/layers.hpp"

#include "ibt/errors.hpp"

#include <cmath>

namespace ibt {

void AblationSwitches::validate() const {
    if (!use_max_pool && !use_attention_pool) {
        throw ConfigError("at least one of use_max_pool / use_attention_pool must stay enabled");
    }
    if (!use_pooling_module && !use_transformer) {
        throw ConfigError("removing both the pooling module and the transformer leaves no IBT layer");
    }
}

bool LayerConfig::needs_local_branch() const {
    const auto& s = switches;
    if (!s.use_pooling_module) return false;
    return !s.use_transformer || s.use_channel_gate || stream == LocalityStream::feed_forward;
}

void LayerConfig::validate() const {
    switches.validate();
    if (dim == 0 || dim % 4 != 0) {
        throw ConfigError("feature width D=" + std::to_string(dim) + " must be a positive multiple of 4");
    }
    if (edge_dim == 0 || delta_hidden == 0) throw ConfigError("layer widths must be positive");
    if (stream == LocalityStream::feed_forward && !switches.use_pooling_module) {
        throw ConfigError("locality_stream=feed_forward needs the pooling module");
    }
}

LayerInputs make_layer_inputs(std::span<const double> coords, std::size_t batch, const IndexTable& graph) {
    if (batch == 0 || coords.size() % (3 * batch) != 0) {
        throw DimensionError("make_layer_inputs: coordinate buffer does not split into " + std::to_string(batch) +
                             " clouds");
    }
    const std::size_t rows = coords.size() / 3;
    if (graph.rows != rows) throw DimensionError("make_layer_inputs: graph rows do not match point count");
    auto rel = relative_geometry(coords, graph);
    LayerInputs in;
    in.coords = Tensor::from({rows, 3}, std::vector<double>(coords.begin(), coords.end()));
    in.edge_geometry = concat({rel.deltas, rel.dists}, 2);
    in.graph = graph;
    in.batch = batch;
    in.points = rows / batch;
    return in;
}

LayerInputs make_layer_inputs(std::span<const double> coords, std::size_t batch, std::size_t k) {
    if (batch == 0 || coords.size() % (3 * batch) != 0) {
        throw DimensionError("make_layer_inputs: coordinate buffer does not split into " + std::to_string(batch) +
                             " clouds");
    }
    const std::size_t per_cloud = coords.size() / batch;
    std::vector<NeighborGraph> graphs;
    graphs.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) graphs.push_back(knn_graph(coords.subspan(b * per_cloud, per_cloud), k));
    return make_layer_inputs(coords, batch, stack_graphs(graphs));
}

// ---------------------------------------------------------------------------

RelativePositionEncoding::RelativePositionEncoding(std::size_t dim, std::size_t edge_dim, bool with_position,
                                                   Rng& rng)
    : with_position_(with_position) {
    if (with_position_) {
        encode_ = SharedMlp(4 + dim, {{dim}}, rng);
        fuse_ = SharedMlp(2 * dim, {{edge_dim}}, rng);
    } else {
        fuse_ = SharedMlp(dim, {{edge_dim}}, rng);
    }
}

Tensor RelativePositionEncoding::forward(const Tensor& features, const LayerInputs& inputs, bool training) {
    if (features.rank() != 2 || features.dim(0) != inputs.graph.rows) {
        throw DimensionError("relative_position_encoding: features " + shape_str(features.shape()) +
                             " not aligned with " + std::to_string(inputs.graph.rows) + " points");
    }
    if (features.dim(1) != fuse_.in_features() - (with_position_ ? encode_.out_features() : 0)) {
        throw DimensionError("relative_position_encoding: feature width " + std::to_string(features.dim(1)) +
                             " does not match the layer");
    }
    const std::size_t rows = features.dim(0), width = features.dim(1);
    Tensor neighbours = gather_rows(features, inputs.graph);  // [R, K, D]
    if (!with_position_) return fuse_.forward(neighbours, training);

    Tensor centre = reshape(features, {rows, 1, width});
    Tensor diff = sub(centre, neighbours);
    Tensor position = encode_.forward(concat({inputs.edge_geometry, diff}, 2), training);
    return fuse_.forward(concat({position, neighbours}, 2), training);
}

void RelativePositionEncoding::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    if (with_position_) encode_.register_into(registry, prefix + ".encode");
    fuse_.register_into(registry, prefix + ".fuse");
}

// ---------------------------------------------------------------------------

AttentiveFeaturePooling::AttentiveFeaturePooling(std::size_t edge_dim, std::size_t dim, bool use_attention,
                                                 bool use_max, Rng& rng)
    : use_attention_(use_attention), use_max_(use_max) {
    if (!use_attention && !use_max) throw ConfigError("attentive pooling needs at least one branch");
    // A per-channel bias is constant over the neighbour axis and cancels in the softmax.
    if (use_attention_) score_ = Linear(edge_dim, edge_dim, false, rng);
    const std::size_t concat_width = edge_dim * ((use_attention_ ? 1 : 0) + (use_max_ ? 1 : 0));
    out_ = SharedMlp(concat_width, {{dim, true, false}}, rng);
}

Tensor AttentiveFeaturePooling::forward(const Tensor& edges, bool training, PoolingTrace* trace) {
    if (edges.rank() != 3) throw DimensionError("attentive_feature_pooling expects [R, K, D'], got " + shape_str(edges.shape()));
    if (edges.dim(1) == 0) throw DomainError("attentive_feature_pooling over zero neighbours");
    std::vector<Tensor> branches;
    if (use_attention_) {
        Tensor scores = softmax(score_.forward(edges), 1);
        Tensor pooled = reduce_sum(mul(edges, scores), 1);
        if (trace) {
            trace->scores = scores;
            trace->attention = pooled;
        }
        branches.push_back(pooled);
    }
    if (use_max_) {
        Tensor pooled = reduce_max(edges, 1).values;
        if (trace) trace->max = pooled;
        branches.push_back(pooled);
    }
    Tensor joined = branches.size() == 1 ? branches.front() : concat(branches, 1);
    return out_.forward(joined, training);
}

void AttentiveFeaturePooling::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    if (use_attention_) score_.register_into(registry, prefix + ".score");
    out_.register_into(registry, prefix + ".out");
}

// ---------------------------------------------------------------------------

LocalityAwareTransformer::LocalityAwareTransformer(const LayerConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.dim;
    if (config_.switches.use_position_embedding) {
        delta_ = SharedMlp(3, {{config_.delta_hidden}, {d, false, false}}, rng);
    }
    query_ = Linear(d, config_.qk_dim(), false, rng);
    key_ = Linear(d, config_.qk_dim(), false, rng);
    value_ = Linear(d, d, true, rng);
    mbr_ = SharedMlp(d, {{d}}, rng);
}

Tensor LocalityAwareTransformer::forward(const Tensor& features, const Tensor& coords, const Tensor& local,
                                         std::size_t batch, bool training, TransformerTrace* trace) {
    const auto& sw = config_.switches;
    const std::size_t rows = features.dim(0), d = config_.dim;
    if (features.rank() != 2 || features.dim(1) != d) {
        throw DimensionError("locality_aware_transformer: features " + shape_str(features.shape()) +
                             " do not have width " + std::to_string(d));
    }
    if (batch == 0 || rows % batch != 0) throw DimensionError("locality_aware_transformer: bad batch split");
    const bool gate_on = sw.use_channel_gate && sw.use_pooling_module;
    const bool feed_local = config_.stream == LocalityStream::feed_forward;
    if ((gate_on || feed_local) && (!local.defined() || local.shape() != features.shape())) {
        throw DimensionError("locality_aware_transformer: local features must match " + shape_str(features.shape()));
    }
    const std::size_t points = rows / batch, dq = config_.qk_dim();

    Tensor delta;
    Tensor f_in = feed_local ? local : features;
    if (sw.use_position_embedding) {
        delta = delta_.forward(coords, training);
        f_in = add(f_in, delta);
    }
    Tensor gate = gate_on ? sigmoid(local) : Tensor{};

    Tensor q = reshape(query_.forward(f_in), {batch, points, dq});
    Tensor k = reshape(key_.forward(f_in), {batch, points, dq});
    Tensor v = value_.forward(f_in);
    if (delta.defined()) v = add(v, delta);
    if (gate.defined()) v = mul(v, gate);

    Tensor logits = scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(dq)));
    Tensor attention = softmax(logits, 2);
    Tensor f_sa = reshape(matmul(attention, reshape(v, {batch, points, d})), {rows, d});
    Tensor offset = mbr_.forward(sub(f_in, f_sa), training);
    Tensor out = add(offset, f_in);
    if (trace) *trace = {delta, f_in, gate, attention, f_sa, offset, out};
    return out;
}

void LocalityAwareTransformer::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    if (config_.switches.use_position_embedding) delta_.register_into(registry, prefix + ".delta");
    query_.register_into(registry, prefix + ".query");
    key_.register_into(registry, prefix + ".key");
    value_.register_into(registry, prefix + ".value");
    mbr_.register_into(registry, prefix + ".mbr");
}

// ---------------------------------------------------------------------------

IbtLayer::IbtLayer(const LayerConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const auto& sw = config_.switches;
    if (config_.needs_local_branch()) {
        rpe_.emplace(config_.dim, config_.edge_dim, sw.use_position_encoding, rng);
        afp_.emplace(config_.edge_dim, config_.dim, sw.use_attention_pool, sw.use_max_pool, rng);
    }
    if (sw.use_transformer) {
        lat_.emplace(config_, rng);
    } else {
        fallback_ = SharedMlp(config_.dim, {{config_.dim}}, rng);
    }
}

Tensor IbtLayer::forward(const Tensor& features, const LayerInputs& inputs, bool training, IbtTrace* trace) {
    Tensor local;
    if (rpe_) {
        Tensor edges = rpe_->forward(features, inputs, training);
        local = afp_->forward(edges, training, trace ? &trace->pooling : nullptr);
        if (trace) {
            trace->edges = edges;
            trace->local = local;
        }
    }
    if (lat_) {
        return lat_->forward(features, inputs.coords, local, inputs.batch, training,
                             trace ? &trace->transformer : nullptr);
    }
    return add(features, fallback_.forward(local, training));
}

void IbtLayer::register_into(ParameterRegistry& registry, const std::string& prefix) const {
    if (rpe_) rpe_->register_into(registry, prefix + ".rpe");
    if (afp_) afp_->register_into(registry, prefix + ".afp");
    if (lat_) lat_->register_into(registry, prefix + ".lat");
    if (!fallback_.empty()) fallback_.register_into(registry, prefix + ".mlp");
}

}  // namespace ibt
