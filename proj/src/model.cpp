#include "ibt/model.hpp"

#include "ibt/errors.hpp"

namespace ibt {

std::string to_string(Task task) { return task == Task::classification ? "classification" : "segmentation"; }

Task parse_task(const std::string& text) {
    if (text == "classification" || text == "cls") return Task::classification;
    if (text == "segmentation" || text == "seg" || text == "part_segmentation") return Task::segmentation;
    throw ConfigError("unknown task '" + text + "'");
}

LayerConfig IbtConfig::layer_config() const {
    LayerConfig lc;
    lc.dim = embed_dim;
    lc.edge_dim = embed_dim;
    lc.switches = switches;
    lc.stream = stream;
    return lc;
}

void IbtConfig::validate() const {
    if (embed_dim == 0 || embed_dim % 4 != 0) {
        throw ConfigError("embed_dim=" + std::to_string(embed_dim) + " must be a positive multiple of 4");
    }
    if (num_layers < 1) throw ConfigError("num_layers must be at least 1");
    if (k < 1) throw ConfigError("k must be at least 1");
    if (global_dim == 0 || embed_hidden == 0) throw ConfigError("network widths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
    if (task == Task::classification && num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (task == Task::segmentation) {
        if (num_parts < 2) throw ConfigError("num_parts must be at least 2");
        if (num_categories < 1) throw ConfigError("num_categories must be at least 1");
        if (seg_head.empty()) throw ConfigError("seg_head needs at least one stage");
    }
    for (auto w : cls_head)
        if (w == 0) throw ConfigError("cls_head widths must be positive");
    for (auto w : seg_head)
        if (w == 0) throw ConfigError("seg_head widths must be positive");
    layer_config().validate();
}

IbtModel::IbtModel(const IbtConfig& config, std::uint64_t seed) : config_(config), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.embed_dim;
    embed_ = SharedMlp(3, {{config_.embed_hidden}, {d}}, rng);
    const auto lc = config_.layer_config();
    for (std::size_t i = 0; i < config_.num_layers; ++i) layers_.emplace_back(lc, rng);

    trunk_ = SharedMlp(d * config_.num_layers + d, {{config_.global_dim}}, rng);

    if (config_.task == Task::classification) {
        std::size_t width = config_.global_dim;
        for (auto w : config_.cls_head) {
            head_.push_back({Linear(width, w, false, rng), NormState::create(w), true});
            width = w;
        }
        classifier_ = Linear(width, config_.num_classes, true, rng);
    } else {
        category_embed_ = SharedMlp(config_.num_categories, {{config_.category_embed_dim}}, rng);
        std::size_t width = d * config_.num_layers + (config_.seg_include_embedding ? d : 0) + config_.global_dim +
                            config_.category_embed_dim;
        for (std::size_t i = 0; i < config_.seg_head.size(); ++i) {
            const auto w = config_.seg_head[i];
            head_.push_back({Linear(width, w, false, rng), NormState::create(w), i < config_.seg_dropout_stages});
            width = w;
        }
        classifier_ = Linear(width, config_.num_parts, true, rng);
    }
    build_registry();
}

void IbtModel::build_registry() {
    embed_.register_into(registry_, "embed");
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].register_into(registry_, "ibt" + std::to_string(i + 1));
    trunk_.register_into(registry_, "trunk");
    if (config_.task == Task::segmentation) category_embed_.register_into(registry_, "category");
    for (std::size_t i = 0; i < head_.size(); ++i) {
        const std::string p = "head." + std::to_string(i);
        head_[i].linear.register_into(registry_, p + ".linear");
        registry_.add_parameter(p + ".norm.gamma", head_[i].norm.gamma);
        registry_.add_parameter(p + ".norm.beta", head_[i].norm.beta);
        registry_.add_buffer(p + ".norm.running_mean", head_[i].norm.running_mean);
        registry_.add_buffer(p + ".norm.running_var", head_[i].norm.running_var);
    }
    classifier_.register_into(registry_, "classifier");
}

BackboneOutput IbtModel::backbone(const Tensor& coords, bool training) {
    if (coords.rank() != 3 || coords.dim(2) != 3) {
        throw DimensionError("expected coordinates [B, N, 3], got " + shape_str(coords.shape()));
    }
    const std::size_t batch = coords.dim(0), points = coords.dim(1), d = config_.embed_dim;
    if (points < config_.k) {
        throw DomainError("cloud has " + std::to_string(points) + " points, fewer than k=" + std::to_string(config_.k));
    }
    BackboneOutput out;
    out.inputs = make_layer_inputs(coords.data(), batch, config_.k);
    Tensor features = embed_.forward(out.inputs.coords, training);
    out.embedding = features;
    out.coarse_global = reduce_max(reshape(features, {batch, points, d}), 1).values;
    for (auto& layer : layers_) {
        features = layer.forward(features, out.inputs, training);
        out.layers.push_back(features);
    }
    return out;
}

Tensor IbtModel::global_feature(const BackboneOutput& bb, bool training) {
    const std::size_t batch = bb.inputs.batch, points = bb.inputs.points, d = config_.embed_dim;
    std::vector<Tensor> parts = bb.layers;
    parts.push_back(reshape(broadcast_to(reshape(bb.coarse_global, {batch, 1, d}), {batch, points, d}),
                            {batch * points, d}));
    Tensor lifted = trunk_.forward(concat(parts, 1), training);
    return reduce_max(reshape(lifted, {batch, points, config_.global_dim}), 1).values;
}

Tensor IbtModel::run_head(std::vector<HeadStage>& stages, Tensor x, bool training) {
    for (auto& st : stages) {
        x = relu(batch_norm(st.linear.forward(x), st.norm, training));
        if (st.dropout) x = dropout(x, config_.dropout, dropout_rng_, training);
    }
    return classifier_.forward(x);
}

Tensor IbtModel::classify(const Tensor& coords, bool training) {
    if (config_.task != Task::classification) throw ContractError("classify() on a segmentation model");
    auto bb = backbone(coords, training);
    return run_head(head_, global_feature(bb, training), training);
}

Tensor IbtModel::segment(const Tensor& coords, const Tensor& category_onehot, bool training) {
    if (config_.task != Task::segmentation) throw ContractError("segment() on a classification model");
    const std::size_t batch = coords.rank() == 3 ? coords.dim(0) : 0;
    if (category_onehot.shape() != Shape{batch, config_.num_categories}) {
        throw DimensionError("category one-hot must be [" + std::to_string(batch) + ", " +
                             std::to_string(config_.num_categories) + "], got " + shape_str(category_onehot.shape()));
    }
    const auto& oh = category_onehot.data();
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t ones = 0;
        for (std::size_t c = 0; c < config_.num_categories; ++c) {
            const double v = oh[b * config_.num_categories + c];
            if (v == 1.0) ++ones;
            else if (v != 0.0) ones = 2;
        }
        if (ones != 1) throw DataError("category one-hot row " + std::to_string(b) + " is not one-hot");
    }

    auto bb = backbone(coords, training);
    const std::size_t points = bb.inputs.points, rows = batch * points;
    Tensor global = global_feature(bb, training);
    Tensor category = category_embed_.forward(category_onehot, training);

    auto spread = [&](const Tensor& per_cloud) {
        const std::size_t w = per_cloud.dim(1);
        return reshape(broadcast_to(reshape(per_cloud, {batch, 1, w}), {batch, points, w}), {rows, w});
    };
    std::vector<Tensor> parts = bb.layers;
    if (config_.seg_include_embedding) parts.insert(parts.begin(), bb.embedding);
    parts.push_back(spread(global));
    parts.push_back(spread(category));
    Tensor logits = run_head(head_, concat(parts, 1), training);
    return reshape(logits, {batch, points, config_.num_parts});
}

}  // namespace ibt
