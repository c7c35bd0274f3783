#include "ibt/trainer.hpp"

#include "ibt/checkpoint.hpp"
#include "ibt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace ibt {

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy expects [M, C] logits, got " + shape_str(logits.shape()));
    const std::size_t m = logits.dim(0), c = logits.dim(1);
    if (targets.size() != m) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                             " rows");
    }
    if (m == 0) throw DomainError("cross_entropy over zero rows");
    for (auto t : targets) {
        if (t >= c) throw DataError("target " + std::to_string(t) + " outside " + std::to_string(c) + " classes");
    }
    const auto x = logits.data();
    std::vector<double> probs(m * c);
    double total = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = x.data() + r * c;
        const double top = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - top);
        const double log_z = std::log(z) + top;
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - log_z);
        total += log_z - row[targets[r]];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    return detail::make_result({}, {total * inv_m}, {logits},
                               [probs = std::move(probs), targets, m, c, inv_m](detail::Node& node) {
                                   const double g = node.grad[0] * inv_m;
                                   auto& dst = node.parents[0]->grad_buffer();
                                   for (std::size_t r = 0; r < m; ++r) {
                                       for (std::size_t j = 0; j < c; ++j) {
                                           const double onehot = j == targets[r] ? 1.0 : 0.0;
                                           dst[r * c + j] += g * (probs[r * c + j] - onehot);
                                       }
                                   }
                               });
}

SgdState::SgdState(const std::vector<Parameter>& params, double lr, double momentum) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void SgdState::step(std::vector<Parameter>& params) {
    if (params.size() != velocity_.size()) {
        throw ContractError("SGD state tracks " + std::to_string(velocity_.size()) + " parameters, got " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& t = params[i].tensor;
        if (!t.has_grad()) throw ContractError("parameter '" + params[i].name + "' has no gradient");
        auto& v = velocity_[i];
        if (v.size() != t.numel()) throw ContractError("velocity shape mismatch for '" + params[i].name + "'");
        const auto g = t.grad();
        auto theta = t.mutable_data();
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            theta[j] -= lr_ * v[j];
        }
    }
}

void sgd_step(std::vector<Parameter>& params, SgdState& state) { state.step(params); }

MetricsReport classification_metrics(const std::vector<std::size_t>& predicted,
                                     const std::vector<std::size_t>& truth, std::size_t num_classes) {
    if (predicted.size() != truth.size()) throw DimensionError("prediction and truth lengths differ");
    if (truth.empty()) throw DomainError("metrics over an empty dataset");
    std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes) throw DataError("class id " + std::to_string(truth[i]) + " out of range");
        ++total[truth[i]];
        if (predicted[i] == truth[i]) {
            ++correct[truth[i]];
            ++hits;
        }
    }
    MetricsReport r;
    r.overall_accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
    double acc_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (total[c] == 0) continue;
        acc_sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
        ++present;
    }
    r.mean_class_accuracy = acc_sum / static_cast<double>(present);
    return r;
}

double shape_iou(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                 const PartRange& range) {
    if (predicted.size() != truth.size()) throw DimensionError("prediction and truth lengths differ");
    if (range.size() == 0) throw DomainError("empty part range");
    double sum = 0.0;
    for (std::size_t part = range.begin; part < range.end; ++part) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool p = predicted[i] == part, t = truth[i] == part;
            inter += p && t;
            uni += p || t;
        }
        sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return sum / static_cast<double>(range.size());
}

MetricsReport segmentation_metrics(const std::vector<std::vector<std::size_t>>& predicted, const Dataset& dataset) {
    if (dataset.size() == 0) throw DomainError("metrics over an empty dataset");
    if (predicted.size() != dataset.size()) throw DimensionError("one prediction per shape required");
    const std::size_t cats = dataset.class_names.size();
    MetricsReport r;
    r.per_class_iou.assign(cats, 0.0);
    r.per_class_count.assign(cats, 0);
    double instance = 0.0;
    for (std::size_t s = 0; s < dataset.size(); ++s) {
        const auto& cloud = dataset.clouds[s];
        const std::size_t cat = cloud.category.value_or(cats);
        if (cat >= cats || cat >= dataset.part_ranges.size()) throw DataError("shape '" + cloud.name + "' has no category");
        const auto& range = dataset.part_ranges[cat];
        for (auto l : cloud.point_labels) {
            if (!range.contains(l)) throw DataError("label " + std::to_string(l) + " outside the category's part range");
        }
        const double iou = shape_iou(predicted[s], cloud.point_labels, range);
        r.per_class_iou[cat] += iou;
        ++r.per_class_count[cat];
        instance += iou;
    }
    double cat_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cats; ++c) {
        if (r.per_class_count[c] == 0) continue;
        r.per_class_iou[c] /= static_cast<double>(r.per_class_count[c]);
        cat_sum += r.per_class_iou[c];
        ++present;
    }
    r.category_miou = cat_sum / static_cast<double>(present);
    r.instance_miou = instance / static_cast<double>(dataset.size());
    return r;
}

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, const IbtConfig& config) {
    if (indices.empty()) throw DomainError("empty batch");
    const std::size_t n = dataset.clouds.at(indices.front()).size();
    const bool seg = dataset.task == Task::segmentation;
    Batch b;
    std::vector<double> coords;
    coords.reserve(indices.size() * n * 3);
    std::vector<double> onehot;
    if (seg) onehot.assign(indices.size() * config.num_categories, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& cloud = dataset.clouds.at(indices[i]);
        if (cloud.size() != n) {
            throw DataError("cloud '" + cloud.name + "' has " + std::to_string(cloud.size()) + " points, batch expects " +
                            std::to_string(n));
        }
        if (!cloud.category) throw DataError("cloud '" + cloud.name + "' has no category");
        coords.insert(coords.end(), cloud.coords.begin(), cloud.coords.end());
        b.categories.push_back(*cloud.category);
        if (seg) {
            if (*cloud.category >= config.num_categories) throw DataError("category exceeds the model's category count");
            onehot[i * config.num_categories + *cloud.category] = 1.0;
            b.targets.insert(b.targets.end(), cloud.point_labels.begin(), cloud.point_labels.end());
        } else {
            b.targets.push_back(*cloud.category);
        }
    }
    b.coords = Tensor::from({indices.size(), n, 3}, std::move(coords));
    if (seg) b.category_onehot = Tensor::from({indices.size(), config.num_categories}, std::move(onehot));
    return b;
}

Tensor forward_batch(IbtModel& model, const Batch& batch, bool training) {
    if (model.config().task == Task::classification) return model.classify(batch.coords, training);
    const Tensor logits = model.segment(batch.coords, batch.category_onehot, training);
    return reshape(logits, {logits.dim(0) * logits.dim(1), logits.dim(2)});
}

std::vector<std::size_t> predict_classes(const Tensor& logits) {
    const std::size_t m = logits.dim(0), c = logits.dim(1);
    const auto x = logits.data();
    std::vector<std::size_t> out(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = x.data() + r * c;
        out[r] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
    }
    return out;
}

std::vector<std::vector<std::size_t>> predict_parts(const Tensor& logits, const Batch& batch, const Dataset& dataset) {
    const std::size_t shapes = batch.categories.size();
    const std::size_t n = logits.dim(0) / shapes, p = logits.dim(1);
    const auto x = logits.data();
    std::vector<std::vector<std::size_t>> out(shapes);
    for (std::size_t s = 0; s < shapes; ++s) {
        const auto& range = dataset.part_ranges.at(batch.categories[s]);
        if (range.end > p) throw DataError("part range exceeds the model's part count");
        out[s].resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = x.data() + (s * n + i) * p;
            out[s][i] = static_cast<std::size_t>(std::max_element(row + range.begin, row + range.end) - row);
        }
    }
    return out;
}

namespace {

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t count, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < count; i += batch_size) {
        std::vector<std::size_t> b(std::min(batch_size, count - i));
        std::iota(b.begin(), b.end(), i);
        out.push_back(std::move(b));
    }
    return out;
}

void check_task(const IbtModel& model, const Dataset& dataset) {
    if (model.config().task != dataset.task) {
        throw ConfigError("model task " + to_string(model.config().task) + " does not match dataset task " +
                          to_string(dataset.task));
    }
}

}  // namespace

MetricsReport evaluate_classification(IbtModel& model, const Dataset& dataset, std::size_t batch_size) {
    check_task(model, dataset);
    if (dataset.size() == 0) throw DomainError("evaluation over an empty dataset");
    NoGradGuard guard;
    std::vector<std::size_t> predicted, truth;
    for (const auto& idx : sequential_batches(dataset.size(), std::max<std::size_t>(1, batch_size))) {
        const Batch b = make_batch(dataset, idx, model.config());
        const auto p = predict_classes(forward_batch(model, b, false));
        predicted.insert(predicted.end(), p.begin(), p.end());
        truth.insert(truth.end(), b.targets.begin(), b.targets.end());
    }
    return classification_metrics(predicted, truth, std::max(dataset.class_names.size(), model.config().num_classes));
}

MetricsReport evaluate_segmentation(IbtModel& model, const Dataset& dataset, std::size_t batch_size) {
    check_task(model, dataset);
    if (dataset.size() == 0) throw DomainError("evaluation over an empty dataset");
    NoGradGuard guard;
    std::vector<std::vector<std::size_t>> predicted;
    for (const auto& idx : sequential_batches(dataset.size(), std::max<std::size_t>(1, batch_size))) {
        const Batch b = make_batch(dataset, idx, model.config());
        auto p = predict_parts(forward_batch(model, b, false), b, dataset);
        for (auto& shape : p) predicted.push_back(std::move(shape));
    }
    return segmentation_metrics(predicted, dataset);
}

MetricsReport evaluate(IbtModel& model, const Dataset& dataset, std::size_t batch_size) {
    return dataset.task == Task::classification ? evaluate_classification(model, dataset, batch_size)
                                                : evaluate_segmentation(model, dataset, batch_size);
}

double primary_metric(const MetricsReport& report, Task task) {
    return task == Task::classification ? report.overall_accuracy : report.instance_miou;
}

TrainResult train(IbtModel& model, const Dataset& dataset, const TrainOptions& options) {
    check_task(model, dataset);
    if (options.batch_size == 0) throw ConfigError("batch size must be positive");
    if (options.epochs > 0 && dataset.size() == 0) throw DataError("training set is empty");
    auto params = model.parameters();
    SgdState sgd(params, options.lr, options.momentum);
    const Task task = dataset.task;
    TrainResult result;
    double best = -1.0;
    if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

    std::mt19937_64 shuffle_rng(options.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        if (options.schedule == LrSchedule::cosine) {
            const double t = static_cast<double>(epoch) / static_cast<double>(options.epochs);
            sgd.set_lr(options.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
        }
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        // A trailing batch of one would make batch statistics degenerate; fold it into its predecessor.
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t i = 0; i < order.size(); i += options.batch_size) {
            const std::size_t end = std::min(order.size(), i + options.batch_size);
            if (end - i == 1 && !batches.empty()) {
                batches.back().push_back(order[i]);
            } else {
                batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
            }
        }
        double loss_sum = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch batch = make_batch(dataset, batches[bi], model.config());
            for (auto& p : params) p.tensor.zero_grad();
            const Tensor loss = cross_entropy(forward_batch(model, batch, true), batch.targets);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(bi));
            }
            loss.backward();
            sgd.step(params);
            result.report.loss_history.push_back({epoch, step++, value});
            loss_sum += value;
        }
        ++result.epochs_run;

        const bool need_train_metric = options.target_train_metric > 0.0 || options.monitor == nullptr;
        double train_metric = 0.0;
        if (need_train_metric) train_metric = primary_metric(evaluate(model, dataset, options.batch_size), task);
        const double metric =
            options.monitor ? primary_metric(evaluate(model, *options.monitor, options.batch_size), task) : train_metric;
        result.epoch_metric.push_back(metric);
        if (metric > best) {
            best = metric;
            result.best_epoch = epoch;
            result.best_metric = metric;
            if (options.checkpoint_dir) save_checkpoint(*options.checkpoint_dir / "best.ckpt", model.registry().state());
        }
        if (options.on_epoch) options.on_epoch(epoch, loss_sum / static_cast<double>(batches.size()), metric);
        if (options.target_train_metric > 0.0 && train_metric >= options.target_train_metric) break;
    }

    if (options.checkpoint_dir) {
        save_checkpoint(*options.checkpoint_dir / "final.ckpt", model.registry().state());
        if (result.epochs_run == 0) save_checkpoint(*options.checkpoint_dir / "best.ckpt", model.registry().state());
    }
    auto history = std::move(result.report.loss_history);
    if (dataset.size() > 0) result.report = evaluate(model, dataset, options.batch_size);
    result.report.loss_history = std::move(history);
    return result;
}

}  // namespace ibt
