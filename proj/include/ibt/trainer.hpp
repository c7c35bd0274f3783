#pragma once

#include "ibt/data.hpp"
#include "ibt/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ibt {

/// Mean of -log softmax(logits)[target] over rows. logits: [M, C], targets: M.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets);

/// Classical (heavy-ball) momentum: v <- mu v + g; theta <- theta - lr v.
class SgdState {
public:
    SgdState(const std::vector<Parameter>& params, double lr = 0.1, double momentum = 0.9);

    /// Throws ContractError when a parameter has no gradient.
    void step(std::vector<Parameter>& params);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    double momentum() const { return momentum_; }
    const std::vector<std::vector<double>>& velocities() const { return velocity_; }

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

void sgd_step(std::vector<Parameter>& params, SgdState& state);

struct LossRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;  // global step, 0-based
    double loss = 0.0;
};

struct MetricsReport {
    // classification
    double overall_accuracy = 0.0;
    double mean_class_accuracy = 0.0;
    // segmentation; categories without shapes are excluded from category_miou
    std::vector<double> per_class_iou;
    std::vector<std::size_t> per_class_count;
    double category_miou = 0.0;
    double instance_miou = 0.0;

    std::vector<LossRecord> loss_history;
};

/// OA and mAcc from predicted vs. true class ids. mAcc skips empty classes.
MetricsReport classification_metrics(const std::vector<std::size_t>& predicted,
                                     const std::vector<std::size_t>& truth, std::size_t num_classes);

/// IoU per part of `range`, averaged; a part absent from both sides scores 1.
double shape_iou(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& truth,
                 const PartRange& range);

/// predicted[s] holds one part id per point of dataset.clouds[s].
MetricsReport segmentation_metrics(const std::vector<std::vector<std::size_t>>& predicted, const Dataset& dataset);

/// A stack of equally sized clouds ready for the model.
struct Batch {
    Tensor coords;                     // [B, N, 3]
    Tensor category_onehot;            // [B, num_categories]; segmentation only
    std::vector<std::size_t> targets;  // B class ids, or B*N part ids
    std::vector<std::size_t> categories;
};

Batch make_batch(const Dataset& dataset, const std::vector<std::size_t>& indices, const IbtConfig& config);

/// Logits flattened to [B, C] (classification) or [B*N, P] (segmentation).
Tensor forward_batch(IbtModel& model, const Batch& batch, bool training);

/// Arg-max per row; for segmentation rows are restricted to the shape's part range.
std::vector<std::size_t> predict_classes(const Tensor& logits);
std::vector<std::vector<std::size_t>> predict_parts(const Tensor& logits, const Batch& batch, const Dataset& dataset);

MetricsReport evaluate_classification(IbtModel& model, const Dataset& dataset, std::size_t batch_size = 16);
MetricsReport evaluate_segmentation(IbtModel& model, const Dataset& dataset, std::size_t batch_size = 16);
MetricsReport evaluate(IbtModel& model, const Dataset& dataset, std::size_t batch_size = 16);

/// OA for classification, instance mIoU for segmentation.
double primary_metric(const MetricsReport& report, Task task);

enum class LrSchedule { constant, cosine };

struct TrainOptions {
    std::size_t epochs = 1;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    double lr = 0.1;
    double momentum = 0.9;
    LrSchedule schedule = LrSchedule::constant;
    /// Stop once the eval-mode train metric reaches this value; 0 disables.
    double target_train_metric = 0.0;
    /// Scored after every epoch to pick the best checkpoint when given.
    const Dataset* monitor = nullptr;
    /// When set, final.ckpt and best.ckpt are written here.
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(std::size_t epoch, double mean_loss, double metric)> on_epoch;
};

struct TrainResult {
    MetricsReport report;  // train-set metrics of the final model plus the loss history
    std::vector<double> epoch_metric;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
};

/// Seeded shuffle per epoch; forward, loss, backward and one SGD step per batch.
/// Throws TrainingError naming epoch and batch on a non-finite loss.
TrainResult train(IbtModel& model, const Dataset& dataset, const TrainOptions& options);

}  // namespace ibt
