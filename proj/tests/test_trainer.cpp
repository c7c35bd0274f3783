#include "ibt/errors.hpp"
#include "ibt/trainer.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace ibt;

namespace {

Dataset small_synthetic(Task task, std::uint64_t seed, std::size_t per_family = 2, std::size_t points = 16) {
    SyntheticSpec s;
    s.clouds_per_family = per_family;
    s.points = points;
    s.task = task;
    s.seed = seed;
    return gen_synthetic(s);
}

IbtConfig config_for(const Dataset& ds) {
    auto c = test::tiny_config(ds.task);
    c.num_classes = ds.class_names.size();
    c.num_categories = ds.class_names.size();
    c.num_parts = ds.task == Task::segmentation ? ds.num_parts() : c.num_parts;
    return c;
}

// Loss whose gradient with respect to `x` is exactly `g`.
void set_gradient(Tensor& x, const std::vector<double>& g) {
    x.zero_grad();
    sum(mul(x, Tensor::from(x.shape(), g))).backward();
}

}  // namespace

TEST(Trainer, CrossEntropyOfUniformLogitsIsLogC) {
    const auto loss = cross_entropy(Tensor::zeros({3, 7}), {0, 3, 6});
    EXPECT_NEAR(loss.item(), std::log(7.0), 1e-15);
    EXPECT_THROW(cross_entropy(Tensor::zeros({2, 3}), {0, 3}), DataError);
    EXPECT_THROW(cross_entropy(Tensor::zeros({2, 3}), {0}), DimensionError);
}

TEST(Trainer, SgdWithoutMomentumIsPlainGradientDescent) {
    std::vector<Parameter> params = {{"x", Tensor::from({2}, {1.0, -2.0}, true)}};
    SgdState sgd(params, 0.5, 0.0);
    set_gradient(params[0].tensor, {0.25, 4.0});
    sgd.step(params);
    EXPECT_EQ(params[0].tensor.data()[0], 1.0 - 0.5 * 0.25);
    EXPECT_EQ(params[0].tensor.data()[1], -2.0 - 0.5 * 4.0);
}

TEST(Trainer, TwoMomentumStepsMoveByLrGTimesTwoPlusMu) {
    const double lr = 0.1, mu = 0.9, g = 0.75;
    std::vector<Parameter> params = {{"x", Tensor::from({1}, {3.0}, true)}};
    SgdState sgd(params, lr, mu);
    for (int i = 0; i < 2; ++i) {
        set_gradient(params[0].tensor, {g});
        sgd_step(params, sgd);
    }
    EXPECT_NEAR(3.0 - params[0].tensor.data()[0], lr * g * (1.0 + (1.0 + mu)), 1e-15);
    EXPECT_EQ(SgdState(params).lr(), 0.1);
    EXPECT_EQ(SgdState(params).momentum(), 0.9);
}

TEST(Trainer, SgdNeedsGradients) {
    std::vector<Parameter> params = {{"x", Tensor::from({1}, {3.0}, true)}};
    SgdState sgd(params);
    EXPECT_THROW(sgd.step(params), ContractError);
}

TEST(Trainer, ClassificationMetricsMatchHandCounts) {
    std::vector<std::size_t> truth(10, 0), pred(10, 0);
    truth[9] = 1;
    const auto r = classification_metrics(pred, truth, 2);
    EXPECT_EQ(r.overall_accuracy, 0.9);
    EXPECT_EQ(r.mean_class_accuracy, 0.5);

    // Uniform classes with equal per-class accuracy: mAcc equals OA.
    truth = {0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2};
    pred = {0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 0};
    const auto u = classification_metrics(pred, truth, 3);
    EXPECT_EQ(u.overall_accuracy, 0.75);
    EXPECT_EQ(u.mean_class_accuracy, u.overall_accuracy);

    // Class 3 has no samples and is skipped.
    EXPECT_EQ(classification_metrics({0, 1}, {0, 1}, 4).mean_class_accuracy, 1.0);
    EXPECT_THROW(classification_metrics({}, {}, 2), DomainError);
}

TEST(Trainer, ShapeIouFixture) {
    const PartRange range{0, 2};
    // Point 1 is predicted as part 1: part 0 has I=1, U=2; part 1 has I=2, U=3.
    const double expect = (1.0 / 2.0 + 2.0 / 3.0) / 2.0;
    EXPECT_EQ(shape_iou({0, 1, 1, 1}, {0, 0, 1, 1}, range), expect);
    EXPECT_EQ(shape_iou({0, 0, 1, 1}, {0, 0, 1, 1}, range), 1.0);
    // Part 3 absent from both sides counts as 1.
    EXPECT_EQ(shape_iou({2, 2}, {2, 2}, PartRange{2, 4}), 1.0);

    Dataset ds;
    ds.task = Task::segmentation;
    ds.class_names = {"a", "b"};
    ds.part_ranges = {{0, 2}, {2, 4}};
    PointCloud a;
    a.coords.assign(12, 0.0);
    a.category = 0;
    a.point_labels = {0, 0, 1, 1};
    PointCloud b = a;
    b.category = 1;
    b.point_labels = {2, 2, 3, 3};
    ds.clouds = {a, b};
    const auto m = segmentation_metrics({{0, 1, 1, 1}, {2, 2, 3, 3}}, ds);
    EXPECT_EQ(m.per_class_iou[0], expect);
    EXPECT_EQ(m.per_class_iou[1], 1.0);
    EXPECT_EQ(m.instance_miou, (expect + 1.0) / 2.0);
    EXPECT_EQ(m.category_miou, (expect + 1.0) / 2.0);
    ds.clouds[0].point_labels[3] = 3;  // ground truth outside the category's range
    EXPECT_THROW(segmentation_metrics({{0, 1, 1, 1}, {2, 2, 3, 3}}, ds), DataError);
}

TEST(Trainer, PredictPartsStaysInCategoryRange) {
    const auto ds = small_synthetic(Task::segmentation, 1);
    const auto batch = make_batch(ds, {0, 1}, config_for(ds));
    // Logits favour part 12 everywhere; the argmax must stay inside each cloud's range.
    auto logits = Tensor::zeros({2 * 16, 13});
    for (std::size_t r = 0; r < 32; ++r) logits.mutable_data()[r * 13 + 12] = 5.0;
    const auto parts = predict_parts(logits, batch, ds);
    for (auto p : parts[0]) EXPECT_EQ(p, 0u);
    for (auto p : parts[1]) EXPECT_EQ(p, 2u);
}

TEST(Trainer, ZeroEpochsLeavesModelUnchanged) {
    const auto ds = small_synthetic(Task::classification, 2);
    IbtModel model(config_for(ds), 3);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.registry().state()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    TrainOptions opt;
    opt.epochs = 0;
    const auto r = train(model, ds, opt);
    EXPECT_TRUE(r.report.loss_history.empty());
    EXPECT_EQ(r.epochs_run, 0u);
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_EQ(before[i], std::vector<double>(model.registry().state()[i].tensor.data().begin(),
                                                 model.registry().state()[i].tensor.data().end()));
}

TEST(Trainer, TrainingIsBitwiseDeterministic) {
    for (auto task : {Task::classification, Task::segmentation}) {
        const auto ds = small_synthetic(task, 4);
        TrainOptions opt;
        opt.epochs = 2;
        opt.batch_size = 3;
        opt.seed = 9;
        opt.lr = 0.01;
        IbtModel a(config_for(ds), 5), b(config_for(ds), 5);
        const auto ra = train(a, ds, opt), rb = train(b, ds, opt);
        ASSERT_EQ(ra.report.loss_history.size(), rb.report.loss_history.size());
        // 8 clouds in batches of 3, 3, 2 per epoch.
        EXPECT_EQ(ra.report.loss_history.size(), 6u);
        for (std::size_t i = 0; i < ra.report.loss_history.size(); ++i)
            EXPECT_EQ(ra.report.loss_history[i].loss, rb.report.loss_history[i].loss);
        const auto ea = evaluate(a, ds), ea2 = evaluate(a, ds);
        EXPECT_EQ(ea.overall_accuracy, ea2.overall_accuracy);
        EXPECT_EQ(ea.instance_miou, ea2.instance_miou);
    }
}

TEST(Trainer, TrailingSingletonBatchIsMerged) {
    const auto ds = small_synthetic(Task::classification, 5);  // 8 clouds
    IbtModel model(config_for(ds), 1);
    TrainOptions opt;
    opt.epochs = 1;
    opt.batch_size = 7;
    opt.lr = 0.001;
    EXPECT_EQ(train(model, ds, opt).report.loss_history.size(), 1u);
}

TEST(Trainer, NonFiniteLossNamesEpochAndBatch) {
    const auto ds = small_synthetic(Task::classification, 6);
    IbtModel model(config_for(ds), 2);
    for (auto& p : model.parameters())
        if (p.name == "classifier.bias") p.tensor.mutable_data()[0] = std::nan("");
    TrainOptions opt;
    opt.epochs = 1;
    try {
        train(model, ds, opt);
        FAIL();
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 0, batch 0"), std::string::npos);
    }
}

TEST(Trainer, TaskMismatchIsRejected) {
    const auto ds = small_synthetic(Task::segmentation, 7);
    IbtModel model(test::tiny_config(Task::classification), 1);
    EXPECT_THROW(train(model, ds, TrainOptions{}), ConfigError);
}

TEST(Trainer, LossDecreasesOnAFixedBatchAtSmallLearningRate) {
    std::size_t passed = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto ds = small_synthetic(Task::classification, 100 + seed, 2, 32);
        auto cfg = config_for(ds);
        cfg.dropout = 0.0;  // keep the objective a fixed function of the parameters
        IbtModel model(cfg, seed);
        auto params = model.parameters();
        SgdState sgd(params, 1e-3, 0.9);
        const auto batch = make_batch(ds, {0, 1, 2, 3, 4, 5, 6, 7}, cfg);
        double prev = INFINITY;
        bool ok = true;
        for (int step = 0; step < 6; ++step) {
            for (auto& p : params) p.tensor.zero_grad();
            const auto loss = cross_entropy(forward_batch(model, batch, true), batch.targets);
            ok = ok && loss.item() < prev;
            prev = loss.item();
            loss.backward();
            sgd.step(params);
        }
        passed += ok;
    }
    EXPECT_GE(passed, 9u);
}
