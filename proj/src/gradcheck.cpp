#include "ibt/gradcheck.hpp"

#include "ibt/errors.hpp"
#include "ibt/layers.hpp"
#include "ibt/model.hpp"
#include "ibt/ops.hpp"
#include "ibt/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace ibt {

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& fn, const std::vector<Parameter>& params,
                                  const GradCheckOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckReport report;
    report.tol = options.tol;

    auto params_copy = params;
    for (auto& p : params_copy) {
        if (!p.tensor.requires_grad()) throw ContractError("gradcheck parameter '" + p.name + "' does not require grad");
        p.tensor.zero_grad();
    }
    const Tensor loss = fn();
    {
        NoGradGuard guard;
        const double again = fn().item();
        if (again != loss.item()) {
            throw ContractError("gradcheck function is not deterministic: " + std::to_string(loss.item()) + " vs " +
                                std::to_string(again));
        }
    }
    loss.backward();

    std::size_t total = 0;
    for (const auto& p : params_copy) total += p.tensor.numel();
    const bool subsample = total > options.subsample_threshold;
    std::mt19937_64 rng(options.seed);

    NoGradGuard guard;
    for (auto& p : params_copy) {
        ParameterCheck entry;
        entry.name = p.name;
        entry.size = p.tensor.numel();
        const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        std::vector<std::size_t> coords(entry.size);
        std::iota(coords.begin(), coords.end(), 0);
        if (subsample && coords.size() > options.subsample) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.subsample);
            std::sort(coords.begin(), coords.end());
        }
        auto theta = p.tensor.mutable_data();
        const auto central = [&](std::size_t k, double h) {
            const double original = theta[k];
            theta[k] = original + h;
            const double up = fn().item();
            theta[k] = original - h;
            const double down = fn().item();
            theta[k] = original;
            return (up - down) / (2.0 * h);
        };
        for (auto k : coords) {
            const double base_h = 1e-5 * std::max(1.0, std::fabs(theta[k]));
            double abs_err = 0.0, rel_err = 0.0, scale = 0.0;
            bool ok = false;
            // A ReLU or max kink inside [theta - h, theta + h] spoils the
            // difference quotient; smaller steps step off it, a wrong rule does not.
            for (double h = base_h; !ok && h >= base_h * 1e-2; h *= 0.1) {
                const double numeric = central(k, h);
                abs_err = std::fabs(numeric - analytic[k]);
                scale = std::max(std::fabs(numeric), std::fabs(analytic[k]));
                rel_err = scale > 0.0 ? abs_err / scale : 0.0;
                ok = rel_err <= options.tol || abs_err <= options.abs_tol;
                if (!ok) ++entry.refined;
            }
            entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
            // Below abs_tol / tol the absolute fallback can accept any relative
            // error, so only larger gradients enter the reported maximum.
            if (scale * options.tol >= options.abs_tol) entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
            if (!ok) entry.pass = false;
        }
        entry.checked = coords.size();
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = u(rng);
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Scalar probe sum(out * R) with a fixed random R, so every output element
// contributes a distinct weight.
struct Probe {
    Tensor weights;
    Tensor operator()(const Tensor& out) const { return sum(mul(out, weights)); }
};

Probe make_probe(const Shape& shape, Rng& rng) { return {random_tensor(shape, rng, -1.0, 1.0, false)}; }

std::vector<Parameter> named(std::initializer_list<std::pair<const char*, Tensor>> items) {
    std::vector<Parameter> out;
    for (const auto& [n, t] : items) out.push_back({n, t});
    return out;
}

GradCheckReport labelled(std::string label, GradCheckReport r) {
    r.label = std::move(label);
    return r;
}

using Unary = std::function<Tensor(const Tensor&)>;
using Binary = std::function<Tensor(const Tensor&, const Tensor&)>;

GradCheckCase unary_case(std::string name, Shape in, Unary op, double lo = -1.0, double hi = 1.0) {
    return {name, [=](const GradCheckOptions& o) {
                Rng rng(o.seed + 17);
                Tensor x = random_tensor(in, rng, lo, hi);
                const Probe probe = make_probe(op(x.detach()).shape(), rng);
                return labelled(name, finite_diff_check([&] { return probe(op(x)); }, named({{"x", x}}), o));
            }};
}

GradCheckCase binary_case(std::string name, Shape a_shape, Shape b_shape, Binary op) {
    return {name, [=](const GradCheckOptions& o) {
                Rng rng(o.seed + 29);
                Tensor a = random_tensor(a_shape, rng);
                Tensor b = random_tensor(b_shape, rng);
                const Probe probe = make_probe(op(a.detach(), b.detach()).shape(), rng);
                return labelled(name,
                                finite_diff_check([&] { return probe(op(a, b)); }, named({{"a", a}, {"b", b}}), o));
            }};
}

std::vector<double> random_coords(std::size_t count, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> xyz(count * 3);
    for (auto& v : xyz) v = u(rng);
    return xyz;
}

std::vector<Parameter> with_input(const ParameterRegistry& registry, const Tensor& input) {
    auto params = registry.parameters();
    params.push_back({"input", input});
    return params;
}

// Fresh running statistics (mean 0, variance 1) map an all-zero row, such as
// the self-loop edge input, exactly onto a ReLU kink. Seeded statistics move
// eval-mode normalisation off that point without touching the parameters.
void randomize_running_stats(const ParameterRegistry& registry, Rng& rng) {
    std::uniform_real_distribution<double> shift(-0.2, 0.2), var(0.5, 1.5);
    for (const auto& entry : registry.state()) {
        auto t = entry.tensor;
        const auto ends_with = [&](const std::string& suffix) {
            return entry.name.size() >= suffix.size() &&
                   entry.name.compare(entry.name.size() - suffix.size(), suffix.size(), suffix) == 0;
        };
        if (ends_with(".running_mean"))
            for (auto& v : t.mutable_data()) v = shift(rng);
        if (ends_with(".running_var"))
            for (auto& v : t.mutable_data()) v = var(rng);
    }
}

LayerConfig small_layer(const AblationSwitches& switches = {}, LocalityStream stream = LocalityStream::gate_only) {
    LayerConfig c;
    c.dim = 8;
    c.edge_dim = 8;
    c.delta_hidden = 8;
    c.switches = switches;
    c.stream = stream;
    return c;
}

GradCheckCase layer_case(std::string name, AblationSwitches switches,
                         LocalityStream stream = LocalityStream::gate_only) {
    return {name, [=](const GradCheckOptions& o) {
                Rng rng(o.seed + 41);
                const auto cfg = small_layer(switches, stream);
                IbtLayer layer(cfg, rng);
                ParameterRegistry reg;
                layer.register_into(reg, "layer");
                randomize_running_stats(reg, rng);
                const auto inputs = make_layer_inputs(random_coords(2 * 10, rng), 2, 4);
                Tensor f = random_tensor({20, cfg.dim}, rng);
                const Probe probe = make_probe({20, cfg.dim}, rng);
                return labelled(name, finite_diff_check([&] { return probe(layer.forward(f, inputs, false)); },
                                                        with_input(reg, f), o));
            }};
}

IbtConfig tiny_model(Task task) {
    IbtConfig c;
    c.task = task;
    c.embed_dim = 8;
    c.embed_hidden = 8;
    c.k = 4;
    c.num_classes = 3;
    c.num_parts = 5;
    c.num_categories = 2;
    c.category_embed_dim = 4;
    c.global_dim = 16;
    c.cls_head = {16, 8};
    c.seg_head = {16, 8};
    return c;
}

}  // namespace

std::vector<GradCheckCase> op_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back(binary_case("matmul", {3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
    cases.push_back(binary_case("matmul.batched", {2, 3, 4}, {2, 4, 5}, [](auto& a, auto& b) { return matmul(a, b); }));
    cases.push_back(binary_case("matmul.broadcast", {2, 3, 4}, {4, 2}, [](auto& a, auto& b) { return matmul(a, b); }));
    cases.push_back(unary_case("transpose_last", {2, 3, 4}, [](auto& x) { return transpose_last(x); }));
    cases.push_back(binary_case("add.broadcast", {3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); }));
    cases.push_back(binary_case("sub.broadcast", {3, 1}, {2, 3, 4}, [](auto& a, auto& b) { return sub(a, b); }));
    cases.push_back(binary_case("mul.broadcast", {2, 1, 4}, {3, 1}, [](auto& a, auto& b) { return mul(a, b); }));
    cases.push_back(unary_case("scale", {3, 4}, [](auto& x) { return scale(x, -2.5); }));
    cases.push_back(unary_case("relu", {4, 5}, [](auto& x) { return relu(x); }));
    cases.push_back(unary_case("sigmoid", {4, 5}, [](auto& x) { return sigmoid(x); }, -3.0, 3.0));
    cases.push_back(unary_case("softmax.last", {3, 5}, [](auto& x) { return softmax(x, 1); }, -2.0, 2.0));
    cases.push_back(unary_case("softmax.middle", {2, 4, 3}, [](auto& x) { return softmax(x, 1); }, -2.0, 2.0));
    cases.push_back(unary_case("log_softmax", {3, 5}, [](auto& x) { return log_softmax(x, 1); }, -2.0, 2.0));
    cases.push_back(binary_case("concat", {2, 3}, {2, 4}, [](auto& a, auto& b) { return concat({a, b}, 1); }));
    cases.push_back(unary_case("reshape", {2, 6}, [](auto& x) { return reshape(x, {3, 4}); }));
    cases.push_back(unary_case("broadcast_to", {3, 1}, [](auto& x) { return broadcast_to(x, {2, 3, 4}); }));
    cases.push_back(unary_case("reduce_max", {3, 5, 2}, [](auto& x) { return reduce_max(x, 1).values; }));
    cases.push_back(unary_case("reduce_sum", {3, 5, 2}, [](auto& x) { return reduce_sum(x, 1); }));
    cases.push_back(unary_case("reduce_mean", {3, 5, 2}, [](auto& x) { return reduce_mean(x, 2); }));
    cases.push_back(unary_case("mean", {3, 4}, [](auto& x) { return scale(mean(x), 3.0); }));
    cases.push_back(unary_case("gather_rows", {5, 3}, [](auto& x) {
        return gather_rows(x, IndexTable{3, 4, {0, 1, 1, 4, 2, 2, 2, 3, 4, 0, 3, 3}});
    }));
    cases.push_back({"batch_norm.train", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 53);
                         auto state = NormState::create(4);
                         state.gamma = random_tensor({4}, rng, 0.5, 1.5);
                         state.beta = random_tensor({4}, rng);
                         Tensor x = random_tensor({6, 4}, rng, -2.0, 2.0);
                         const Probe probe = make_probe({6, 4}, rng);
                         return labelled("batch_norm.train",
                                         finite_diff_check([&] { return probe(batch_norm(x, state, true)); },
                                                           named({{"x", x}, {"gamma", state.gamma}, {"beta", state.beta}}),
                                                           o));
                     }});
    cases.push_back({"batch_norm.eval", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 59);
                         auto state = NormState::create(3);
                         state.running_mean = random_tensor({3}, rng, -0.5, 0.5, false);
                         state.running_var = random_tensor({3}, rng, 0.5, 2.0, false);
                         state.gamma.set_requires_grad(true);
                         state.beta.set_requires_grad(true);
                         Tensor x = random_tensor({2, 4, 3}, rng);
                         const Probe probe = make_probe({2, 4, 3}, rng);
                         return labelled("batch_norm.eval",
                                         finite_diff_check([&] { return probe(batch_norm(x, state, false)); },
                                                           named({{"x", x}, {"gamma", state.gamma}, {"beta", state.beta}}),
                                                           o));
                     }});
    cases.push_back(unary_case("dropout", {4, 6}, [](auto& x) {
        Rng mask(7);  // same mask on every evaluation
        return dropout(x, 0.5, mask, true);
    }));
    cases.push_back({"cross_entropy", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 61);
                         Tensor logits = random_tensor({5, 4}, rng, -2.0, 2.0);
                         const std::vector<std::size_t> targets{0, 3, 1, 1, 2};
                         return labelled("cross_entropy",
                                         finite_diff_check([&] { return cross_entropy(logits, targets); },
                                                           named({{"logits", logits}}), o));
                     }});
    return cases;
}

std::vector<GradCheckCase> layer_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"shared_mlp", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 71);
                         SharedMlp mlp(5, {{6, true, true}, {4, false, false}}, rng);
                         ParameterRegistry reg;
                         mlp.register_into(reg, "mlp");
                         randomize_running_stats(reg, rng);
                         Tensor x = random_tensor({7, 5}, rng);
                         const Probe probe = make_probe({7, 4}, rng);
                         return labelled("shared_mlp", finite_diff_check([&] { return probe(mlp.forward(x, false)); },
                                                                         with_input(reg, x), o));
                     }});
    cases.push_back({"rpe", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 73);
                         RelativePositionEncoding rpe(6, 5, true, rng);
                         ParameterRegistry reg;
                         rpe.register_into(reg, "rpe");
                         randomize_running_stats(reg, rng);
                         const auto inputs = make_layer_inputs(random_coords(9, rng), 1, 4);
                         Tensor f = random_tensor({9, 6}, rng);
                         const Probe probe = make_probe({9, 4, 5}, rng);
                         return labelled("rpe", finite_diff_check([&] { return probe(rpe.forward(f, inputs, false)); },
                                                                  with_input(reg, f), o));
                     }});
    cases.push_back({"attentive_pooling", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 79);
                         AttentiveFeaturePooling afp(5, 6, true, true, rng);
                         ParameterRegistry reg;
                         afp.register_into(reg, "afp");
                         randomize_running_stats(reg, rng);
                         Tensor edges = random_tensor({7, 4, 5}, rng);
                         const Probe probe = make_probe({7, 6}, rng);
                         return labelled("attentive_pooling",
                                         finite_diff_check([&] { return probe(afp.forward(edges, false)); },
                                                           with_input(reg, edges), o));
                     }});
    cases.push_back({"transformer", [](const GradCheckOptions& o) {
                         Rng rng(o.seed + 83);
                         const auto cfg = small_layer();
                         LocalityAwareTransformer lat(cfg, rng);
                         ParameterRegistry reg;
                         lat.register_into(reg, "lat");
                         randomize_running_stats(reg, rng);
                         const auto coords = Tensor::from({12, 3}, random_coords(12, rng));
                         Tensor f = random_tensor({12, cfg.dim}, rng);
                         Tensor local = random_tensor({12, cfg.dim}, rng);
                         const Probe probe = make_probe({12, cfg.dim}, rng);
                         auto params = with_input(reg, f);
                         params.push_back({"local", local});
                         return labelled("transformer",
                                         finite_diff_check([&] { return probe(lat.forward(f, coords, local, 2, false)); },
                                                           params, o));
                     }});
    cases.push_back(layer_case("layer.full", {}));
    cases.push_back(layer_case("layer.feed_forward", {}, LocalityStream::feed_forward));
    AblationSwitches no_transformer;
    no_transformer.use_transformer = false;
    cases.push_back(layer_case("layer.no_transformer", no_transformer));
    AblationSwitches no_position;
    no_position.use_position_encoding = false;
    no_position.use_position_embedding = false;
    cases.push_back(layer_case("layer.no_position", no_position));
    return cases;
}

std::vector<GradCheckCase> model_cases() {
    std::vector<GradCheckCase> cases;
    cases.push_back({"model.classification", [](const GradCheckOptions& o) {
                         IbtModel model(tiny_model(Task::classification), o.seed + 101);
                         Rng rng(o.seed + 103);
                         randomize_running_stats(model.registry(), rng);
                         const Tensor coords = Tensor::from({2, 12, 3}, random_coords(24, rng));
                         const std::vector<std::size_t> targets{0, 2};
                         return labelled("model.classification",
                                         finite_diff_check(
                                             [&] { return cross_entropy(model.classify(coords, false), targets); },
                                             model.parameters(), o));
                     }});
    cases.push_back({"model.segmentation", [](const GradCheckOptions& o) {
                         IbtModel model(tiny_model(Task::segmentation), o.seed + 107);
                         Rng rng(o.seed + 109);
                         randomize_running_stats(model.registry(), rng);
                         const Tensor coords = Tensor::from({2, 12, 3}, random_coords(24, rng));
                         const Tensor onehot = Tensor::from({2, 2}, {1, 0, 0, 1});
                         std::vector<std::size_t> targets(24);
                         for (auto& t : targets) t = std::uniform_int_distribution<std::size_t>(0, 4)(rng);
                         return labelled("model.segmentation", finite_diff_check(
                                                                   [&] {
                                                                       const auto l = model.segment(coords, onehot, false);
                                                                       return cross_entropy(reshape(l, {24, 5}), targets);
                                                                   },
                                                                   model.parameters(), o));
                     }});
    return cases;
}

Tensor faulty_mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimensionError("faulty_mul expects equal shapes");
    std::vector<double> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& node) {
        const auto& pa = *node.parents[0];
        const auto& pb = *node.parents[1];
        if (pa.requires_grad) {
            auto& g = node.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = node.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i] * pa.data[i];  // wrong sign
        }
    });
}

GradCheckCase faulty_case() {
    return binary_case("faulty_mul", {3, 4}, {3, 4}, [](auto& a, auto& b) { return faulty_mul(a, b); });
}

std::string format_table(const std::vector<GradCheckReport>& reports) {
    std::size_t width = 9;
    for (const auto& r : reports)
        for (const auto& e : r.entries) width = std::max(width, r.label.size() + 1 + e.name.size());
    std::string out;
    char line[512];
    std::snprintf(line, sizeof(line), "%-*s %9s %9s %12s %12s  %s\n", static_cast<int>(width), "parameter", "size",
                  "checked", "max_rel", "max_abs", "result");
    out += line;
    out += std::string(width + 56, '-') + "\n";
    for (const auto& r : reports) {
        for (const auto& e : r.entries) {
            const std::string name = r.label + "/" + e.name;
            std::snprintf(line, sizeof(line), "%-*s %9zu %9zu %12.3e %12.3e  %s\n", static_cast<int>(width),
                          name.c_str(), e.size, e.checked, e.max_rel_error, e.max_abs_error, e.pass ? "ok" : "FAIL");
            out += line;
        }
    }
    return out;
}

std::string to_json(const std::vector<GradCheckReport>& reports) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& r : reports) {
        nlohmann::ordered_json entries = nlohmann::ordered_json::array();
        for (const auto& e : r.entries) {
            entries.push_back({{"name", e.name},
                               {"size", e.size},
                               {"checked", e.checked},
                               {"max_rel_error", e.max_rel_error},
                               {"max_abs_error", e.max_abs_error},
                               {"refined", e.refined},
                               {"pass", e.pass}});
        }
        doc.push_back({{"case", r.label},
                       {"pass", r.pass},
                       {"tol", r.tol},
                       {"elapsed_seconds", r.elapsed_seconds},
                       {"parameters", entries}});
    }
    return doc.dump(2);
}

}  // namespace ibt
