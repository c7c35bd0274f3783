#include "ibt/cli.hpp"

#include "ibt/checkpoint.hpp"
#include "ibt/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

namespace ibt {

using Json = nlohmann::ordered_json;

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed: " + path.string());
}

Json metrics_json(const MetricsReport& r, Task task, const std::vector<std::string>& class_names) {
    Json j;
    if (task == Task::classification) {
        j["overall_accuracy"] = r.overall_accuracy;
        j["mean_class_accuracy"] = r.mean_class_accuracy;
    } else {
        j["instance_miou"] = r.instance_miou;
        j["category_miou"] = r.category_miou;
        Json per = Json::object();
        for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
            if (r.per_class_count[c] == 0) continue;
            per[c < class_names.size() ? class_names[c] : std::to_string(c)] = r.per_class_iou[c];
        }
        j["per_class_iou"] = per;
    }
    return j;
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

std::string metrics_table(const MetricsReport& r, Task task, const std::vector<std::string>& class_names) {
    std::string out;
    if (task == Task::classification) {
        out += "| Method | mAcc | OA |\n|---|---|---|\n";
        out += "| IBT | " + percent(r.mean_class_accuracy) + " | " + percent(r.overall_accuracy) + " |\n";
        return out;
    }
    std::string header = "| Method | cat. mIoU | ins. mIoU |";
    std::string rule = "|---|---|---|";
    std::string row = "| IBT | " + percent(r.category_miou) + " | " + percent(r.instance_miou) + " |";
    for (std::size_t c = 0; c < r.per_class_iou.size(); ++c) {
        if (r.per_class_count[c] == 0) continue;
        header += " " + (c < class_names.size() ? class_names[c] : std::to_string(c)) + " |";
        rule += "---|";
        row += " " + percent(r.per_class_iou[c]) + " |";
    }
    return header + "\n" + rule + "\n" + row + "\n";
}

RunConfig load_run_config(const std::filesystem::path& checkpoint) {
    if (!std::filesystem::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
    const auto path = checkpoint.parent_path() / "config.cfg";
    if (!std::filesystem::exists(path)) throw ConfigError("no config.cfg next to checkpoint " + checkpoint.string());
    return load_config(path);
}

// Restores a model from its run directory.
IbtModel restore_model(const std::filesystem::path& checkpoint, const RunConfig& config) {
    IbtModel model(config.model, config.seed);
    load_checkpoint(checkpoint, model.registry().state());
    return model;
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::filesystem::path make_run_dir(const std::string& output_dir, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char stamp[64];
    std::snprintf(stamp, sizeof(stamp), "%04d%02d%02d-%02d%02d%02d-%03lld", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms));
    std::filesystem::create_directories(output_dir);
    const std::string base = std::string(stamp) + "-" + command;
    for (int suffix = 0;; ++suffix) {
        auto dir = std::filesystem::path(output_dir) / (suffix ? base + "-" + std::to_string(suffix) : base);
        if (std::filesystem::create_directory(dir)) return dir;
    }
}

std::vector<PartRange> configured_part_ranges(const RunConfig& config) {
    std::vector<PartRange> ranges;
    std::size_t next = 0;
    if (config.data.source == "synthetic") {
        for (auto f : config.data.families) {
            ranges.push_back({next, next + family_part_count(f)});
            next += family_part_count(f);
        }
    } else {
        for (auto c : config.data.part_counts) {
            ranges.push_back({next, next + c});
            next += c;
        }
    }
    return ranges;
}

TrainRun run_train(RunConfig config, std::ostream& log) {
    validate_config(config);
    const Dataset train_set = build_dataset(config, "train");
    std::optional<Dataset> test_set;
    if (config.data.source == "synthetic" ? config.data.test_per_family > 0 : !config.data.test_list.empty()) {
        test_set = build_dataset(config, "test");
    }
    sync_model_dims(config, train_set);
    validate_config(config);

    TrainRun run;
    run.run_dir = make_run_dir(config.output_dir, "train");
    write_text(run.run_dir / "config.cfg", serialize_config(config));

    IbtModel model(config.model, config.seed);
    log << "run dir " << run.run_dir.string() << "\n"
        << "model parameters " << model.parameter_count() << ", train clouds " << train_set.size() << "\n";

    TrainOptions opts;
    opts.epochs = config.train.epochs;
    opts.batch_size = config.train.batch_size;
    opts.seed = config.seed;
    opts.lr = config.train.lr;
    opts.momentum = config.train.momentum;
    opts.schedule = config.train.schedule;
    opts.target_train_metric = config.train.target_train_metric;
    opts.monitor = test_set ? &*test_set : nullptr;
    opts.checkpoint_dir = run.run_dir;
    opts.on_epoch = [&](std::size_t epoch, double loss, double metric) {
        char line[128];
        std::snprintf(line, sizeof(line), "epoch %zu loss %.6f %s %.4f\n", epoch + 1, loss,
                      test_set ? "test" : "train", metric);
        log << line << std::flush;
    };
    run.result = train(model, train_set, opts);
    if (test_set) run.test = evaluate(model, *test_set, config.train.batch_size);

    std::string csv = "epoch,step,loss\n";
    char line[96];
    for (const auto& rec : run.result.report.loss_history) {
        std::snprintf(line, sizeof(line), "%zu,%zu,%.17g\n", rec.epoch, rec.step, rec.loss);
        csv += line;
    }
    write_text(run.run_dir / "loss.csv", csv);

    const Task task = config.model.task;
    Json metrics;
    metrics["task"] = to_string(task);
    metrics["seed"] = config.seed;
    metrics["parameter_count"] = model.parameter_count();
    metrics["train_dataset_hash"] = hex(dataset_hash(train_set));
    if (test_set) metrics["test_dataset_hash"] = hex(dataset_hash(*test_set));
    metrics["epochs_run"] = run.result.epochs_run;
    metrics["best_epoch"] = run.result.best_epoch + 1;
    metrics["best_metric"] = run.result.best_metric;
    metrics["final_loss"] = run.result.report.loss_history.empty() ? 0.0 : run.result.report.loss_history.back().loss;
    metrics["train"] = metrics_json(run.result.report, task, train_set.class_names);
    if (run.test) metrics["test"] = metrics_json(*run.test, task, test_set->class_names);
    write_text(run.run_dir / "metrics.json", metrics.dump(2) + "\n");

    log << metrics_table(run.test ? *run.test : run.result.report, task, train_set.class_names);
    return run;
}

MetricsReport run_eval(const std::filesystem::path& checkpoint, const std::optional<RunConfig>& requested,
                       std::ostream& out) {
    const RunConfig saved = load_run_config(checkpoint);
    RunConfig config = saved;
    if (requested) {
        config = *requested;
        validate_config(config);
    }
    const Dataset test_set = build_dataset(config, "test");
    if (requested) {
        sync_model_dims(config, test_set);
        const auto key = first_model_difference(saved, config);
        if (!key.empty()) {
            throw ConfigError("checkpoint/config mismatch in '" + key + "': checkpoint has " +
                              get_config_value(saved, key) + ", config has " + get_config_value(config, key));
        }
    }
    IbtModel model = restore_model(checkpoint, saved);
    const auto report = evaluate(model, test_set, config.train.batch_size);
    out << metrics_table(report, config.model.task, test_set.class_names);
    return report;
}

std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& cell_name) {
    std::uint64_t h = fnv1a(cell_name);
    h ^= base_seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

std::vector<AblationCell> ablation_grid(const RunConfig& base) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string group, std::string name, auto&& edit) {
        AblationCell cell;
        cell.group = std::move(group);
        cell.name = std::move(name);
        cell.config = base;
        cell.config.model.switches = AblationSwitches{};
        edit(cell.config);
        cells.push_back(std::move(cell));
    };
    add("module", "A", [](RunConfig& c) { c.model.switches.use_transformer = false; });
    add("module", "B", [](RunConfig& c) { c.model.switches.use_position_encoding = false; });
    add("module", "C", [](RunConfig& c) {
        c.model.switches.use_position_encoding = false;
        c.model.switches.use_pooling_module = false;
    });
    add("module", "D", [](RunConfig&) {});
    for (std::size_t k : {10, 20, 40, 60}) {
        add("k", "k=" + std::to_string(k), [k](RunConfig& c) { c.model.k = k; });
    }
    add("pooling", "w/o maxpooling", [](RunConfig& c) { c.model.switches.use_max_pool = false; });
    add("pooling", "w/o attention pooling", [](RunConfig& c) { c.model.switches.use_attention_pool = false; });
    add("transformer", "w/o weight W", [](RunConfig& c) { c.model.switches.use_channel_gate = false; });
    add("transformer", "w/o position embedding", [](RunConfig& c) { c.model.switches.use_position_embedding = false; });
    return cells;
}

namespace {

std::string cell_value(const AblationCell& cell, bool mean_class) {
    if (!cell.error.empty()) return "failed";
    const auto& v = mean_class ? cell.mean_class_accuracy : cell.metric;
    double s = 0.0;
    for (auto x : v) s += x;
    return percent(s / static_cast<double>(v.size()));
}

std::string ablation_table(const std::vector<AblationCell>& cells, const std::vector<TrendCheck>& trend, Task task) {
    const bool cls = task == Task::classification;
    const std::string first = cls ? "mAcc" : "cat. mIoU";
    const std::string second = cls ? "OA" : "ins. mIoU";
    std::string out = "## Ablation of modules\n\n| Model | Position | Pooling | Transformer | " + first + " | " + second +
                      " |\n|---|---|---|---|---|---|\n";
    for (const auto& c : cells) {
        if (c.group != "module") continue;
        const auto& s = c.config.model.switches;
        const auto mark = [](bool on) { return std::string(on ? "✓" : " "); };
        out += "| " + c.name + " | " + mark(s.use_position_encoding && s.use_pooling_module) + " | " +
               mark(s.use_pooling_module) + " | " + mark(s.use_transformer) + " | " + cell_value(c, true) + " | " +
               cell_value(c, false) + " |\n";
    }
    out += "\n## Ablation of options within modules\n\n| Module | Variant | " + first + " | " + second +
           " |\n|---|---|---|---|\n";
    const std::map<std::string, std::string> module_names = {{"k", "Relative Position Encoding"},
                                                             {"pooling", "Feature Pooling"},
                                                             {"transformer", "Locality Aware Transformer"}};
    for (const std::string group : {"k", "pooling", "transformer"}) {
        for (const auto& c : cells) {
            if (c.group != group) continue;
            out += "| " + module_names.at(group) + " | " + c.name + " | " + cell_value(c, true) + " | " +
                   cell_value(c, false) + " |\n";
        }
    }
    out += "\n## Full model versus single-branch removals\n\n| Removed | full >= removed | repetitions | rate |\n"
           "|---|---|---|---|\n";
    for (const auto& t : trend) {
        char rate[32];
        std::snprintf(rate, sizeof(rate), "%.2f", t.rate());
        out += "| " + t.ablation + " | " + std::to_string(t.wins) + " | " + std::to_string(t.repeats) + " | " + rate +
               " |\n";
    }
    for (const auto& c : cells) {
        if (!c.error.empty()) out += "\nCell '" + c.name + "' failed: " + c.error + "\n";
    }
    return out;
}

}  // namespace

AblationRun run_ablate(const RunConfig& config, std::ostream& log) {
    validate_config(config);
    AblationRun run;
    run.run_dir = make_run_dir(config.output_dir, "ablate");
    write_text(run.run_dir / "config.cfg", serialize_config(config));
    run.cells = ablation_grid(config);
    const std::size_t repeats = config.ablate.repeats;

    // Repetition r uses data seeded with seed + r, shared by every cell.
    std::vector<Dataset> train_sets, test_sets;
    for (std::size_t r = 0; r < repeats; ++r) {
        RunConfig rc = config;
        rc.seed = config.seed + r;
        train_sets.push_back(build_dataset(rc, "train"));
        test_sets.push_back(build_dataset(rc, "test"));
    }
    for (auto& cell : run.cells) {
        cell.metric.assign(repeats, 0.0);
        cell.mean_class_accuracy.assign(repeats, 0.0);
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    const std::size_t tasks = run.cells.size() * repeats;
    auto worker = [&] {
        for (std::size_t t = next++; t < tasks; t = next++) {
            auto& cell = run.cells[t / repeats];
            const std::size_t r = t % repeats;
            try {
                RunConfig c = cell.config;
                sync_model_dims(c, train_sets[r]);
                validate_config(c);
                const std::uint64_t seed = cell_seed(config.seed + r, cell.name);
                IbtModel model(c.model, seed);
                TrainOptions opts;
                opts.epochs = c.train.epochs;
                opts.batch_size = c.train.batch_size;
                opts.seed = seed;
                opts.lr = c.train.lr;
                opts.momentum = c.train.momentum;
                opts.schedule = c.train.schedule;
                opts.target_train_metric = c.train.target_train_metric;
                train(model, train_sets[r], opts);
                const auto report = evaluate(model, test_sets[r], c.train.batch_size);
                std::lock_guard lock(mu);
                cell.metric[r] = primary_metric(report, c.model.task);
                cell.mean_class_accuracy[r] =
                    c.model.task == Task::classification ? report.mean_class_accuracy : report.category_miou;
                char line[160];
                std::snprintf(line, sizeof(line), "cell %-24s rep %zu metric %.4f\n", cell.name.c_str(), r,
                              cell.metric[r]);
                log << line << std::flush;
            } catch (const std::exception& e) {
                std::lock_guard lock(mu);
                if (cell.error.empty()) cell.error = e.what();
                log << "cell " << cell.name << " rep " << r << " failed: " << e.what() << "\n" << std::flush;
            }
        }
    };
    const std::size_t jobs = std::min(config.ablate.jobs, tasks);
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    const auto find = [&](const std::string& name) -> const AblationCell& {
        for (const auto& c : run.cells)
            if (c.name == name) return c;
        throw ContractError("missing ablation cell " + name);
    };
    const auto& full = find("D");
    for (const std::string name : {"w/o maxpooling", "w/o attention pooling", "w/o weight W", "w/o position embedding"}) {
        const auto& cell = find(name);
        TrendCheck t;
        t.ablation = name;
        if (full.error.empty() && cell.error.empty()) {
            t.repeats = repeats;
            for (std::size_t r = 0; r < repeats; ++r) t.wins += full.metric[r] >= cell.metric[r];
        }
        run.trend.push_back(t);
    }

    run.table = ablation_table(run.cells, run.trend, config.model.task);
    write_text(run.run_dir / "table.md", run.table);
    Json doc;
    doc["task"] = to_string(config.model.task);
    doc["repeats"] = repeats;
    Json cells = Json::array();
    for (const auto& c : run.cells) {
        Json j;
        j["group"] = c.group;
        j["name"] = c.name;
        j["metric"] = c.metric;
        j["mean_class_metric"] = c.mean_class_accuracy;
        if (!c.error.empty()) j["error"] = c.error;
        cells.push_back(j);
    }
    doc["cells"] = cells;
    Json trend = Json::array();
    for (const auto& t : run.trend)
        trend.push_back({{"ablation", t.ablation}, {"wins", t.wins}, {"repeats", t.repeats}, {"rate", t.rate()}});
    doc["trend"] = trend;
    write_text(run.run_dir / "ablation.json", doc.dump(2) + "\n");
    log << run.table;
    return run;
}

std::vector<GradCheckReport> run_gradcheck(const std::string& scope, bool inject_fault,
                                           const GradCheckOptions& options) {
    std::vector<GradCheckCase> cases;
    const auto append = [&](std::vector<GradCheckCase> more) {
        for (auto& c : more) cases.push_back(std::move(c));
    };
    if (scope == "op" || scope == "all") append(op_cases());
    if (scope == "layer" || scope == "all") append(layer_cases());
    if (scope == "model" || scope == "all") append(model_cases());
    if (cases.empty()) throw ConfigError("unknown gradcheck scope '" + scope + "' (op, layer, model or all)");
    if (inject_fault) cases.push_back(faulty_case());
    std::vector<GradCheckReport> reports;
    for (const auto& c : cases) reports.push_back(c.run(options));
    return reports;
}

std::vector<std::size_t> run_export(const std::filesystem::path& checkpoint, const std::filesystem::path& cloud_path,
                                    const std::filesystem::path& out_ply, std::size_t category) {
    const RunConfig config = load_run_config(checkpoint);
    if (config.model.task != Task::segmentation) {
        throw ConfigError("export needs a segmentation checkpoint, " + checkpoint.string() + " is " +
                          to_string(config.model.task));
    }
    const auto ranges = configured_part_ranges(config);
    if (category >= ranges.size() || category >= config.model.num_categories) {
        throw ConfigError("category " + std::to_string(category) + " out of range for " +
                          std::to_string(config.model.num_categories) + " categories");
    }
    const PointCloud cloud = load_cloud(cloud_path);
    validate_cloud(cloud);
    const PointCloud input = config.data.normalize ? normalize_cloud(cloud) : cloud;
    if (input.size() < config.model.k) {
        throw DataError("cloud has " + std::to_string(input.size()) + " points, fewer than k=" +
                        std::to_string(config.model.k));
    }
    IbtModel model = restore_model(checkpoint, config);
    NoGradGuard guard;
    std::vector<double> onehot(config.model.num_categories, 0.0);
    onehot[category] = 1.0;
    const Tensor logits = model.segment(Tensor::from({1, input.size(), 3}, input.coords),
                                        Tensor::from({1, config.model.num_categories}, onehot), false);
    const std::size_t parts = logits.dim(2);
    const auto& range = ranges[category];
    const auto x = logits.data();
    std::vector<std::size_t> labels(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double* row = x.data() + i * parts;
        labels[i] = static_cast<std::size_t>(std::max_element(row + range.begin, row + range.end) - row);
    }
    write_colored_ply(cloud, labels, out_ply);
    return labels;
}

namespace {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const DomainError*>(&e)) {
        return kExitConfig;
    }
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const IndexError*>(&e) ||
        dynamic_cast<const std::filesystem::filesystem_error*>(&e)) {
        return kExitData;
    }
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    return kExitFailure;
}

// `--config FILE`, `--set key=value` and one `--<key>` flag per config key.
struct ConfigFlags {
    std::string file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;

    void attach(CLI::App& app) {
        app.add_option("-c,--config", file, "key = value config file");
        app.add_option("--set", sets, "override as key=value (repeatable)");
        for (const auto& key : config_keys()) {
            app.add_option_function<std::string>(
                "--" + key, [this, key](const std::string& v) { flags[key] = v; }, "config key " + key);
        }
    }

    RunConfig resolve() const {
        RunConfig config = file.empty() ? RunConfig{} : load_config(file);
        for (const auto& key : config_keys()) {
            const auto it = flags.find(key);
            if (it != flags.end()) set_config_value(config, key, it->second);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
        }
        return config;
    }

    bool any() const { return !file.empty() || !sets.empty() || !flags.empty(); }
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Inductive Bias-aided Transformer for point clouds"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
    ConfigFlags train_flags;
    train_flags.attach(*train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    ConfigFlags eval_flags;
    eval_flags.attach(*eval_cmd);
    std::string eval_checkpoint, eval_json;
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint inside a run directory")->required();
    eval_cmd->add_option("--json", eval_json, "also write the metrics as JSON here");

    auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid");
    ConfigFlags ablate_flags;
    ablate_flags.attach(*ablate_cmd);

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string scope = "model";
    bool inject_fault = false;
    GradCheckOptions gopts;
    std::string grad_output = "runs";
    grad_cmd->add_option("--scope", scope, "op, layer, model or all")->capture_default_str();
    grad_cmd->add_flag("--inject-fault", inject_fault, "add an op with a deliberately wrong backward rule");
    grad_cmd->add_option("--tol", gopts.tol, "relative tolerance")->capture_default_str();
    grad_cmd->add_option("--seed", gopts.seed, "input and subsampling seed")->capture_default_str();
    grad_cmd->add_option("--output_dir", grad_output, "parent of the run directory")->capture_default_str();

    auto* export_cmd = app.add_subcommand("export", "segment a cloud file and write a coloured PLY");
    std::string exp_checkpoint, exp_cloud, exp_out;
    std::size_t exp_category = 0;
    export_cmd->add_option("--checkpoint", exp_checkpoint, "segmentation checkpoint")->required();
    export_cmd->add_option("--cloud", exp_cloud, ".xyz or .off input")->required();
    export_cmd->add_option("--out", exp_out, "output .ply")->required();
    export_cmd->add_option("--category", exp_category, "shape category index")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (*train_cmd) {
            run_train(train_flags.resolve(), out);
        } else if (*eval_cmd) {
            std::optional<RunConfig> requested;
            if (eval_flags.any()) requested = eval_flags.resolve();
            const auto report = run_eval(eval_checkpoint, requested, out);
            if (!eval_json.empty()) {
                const RunConfig saved = load_run_config(eval_checkpoint);
                const Dataset ds = build_dataset(requested ? *requested : saved, "test");
                write_text(eval_json, metrics_json(report, saved.model.task, ds.class_names).dump(2) + "\n");
            }
        } else if (*ablate_cmd) {
            run_ablate(ablate_flags.resolve(), out);
        } else if (*grad_cmd) {
            const auto reports = run_gradcheck(scope, inject_fault, gopts);
            out << format_table(reports);
            const auto dir = make_run_dir(grad_output, "gradcheck");
            write_text(dir / "report.json", to_json(reports) + "\n");
            bool pass = true;
            for (const auto& r : reports) pass = pass && r.pass;
            out << (pass ? "gradcheck passed" : "gradcheck FAILED") << " (" << reports.size() << " cases), report "
                << (dir / "report.json").string() << "\n";
            return pass ? kExitOk : kExitGradcheck;
        } else if (*export_cmd) {
            const auto labels = run_export(exp_checkpoint, exp_cloud, exp_out, exp_category);
            out << "wrote " << labels.size() << " points to " << exp_out << "\n";
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitOk;
}

}  // namespace ibt
