#include "ibt/config.hpp"

#include "ibt/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace ibt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_size(key, item));
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

struct Field {
    std::string key;
    bool model;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_FIELD(KEY, MODEL, MEMBER)                                                     \
    Field {                                                                                \
        KEY, MODEL, [](const RunConfig& c) { return std::to_string(c.MEMBER); },           \
            [](RunConfig& c, const std::string& v) { c.MEMBER = to_size(KEY, v); }         \
    }
#define DOUBLE_FIELD(KEY, MODEL, MEMBER)                                                   \
    Field {                                                                                \
        KEY, MODEL, [](const RunConfig& c) { return fmt_double(c.MEMBER); },               \
            [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }       \
    }
#define BOOL_FIELD(KEY, MODEL, MEMBER)                                                     \
    Field {                                                                                \
        KEY, MODEL, [](const RunConfig& c) { return fmt_bool(c.MEMBER); },                 \
            [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }         \
    }
#define STRING_FIELD(KEY, MEMBER)                                                          \
    Field {                                                                                \
        KEY, false, [](const RunConfig& c) { return c.MEMBER; },                           \
            [](RunConfig& c, const std::string& v) { c.MEMBER = v; }                       \
    }
#define SIZES_FIELD(KEY, MODEL, MEMBER)                                                    \
    Field {                                                                                \
        KEY, MODEL, [](const RunConfig& c) { return fmt_sizes(c.MEMBER); },                \
            [](RunConfig& c, const std::string& v) { c.MEMBER = to_sizes(KEY, v); }        \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        {"task", true, [](const RunConfig& c) { return to_string(c.model.task); },
         [](RunConfig& c, const std::string& v) {
             try {
                 c.model.task = parse_task(v);
             } catch (const std::exception&) {
                 throw ConfigError("task: expected classification or segmentation, got '" + v + "'");
             }
         }},
        {"seed", false, [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
        STRING_FIELD("output_dir", output_dir),

        STRING_FIELD("data.source", data.source),
        {"data.families", false,
         [](const RunConfig& c) {
             std::string out;
             for (std::size_t i = 0; i < c.data.families.size(); ++i) out += (i ? "," : "") + to_string(c.data.families[i]);
             return out;
         },
         [](RunConfig& c, const std::string& v) {
             c.data.families.clear();
             for (const auto& name : split_list(v)) c.data.families.push_back(parse_family(name));
         }},
        SIZE_FIELD("data.train_per_family", false, data.train_per_family),
        SIZE_FIELD("data.test_per_family", false, data.test_per_family),
        SIZE_FIELD("data.points", false, data.points),
        DOUBLE_FIELD("data.noise", false, data.noise),
        DOUBLE_FIELD("data.jitter", false, data.jitter),
        BOOL_FIELD("data.rotate", false, data.rotate),
        BOOL_FIELD("data.normalize", false, data.normalize),
        STRING_FIELD("data.train_list", data.train_list),
        STRING_FIELD("data.test_list", data.test_list),
        SIZES_FIELD("data.part_counts", false, data.part_counts),

        SIZE_FIELD("model.embed_dim", true, model.embed_dim),
        SIZE_FIELD("model.embed_hidden", true, model.embed_hidden),
        SIZE_FIELD("model.num_layers", true, model.num_layers),
        SIZE_FIELD("model.k", true, model.k),
        SIZE_FIELD("model.num_classes", true, model.num_classes),
        SIZE_FIELD("model.num_parts", true, model.num_parts),
        SIZE_FIELD("model.num_categories", true, model.num_categories),
        SIZE_FIELD("model.category_embed_dim", true, model.category_embed_dim),
        SIZE_FIELD("model.global_dim", true, model.global_dim),
        SIZES_FIELD("model.cls_head", true, model.cls_head),
        SIZES_FIELD("model.seg_head", true, model.seg_head),
        SIZE_FIELD("model.seg_dropout_stages", true, model.seg_dropout_stages),
        DOUBLE_FIELD("model.dropout", true, model.dropout),
        BOOL_FIELD("model.seg_include_embedding", true, model.seg_include_embedding),
        {"model.locality_stream", true,
         [](const RunConfig& c) {
             return std::string(c.model.stream == LocalityStream::gate_only ? "gate_only" : "feed_forward");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "gate_only") {
                 c.model.stream = LocalityStream::gate_only;
             } else if (v == "feed_forward") {
                 c.model.stream = LocalityStream::feed_forward;
             } else {
                 throw ConfigError("model.locality_stream: expected gate_only or feed_forward, got '" + v + "'");
             }
         }},
        BOOL_FIELD("model.use_position_encoding", true, model.switches.use_position_encoding),
        BOOL_FIELD("model.use_max_pool", true, model.switches.use_max_pool),
        BOOL_FIELD("model.use_attention_pool", true, model.switches.use_attention_pool),
        BOOL_FIELD("model.use_channel_gate", true, model.switches.use_channel_gate),
        BOOL_FIELD("model.use_position_embedding", true, model.switches.use_position_embedding),
        BOOL_FIELD("model.use_pooling_module", true, model.switches.use_pooling_module),
        BOOL_FIELD("model.use_transformer", true, model.switches.use_transformer),

        SIZE_FIELD("train.epochs", false, train.epochs),
        SIZE_FIELD("train.batch_size", false, train.batch_size),
        DOUBLE_FIELD("train.lr", false, train.lr),
        DOUBLE_FIELD("train.momentum", false, train.momentum),
        {"train.schedule", false,
         [](const RunConfig& c) {
             return std::string(c.train.schedule == LrSchedule::constant ? "constant" : "cosine");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "constant") {
                 c.train.schedule = LrSchedule::constant;
             } else if (v == "cosine") {
                 c.train.schedule = LrSchedule::cosine;
             } else {
                 throw ConfigError("train.schedule: expected constant or cosine, got '" + v + "'");
             }
         }},
        DOUBLE_FIELD("train.target_train_metric", false, train.target_train_metric),

        SIZE_FIELD("ablate.repeats", false, ablate.repeats),
        SIZE_FIELD("ablate.jobs", false, ablate.jobs),
    };
    return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD
#undef SIZES_FIELD

const Field& field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const auto keys = [] {
        std::vector<std::string> out;
        for (const auto& f : fields()) out.push_back(f.key);
        return out;
    }();
    return keys;
}

const std::vector<std::string>& model_config_keys() {
    static const auto keys = [] {
        std::vector<std::string> out;
        for (const auto& f : fields())
            if (f.model) out.push_back(f.key);
        return out;
    }();
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    field(key).set(config, trim(value));
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
        }
        try {
            set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), std::move(base));
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string serialize_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

void validate_config(const RunConfig& config) {
    const auto& d = config.data;
    if (d.source != "synthetic" && d.source != "list") {
        throw ConfigError("data.source: expected synthetic or list, got '" + d.source + "'");
    }
    if (d.source == "synthetic") {
        if (d.families.empty()) throw ConfigError("data.families: at least one shape family is required");
        if (d.noise < 0.0) throw ConfigError("data.noise must be non-negative");
    } else if (d.train_list.empty()) {
        throw ConfigError("data.train_list is required when data.source = list");
    }
    if (d.points == 0) throw ConfigError("data.points must be positive");
    if (config.model.k > d.points) {
        throw ConfigError("model.k=" + std::to_string(config.model.k) + " exceeds data.points=" + std::to_string(d.points));
    }
    if (config.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(config.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
    if (config.train.momentum < 0.0 || config.train.momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (config.model.dropout < 0.0 || config.model.dropout >= 1.0) throw ConfigError("model.dropout must lie in [0, 1)");
    if (config.ablate.repeats == 0) throw ConfigError("ablate.repeats must be positive");
    if (config.ablate.jobs == 0) throw ConfigError("ablate.jobs must be positive");
    config.model.validate();
}

Dataset build_dataset(const RunConfig& config, const std::string& split) {
    const auto& d = config.data;
    const Task task = config.model.task;
    if (d.source == "synthetic") {
        SyntheticSpec spec;
        spec.families = d.families;
        spec.clouds_per_family = split == "train" ? d.train_per_family : d.test_per_family;
        spec.points = d.points;
        spec.noise = d.noise;
        spec.jitter = d.jitter;
        spec.rotate = d.rotate;
        spec.normalize = d.normalize;
        spec.task = task;
        // Distinct streams per split so test clouds are never copies of training ones.
        spec.seed = config.seed * 2 + (split == "train" ? 0 : 1);
        spec.split = split;
        return gen_synthetic(spec);
    }
    std::vector<PartRange> ranges;
    std::size_t next = 0;
    for (auto count : d.part_counts) {
        ranges.push_back({next, next + count});
        next += count;
    }
    const std::string& list = split == "train" ? d.train_list : d.test_list;
    if (list.empty()) throw ConfigError("no file list configured for the " + split + " split");
    Dataset ds = load_file_list(list, task, ranges);
    ds.split = split;
    for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
        auto& cloud = ds.clouds[i];
        if (cloud.size() != d.points) cloud = sample_points(cloud, d.points, config.seed + i);
        if (d.normalize) cloud = normalize_cloud(cloud);
    }
    return ds;
}

void sync_model_dims(RunConfig& config, const Dataset& dataset) {
    if (config.model.task == Task::classification) {
        config.model.num_classes = std::max(config.data.source == "list" ? config.model.num_classes : 0,
                                            dataset.class_names.size());
    } else {
        config.model.num_parts = dataset.num_parts();
        config.model.num_categories = dataset.part_ranges.size();
    }
}

std::string first_model_difference(const RunConfig& a, const RunConfig& b) {
    for (const auto& key : model_config_keys()) {
        if (get_config_value(a, key) != get_config_value(b, key)) return key;
    }
    return "";
}

}  // namespace ibt
