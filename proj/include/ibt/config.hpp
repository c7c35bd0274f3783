#pragma once

#include "ibt/data.hpp"
#include "ibt/model.hpp"
#include "ibt/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ibt {

struct DataConfig {
    std::string source = "synthetic";  // synthetic | list
    std::vector<ShapeFamily> families = {ShapeFamily::sphere, ShapeFamily::cube, ShapeFamily::cylinder,
                                         ShapeFamily::torus};
    std::size_t train_per_family = 8;
    std::size_t test_per_family = 4;
    std::size_t points = 128;
    double noise = 0.0;
    double jitter = 0.15;
    bool rotate = true;
    bool normalize = true;
    std::string train_list;
    std::string test_list;
    std::vector<std::size_t> part_counts;  // per category, list segmentation only
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 16;
    double lr = 0.1;
    double momentum = 0.9;
    LrSchedule schedule = LrSchedule::constant;
    double target_train_metric = 0.0;
};

struct AblateConfig {
    std::size_t repeats = 1;
    std::size_t jobs = 1;
};

struct RunConfig {
    DataConfig data;
    IbtConfig model;
    TrainConfig train;
    AblateConfig ablate;
    std::uint64_t seed = 0;
    std::string output_dir = "runs";
};

/// Every accepted key, in serialisation order.
const std::vector<std::string>& config_keys();
/// Keys whose values change the network's parameter layout or forward pass.
const std::vector<std::string>& model_config_keys();

/// Throws ConfigError naming the key for unknown keys or malformed values.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// "key = value" lines; '#' starts a comment. Later lines override earlier ones.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string serialize_config(const RunConfig& config);

/// Checks ranges and cross-field consistency.
void validate_config(const RunConfig& config);

/// Generated or loaded split, resampled to `points` and normalised as configured.
Dataset build_dataset(const RunConfig& config, const std::string& split);

/// Copies class, part and category counts from the dataset into the model config.
void sync_model_dims(RunConfig& config, const Dataset& dataset);

/// Name of the first model-affecting key whose values differ, or empty.
std::string first_model_difference(const RunConfig& a, const RunConfig& b);

}  // namespace ibt
