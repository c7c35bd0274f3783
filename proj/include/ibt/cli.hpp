#pragma once

#include "ibt/config.hpp"
#include "ibt/gradcheck.hpp"
#include "ibt/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ibt {

enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitConfig = 2,
    kExitData = 3,
    kExitNumeric = 4,
    kExitGradcheck = 5,
};

/// Fresh "<output_dir>/<UTC timestamp>-<command>" directory; a numeric suffix
/// keeps it unique when two runs start within the same millisecond.
std::filesystem::path make_run_dir(const std::string& output_dir, const std::string& command);

/// Part ranges implied by the data section (synthetic families or part_counts).
std::vector<PartRange> configured_part_ranges(const RunConfig& config);

struct TrainRun {
    std::filesystem::path run_dir;
    TrainResult result;
    std::optional<MetricsReport> test;
};

/// Trains and writes config.cfg, final.ckpt, best.ckpt, metrics.json and loss.csv.
TrainRun run_train(RunConfig config, std::ostream& log);

/// Restores the model saved next to `checkpoint`. When `requested` is given its
/// model section must agree with the saved one; the error names the first
/// differing key. Evaluates on the test split of the resolved config.
MetricsReport run_eval(const std::filesystem::path& checkpoint, const std::optional<RunConfig>& requested,
                       std::ostream& out);

struct AblationCell {
    std::string group;    // "module", "k", "pooling", "transformer"
    std::string name;     // row label
    RunConfig config;
    std::vector<double> metric;  // primary test metric per repetition
    std::vector<double> mean_class_accuracy;
    std::string error;           // non-empty when the cell failed
};

struct TrendCheck {
    std::string ablation;
    std::size_t wins = 0;  // repetitions where full >= ablation
    std::size_t repeats = 0;
    double rate() const { return repeats ? static_cast<double>(wins) / static_cast<double>(repeats) : 0.0; }
};

struct AblationRun {
    std::filesystem::path run_dir;
    std::vector<AblationCell> cells;
    std::vector<TrendCheck> trend;
    std::string table;  // markdown
};

/// Module rows A-D, the k sweep and single-branch removals, each trained
/// `ablate.repeats` times; writes table.md and ablation.json.
AblationRun run_ablate(const RunConfig& config, std::ostream& log);

/// Grid cells for `base` before training.
std::vector<AblationCell> ablation_grid(const RunConfig& base);

/// Seed for one cell of one repetition (FNV-1a of the name mixed into the base seed).
std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& cell_name);

std::vector<GradCheckReport> run_gradcheck(const std::string& scope, bool inject_fault,
                                           const GradCheckOptions& options);

/// Segments `cloud_path` with the checkpoint and writes a coloured PLY.
/// Returns the predicted part ids.
std::vector<std::size_t> run_export(const std::filesystem::path& checkpoint, const std::filesystem::path& cloud_path,
                                    const std::filesystem::path& out_ply, std::size_t category);

/// Full command-line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ibt
