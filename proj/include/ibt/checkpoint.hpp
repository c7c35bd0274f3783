#pragma once

#include "ibt/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ibt {

// On-disk layout:
//   8 bytes   magic "IBTCKPT1"
//   u64 LE    manifest length in bytes
//   manifest  UTF-8, one line per tensor: "<name>\tf64\t<d0>,<d1>,...\n"
//   payload   little-endian IEEE-754 doubles, tensors in manifest order

inline constexpr char kCheckpointMagic[] = "IBTCKPT1";

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& state);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `state`. Names and shapes must match exactly;
/// the error message names the first differing entry.
void load_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& state);

}  // namespace ibt
