#pragma once

#include "ibt/geometry.hpp"
#include "ibt/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ibt {

/// Half-open range of global part ids owned by one shape category.
struct PartRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool contains(std::size_t label) const { return label >= begin && label < end; }
};

struct Dataset {
    std::vector<PointCloud> clouds;
    std::vector<std::string> class_names;
    std::string split = "train";
    Task task = Task::classification;
    std::vector<PartRange> part_ranges;  // per category; segmentation only

    std::size_t size() const { return clouds.size(); }
    std::size_t num_parts() const;
    /// Throws DataError when a cloud's category or labels fall outside the declared ranges.
    void validate() const;
};

enum class ShapeFamily { sphere, cube, cylinder, torus };

std::string to_string(ShapeFamily family);
ShapeFamily parse_family(const std::string& name);
/// Number of analytic part regions of each family (sphere 2, cube 6, cylinder 3, torus 2).
std::size_t family_part_count(ShapeFamily family);

struct SyntheticSpec {
    std::vector<ShapeFamily> families = {ShapeFamily::sphere, ShapeFamily::cube, ShapeFamily::cylinder,
                                         ShapeFamily::torus};
    std::size_t clouds_per_family = 8;
    std::size_t points = 128;
    double noise = 0.0;   // Gaussian sigma added after sampling the surface
    double jitter = 0.15; // relative spread of per-shape size parameters
    bool rotate = true;   // random rotation about the z axis
    bool normalize = true;
    Task task = Task::classification;
    std::uint64_t seed = 0;
    std::string split = "train";
};

/// Surface samples of simple solids. Category = index into `families`; for
/// segmentation, part ids are allocated contiguously per category.
Dataset gen_synthetic(const SyntheticSpec& spec);

/// FNV-1a over coordinates, labels and categories.
std::uint64_t dataset_hash(const Dataset& dataset);

/// Centroid to the origin, farthest point to radius 1 (no scaling for a single location).
PointCloud normalize_cloud(const PointCloud& cloud);

// "x y z [label]" per line.
PointCloud load_xyz(const std::filesystem::path& path);
void write_xyz(const PointCloud& cloud, const std::filesystem::path& path);

/// Vertices of an ASCII OFF mesh; faces are skipped.
PointCloud load_off(const std::filesystem::path& path);

/// Loads .xyz or .off by extension.
PointCloud load_cloud(const std::filesystem::path& path);

/// Fixed 50-entry label palette.
const std::array<std::array<unsigned char, 3>, 50>& label_palette();

/// ASCII PLY with per-vertex colours taken from label_palette().
void write_colored_ply(const PointCloud& cloud, const std::vector<std::size_t>& labels,
                       const std::filesystem::path& path);

/// Parses a PLY written by write_colored_ply; labels are recovered by palette lookup.
PointCloud read_colored_ply(const std::filesystem::path& path);

/// List file: one "path class" entry per line; relative paths resolve
/// against the list's directory. Segmentation files carry per-point labels.
Dataset load_file_list(const std::filesystem::path& list, Task task, const std::vector<PartRange>& part_ranges);

}  // namespace ibt
