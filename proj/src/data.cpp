#include "ibt/data.hpp"

#include "ibt/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

namespace ibt {

std::size_t Dataset::num_parts() const { return part_ranges.empty() ? 0 : part_ranges.back().end; }

void Dataset::validate() const {
    for (const auto& c : clouds) {
        validate_cloud(c);
        if (!c.category || *c.category >= class_names.size()) {
            throw DataError("cloud '" + c.name + "' has a category outside the " + std::to_string(class_names.size()) +
                            " declared classes");
        }
        if (task == Task::segmentation) {
            if (!c.has_labels()) throw DataError("segmentation cloud '" + c.name + "' has no point labels");
            if (*c.category >= part_ranges.size()) throw DataError("no part range for category of '" + c.name + "'");
            const auto& range = part_ranges[*c.category];
            for (auto l : c.point_labels) {
                if (!range.contains(l)) {
                    throw DataError("cloud '" + c.name + "' label " + std::to_string(l) + " outside its category range");
                }
            }
        }
    }
}

std::string to_string(ShapeFamily family) {
    switch (family) {
        case ShapeFamily::sphere: return "sphere";
        case ShapeFamily::cube: return "cube";
        case ShapeFamily::cylinder: return "cylinder";
        case ShapeFamily::torus: return "torus";
    }
    return "?";
}

ShapeFamily parse_family(const std::string& name) {
    if (name == "sphere") return ShapeFamily::sphere;
    if (name == "cube") return ShapeFamily::cube;
    if (name == "cylinder") return ShapeFamily::cylinder;
    if (name == "torus") return ShapeFamily::torus;
    throw ConfigError("unknown shape family '" + name + "'");
}

std::size_t family_part_count(ShapeFamily family) {
    switch (family) {
        case ShapeFamily::sphere: return 2;
        case ShapeFamily::cube: return 6;
        case ShapeFamily::cylinder: return 3;
        case ShapeFamily::torus: return 2;
    }
    return 0;
}

namespace {

struct SurfacePoint {
    std::array<double, 3> p;
    std::size_t part;  // local part index within the family
};

class ShapeSampler {
public:
    ShapeSampler(ShapeFamily family, double jitter, std::mt19937_64& rng) : family_(family), rng_(rng) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        auto jit = [&](double base) { return base * (1.0 + jitter * u(rng_)); };
        switch (family_) {
            case ShapeFamily::sphere: a_ = jit(1.0); break;
            case ShapeFamily::cube: a_ = jit(0.8); break;
            case ShapeFamily::cylinder:
                a_ = jit(0.5);  // radius
                b_ = jit(2.0);  // height
                break;
            case ShapeFamily::torus:
                a_ = jit(1.0);  // tube centre radius
                b_ = jit(0.3);  // tube radius
                break;
        }
    }

    SurfacePoint sample() {
        switch (family_) {
            case ShapeFamily::sphere: return sphere();
            case ShapeFamily::cube: return cube();
            case ShapeFamily::cylinder: return cylinder();
            case ShapeFamily::torus: return torus();
        }
        return {};
    }

private:
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

    SurfacePoint sphere() {
        std::normal_distribution<double> n(0.0, 1.0);
        std::array<double, 3> v{};
        double len = 0.0;
        while (len < 1e-12) {
            v = {n(rng_), n(rng_), n(rng_)};
            len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        }
        for (auto& c : v) c = c / len * a_;
        return {v, v[2] >= 0.0 ? 0u : 1u};
    }

    SurfacePoint cube() {
        const double h = a_ / 2.0;
        const auto face = std::uniform_int_distribution<std::size_t>(0, 5)(rng_);
        const std::size_t axis = face / 2;
        std::array<double, 3> v{uniform(-h, h), uniform(-h, h), uniform(-h, h)};
        v[axis] = face % 2 == 0 ? h : -h;
        return {v, face};
    }

    SurfacePoint cylinder() {
        const double r = a_, h = b_;
        const double side = 2.0 * std::numbers::pi * r * h;
        const double cap = std::numbers::pi * r * r;
        const double pick = uniform(0.0, side + 2.0 * cap);
        if (pick < side) {
            const double t = uniform(0.0, 2.0 * std::numbers::pi);
            return {{r * std::cos(t), r * std::sin(t), uniform(-h / 2.0, h / 2.0)}, 0};
        }
        const double t = uniform(0.0, 2.0 * std::numbers::pi);
        const double rho = r * std::sqrt(uniform(0.0, 1.0));
        const bool top = pick < side + cap;
        return {{rho * std::cos(t), rho * std::sin(t), top ? h / 2.0 : -h / 2.0}, top ? 1u : 2u};
    }

    SurfacePoint torus() {
        const double big = a_, small = b_;
        for (;;) {
            const double theta = uniform(0.0, 2.0 * std::numbers::pi);
            const double phi = uniform(0.0, 2.0 * std::numbers::pi);
            // Accept proportionally to the local area element.
            if (uniform(0.0, big + small) > big + small * std::cos(phi)) continue;
            const double ring = big + small * std::cos(phi);
            return {{ring * std::cos(theta), ring * std::sin(theta), small * std::sin(phi)},
                    std::cos(phi) >= 0.0 ? 0u : 1u};
        }
    }

    ShapeFamily family_;
    std::mt19937_64& rng_;
    double a_ = 1.0;
    double b_ = 1.0;
};

void fnv_mix(std::uint64_t& h, const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

std::string trim_comment(const std::string& line) {
    const auto hash = line.find('#');
    return hash == std::string::npos ? line : line.substr(0, hash);
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

double parse_double(const std::string& token, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
        if (!std::isfinite(v)) throw ParseError("non-finite value '" + token + "'", line_no);
        return v;
    } catch (const std::invalid_argument&) {
        throw ParseError("expected a number, got '" + token + "'", line_no);
    } catch (const std::out_of_range&) {
        throw ParseError("number out of range '" + token + "'", line_no);
    }
}

std::size_t parse_count(const std::string& token, std::size_t line_no) {
    if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos) {
        throw ParseError("expected a non-negative integer, got '" + token + "'", line_no);
    }
    return std::stoull(token);
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
    if (spec.families.empty()) throw ConfigError("synthetic dataset needs at least one shape family");
    if (spec.noise < 0.0) throw ConfigError("synthetic noise must be non-negative");
    if (spec.points == 0) throw ConfigError("synthetic clouds need at least one point");
    Dataset ds;
    ds.task = spec.task;
    ds.split = spec.split;
    std::size_t next_part = 0;
    for (auto f : spec.families) {
        ds.class_names.push_back(to_string(f));
        ds.part_ranges.push_back({next_part, next_part + family_part_count(f)});
        next_part += family_part_count(f);
    }
    if (spec.task == Task::classification) ds.part_ranges.clear();

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);
    for (std::size_t i = 0; i < spec.clouds_per_family; ++i) {
        for (std::size_t c = 0; c < spec.families.size(); ++c) {
            ShapeSampler sampler(spec.families[c], spec.jitter, rng);
            const double angle = spec.rotate ? std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng) : 0.0;
            const double ca = std::cos(angle), sa = std::sin(angle);
            PointCloud cloud;
            cloud.category = c;
            cloud.name = ds.class_names[c] + "_" + std::to_string(i);
            cloud.coords.reserve(3 * spec.points);
            for (std::size_t p = 0; p < spec.points; ++p) {
                auto s = sampler.sample();
                double x = s.p[0], y = s.p[1];
                if (spec.rotate) {
                    x = ca * s.p[0] - sa * s.p[1];
                    y = sa * s.p[0] + ca * s.p[1];
                }
                double z = s.p[2];
                if (spec.rotate && spec.families[c] == ShapeFamily::cube && s.part < 4) {
                    // Side faces are named by their outward normal after rotation;
                    // object-frame names would be ambiguous under the cube's symmetry.
                    const double nx0 = s.part == 0 ? 1.0 : s.part == 1 ? -1.0 : 0.0;
                    const double ny0 = s.part == 2 ? 1.0 : s.part == 3 ? -1.0 : 0.0;
                    const double nx = ca * nx0 - sa * ny0, ny = sa * nx0 + ca * ny0;
                    s.part = std::fabs(nx) >= std::fabs(ny) ? (nx > 0.0 ? 0u : 1u) : (ny > 0.0 ? 2u : 3u);
                }
                if (spec.noise > 0.0) {
                    x += noise(rng);
                    y += noise(rng);
                    z += noise(rng);
                }
                cloud.coords.insert(cloud.coords.end(), {x, y, z});
                if (spec.task == Task::segmentation) cloud.point_labels.push_back(ds.part_ranges[c].begin + s.part);
            }
            ds.clouds.push_back(spec.normalize ? normalize_cloud(cloud) : std::move(cloud));
        }
    }
    ds.validate();
    return ds;
}

std::uint64_t dataset_hash(const Dataset& dataset) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& c : dataset.clouds) {
        fnv_mix(h, c.coords.data(), c.coords.size() * sizeof(double));
        for (auto l : c.point_labels) {
            const std::uint64_t v = l;
            fnv_mix(h, &v, sizeof(v));
        }
        const std::uint64_t cat = c.category.value_or(~0ULL);
        fnv_mix(h, &cat, sizeof(cat));
    }
    return h;
}

PointCloud normalize_cloud(const PointCloud& cloud) {
    validate_cloud(cloud);
    PointCloud out = cloud;
    const std::size_t n = cloud.size();
    std::array<double, 3> centroid{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) centroid[c] += cloud.coords[3 * i + c];
    for (auto& v : centroid) v /= static_cast<double>(n);
    double radius = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = cloud.coords[3 * i + c] - centroid[c];
            out.coords[3 * i + c] = d;
            sq += d * d;
        }
        radius = std::max(radius, std::sqrt(sq));
    }
    if (radius > 0.0)
        for (auto& v : out.coords) v /= radius;
    return out;
}

PointCloud load_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    PointCloud cloud;
    cloud.name = path.stem().string();
    std::string line;
    std::size_t line_no = 0;
    int labelled = -1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto content = trim_comment(line);
        if (blank(content)) continue;
        const auto tokens = split_ws(content);
        if (tokens.size() != 3 && tokens.size() != 4) {
            throw ParseError("expected 'x y z [label]', got " + std::to_string(tokens.size()) + " fields", line_no);
        }
        const int has_label = tokens.size() == 4 ? 1 : 0;
        if (labelled == -1) labelled = has_label;
        if (labelled != has_label) throw ParseError("labels must be present on every line or on none", line_no);
        for (std::size_t c = 0; c < 3; ++c) cloud.coords.push_back(parse_double(tokens[c], line_no));
        if (has_label) cloud.point_labels.push_back(parse_count(tokens[3], line_no));
    }
    if (cloud.size() == 0) throw ParseError("no points", line_no);
    return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    char buf[128];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", cloud.coords[3 * i], cloud.coords[3 * i + 1],
                      cloud.coords[3 * i + 2]);
        out << buf;
        if (cloud.has_labels()) out << ' ' << cloud.point_labels[i];
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path.string());
}

PointCloud load_off(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> pending;  // tokens left on the header line ("OFF3 0 0" variants)

    auto next_tokens = [&]() -> std::vector<std::string> {
        while (std::getline(in, line)) {
            ++line_no;
            const auto content = trim_comment(line);
            if (!blank(content)) return split_ws(content);
        }
        throw ParseError("unexpected end of file", line_no);
    };

    auto header = next_tokens();
    if (header.front().rfind("OFF", 0) != 0) throw ParseError("missing OFF header", line_no);
    std::vector<std::string> counts;
    if (header.front() != "OFF") {
        // Header fused with the counts, e.g. "OFF1000 500 0".
        counts.push_back(header.front().substr(3));
        counts.insert(counts.end(), header.begin() + 1, header.end());
    } else {
        counts.assign(header.begin() + 1, header.end());
    }
    if (counts.empty()) counts = next_tokens();
    if (counts.size() < 2) throw ParseError("expected 'vertices faces [edges]'", line_no);
    const std::size_t nv = parse_count(counts[0], line_no);
    parse_count(counts[1], line_no);
    if (nv == 0) throw ParseError("OFF file declares no vertices", line_no);

    PointCloud cloud;
    cloud.name = path.stem().string();
    cloud.coords.reserve(3 * nv);
    for (std::size_t v = 0; v < nv; ++v) {
        const auto tokens = next_tokens();
        if (tokens.size() < 3) throw ParseError("vertex needs three coordinates", line_no);
        for (std::size_t c = 0; c < 3; ++c) cloud.coords.push_back(parse_double(tokens[c], line_no));
    }
    return cloud;
}

PointCloud load_cloud(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".off" || ext == ".OFF") return load_off(path);
    return load_xyz(path);
}

const std::array<std::array<unsigned char, 3>, 50>& label_palette() {
    static const auto palette = [] {
        std::array<std::array<unsigned char, 3>, 50> p{};
        // Golden-ratio hue walk over two saturation/value bands.
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double hue = std::fmod(static_cast<double>(i) * 0.618033988749895, 1.0) * 6.0;
            const double sat = i % 2 == 0 ? 0.85 : 0.55;
            const double val = (i / 2) % 2 == 0 ? 0.95 : 0.75;
            const double chroma = val * sat;
            const double x = chroma * (1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0));
            const double m = val - chroma;
            double r = 0, g = 0, b = 0;
            switch (static_cast<int>(hue)) {
                case 0: r = chroma, g = x; break;
                case 1: r = x, g = chroma; break;
                case 2: g = chroma, b = x; break;
                case 3: g = x, b = chroma; break;
                case 4: r = x, b = chroma; break;
                default: r = chroma, b = x; break;
            }
            p[i] = {static_cast<unsigned char>(std::lround((r + m) * 255.0)),
                    static_cast<unsigned char>(std::lround((g + m) * 255.0)),
                    static_cast<unsigned char>(std::lround((b + m) * 255.0))};
        }
        return p;
    }();
    return palette;
}

void write_colored_ply(const PointCloud& cloud, const std::vector<std::size_t>& labels,
                       const std::filesystem::path& path) {
    if (labels.size() != cloud.size()) {
        throw DataError("write_colored_ply: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(cloud.size()) + " points");
    }
    const auto& palette = label_palette();
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    char buf[160];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& color = palette[labels[i] % palette.size()];
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %u %u %u\n", cloud.coords[3 * i], cloud.coords[3 * i + 1],
                      cloud.coords[3 * i + 2], color[0], color[1], color[2]);
        out << buf;
    }
    if (!out) throw DataError("write failed: " + path.string());
}

PointCloud read_colored_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::map<std::array<unsigned char, 3>, std::size_t> inverse;
    const auto& palette = label_palette();
    for (std::size_t i = 0; i < palette.size(); ++i) inverse.emplace(palette[i], i);

    std::string line;
    std::size_t line_no = 0;
    std::size_t vertices = 0;
    bool seen_magic = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tokens = split_ws(line);
        if (tokens.empty()) continue;
        if (!seen_magic) {
            if (tokens[0] != "ply") throw ParseError("missing 'ply' magic", line_no);
            seen_magic = true;
        } else if (tokens[0] == "element" && tokens.size() == 3 && tokens[1] == "vertex") {
            vertices = parse_count(tokens[2], line_no);
        } else if (tokens[0] == "end_header") {
            break;
        }
    }
    if (!seen_magic) throw ParseError("empty file", line_no);
    PointCloud cloud;
    cloud.name = path.stem().string();
    for (std::size_t v = 0; v < vertices; ++v) {
        if (!std::getline(in, line)) throw ParseError("fewer vertices than declared", line_no);
        ++line_no;
        const auto tokens = split_ws(line);
        if (tokens.size() != 6) throw ParseError("expected 'x y z r g b'", line_no);
        for (std::size_t c = 0; c < 3; ++c) cloud.coords.push_back(parse_double(tokens[c], line_no));
        std::array<unsigned char, 3> rgb{};
        for (std::size_t c = 0; c < 3; ++c) {
            const auto value = parse_count(tokens[3 + c], line_no);
            if (value > 255) throw ParseError("colour component above 255", line_no);
            rgb[c] = static_cast<unsigned char>(value);
        }
        const auto it = inverse.find(rgb);
        if (it == inverse.end()) throw ParseError("colour is not in the label palette", line_no);
        cloud.point_labels.push_back(it->second);
    }
    return cloud;
}

Dataset load_file_list(const std::filesystem::path& list, Task task, const std::vector<PartRange>& part_ranges) {
    std::ifstream in(list);
    if (!in) throw DataError("cannot open " + list.string());
    Dataset ds;
    ds.task = task;
    ds.part_ranges = part_ranges;
    std::size_t max_class = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto content = trim_comment(line);
        if (blank(content)) continue;
        const auto tokens = split_ws(content);
        if (tokens.size() != 2) throw ParseError("expected 'path class'", line_no);
        std::filesystem::path file = tokens[0];
        if (file.is_relative()) file = list.parent_path() / file;
        PointCloud cloud = load_cloud(file);
        cloud.category = parse_count(tokens[1], line_no);
        max_class = std::max(max_class, *cloud.category);
        ds.clouds.push_back(std::move(cloud));
    }
    if (ds.clouds.empty()) throw DataError("file list " + list.string() + " names no clouds");
    for (std::size_t c = 0; c <= max_class; ++c) ds.class_names.push_back("class" + std::to_string(c));
    if (task == Task::segmentation && ds.part_ranges.size() < ds.class_names.size()) {
        throw DataError("file list uses categories without declared part ranges");
    }
    while (task == Task::segmentation && ds.class_names.size() < ds.part_ranges.size()) {
        ds.class_names.push_back("class" + std::to_string(ds.class_names.size()));
    }
    ds.validate();
    return ds;
}

}  // namespace ibt
