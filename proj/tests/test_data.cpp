#include "ibt/data.hpp"
#include "ibt/errors.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

using namespace ibt;

namespace {

SyntheticSpec exact_spec(Task task) {
    SyntheticSpec s;
    s.clouds_per_family = 2;
    s.points = 400;
    s.jitter = 0.0;
    s.rotate = false;
    s.normalize = false;
    s.task = task;
    s.seed = 11;
    return s;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

}  // namespace

TEST(Data, FamilyNamesAndPartCounts) {
    for (auto f : {ShapeFamily::sphere, ShapeFamily::cube, ShapeFamily::cylinder, ShapeFamily::torus})
        EXPECT_EQ(parse_family(to_string(f)), f);
    EXPECT_THROW(parse_family("cone"), ConfigError);
    EXPECT_EQ(family_part_count(ShapeFamily::sphere), 2u);
    EXPECT_EQ(family_part_count(ShapeFamily::cube), 6u);
    EXPECT_EQ(family_part_count(ShapeFamily::cylinder), 3u);
    EXPECT_EQ(family_part_count(ShapeFamily::torus), 2u);
}

TEST(Data, SyntheticLayoutAndPartRanges) {
    const auto ds = gen_synthetic(exact_spec(Task::segmentation));
    ASSERT_EQ(ds.size(), 8u);
    EXPECT_EQ(ds.class_names, (std::vector<std::string>{"sphere", "cube", "cylinder", "torus"}));
    ASSERT_EQ(ds.part_ranges.size(), 4u);
    EXPECT_EQ(ds.part_ranges[1].begin, 2u);
    EXPECT_EQ(ds.part_ranges[2].begin, 8u);
    EXPECT_EQ(ds.part_ranges[3].end, 13u);
    EXPECT_EQ(ds.num_parts(), 13u);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(*ds.clouds[i].category, i % 4);
        EXPECT_EQ(ds.clouds[i].size(), 400u);
    }
    EXPECT_TRUE(gen_synthetic(exact_spec(Task::classification)).part_ranges.empty());
}

TEST(Data, SurfacesMatchAnalyticShapes) {
    const auto ds = gen_synthetic(exact_spec(Task::segmentation));
    for (const auto& c : ds.clouds) {
        std::size_t side = 0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto [x, y, z] = c.point(i);
            const auto label = c.point_labels[i];
            switch (*c.category) {
                case 0:
                    EXPECT_NEAR(std::sqrt(x * x + y * y + z * z), 1.0, 1e-12);
                    EXPECT_EQ(label, z >= 0.0 ? 0u : 1u);
                    break;
                case 1: {
                    const double m = std::max({std::fabs(x), std::fabs(y), std::fabs(z)});
                    EXPECT_NEAR(m, 0.4, 1e-12);
                    const double v[3] = {x, y, z};
                    const std::size_t axis = (label - 2) / 2;
                    EXPECT_EQ(v[axis], (label - 2) % 2 == 0 ? 0.4 : -0.4);
                    break;
                }
                case 2: {
                    const double rho = std::hypot(x, y);
                    if (label == 8) {
                        EXPECT_NEAR(rho, 0.5, 1e-12);
                        EXPECT_LE(std::fabs(z), 1.0);
                        ++side;
                    } else {
                        EXPECT_EQ(z, label == 9 ? 1.0 : -1.0);
                        EXPECT_LE(rho, 0.5 + 1e-12);
                    }
                    break;
                }
                case 3: {
                    const double ring = std::hypot(x, y);
                    EXPECT_NEAR((ring - 1.0) * (ring - 1.0) + z * z, 0.09, 1e-12);
                    EXPECT_EQ(label, ring >= 1.0 ? 11u : 12u);
                    break;
                }
            }
        }
        // Side area is 4/5 of the cylinder's total surface.
        if (*c.category == 2) EXPECT_NEAR(static_cast<double>(side) / 400.0, 0.8, 0.08);
    }
}

TEST(Data, RotatedCubeFacesAreNamedByWorldNormal) {
    auto spec = exact_spec(Task::segmentation);
    spec.rotate = true;
    spec.points = 3000;
    spec.families = {ShapeFamily::cube};
    spec.clouds_per_family = 6;
    for (const auto& c : gen_synthetic(spec).clouds) {
        double sx[4] = {}, sy[4] = {};
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto l = c.point_labels[i];
            if (l >= 4) continue;
            sx[l] += c.coords[3 * i];
            sy[l] += c.coords[3 * i + 1];
        }
        // The face centre lies along the outward normal.
        EXPECT_GT(sx[0], std::fabs(sy[0]) * 0.8);
        EXPECT_LT(sx[1], -std::fabs(sy[1]) * 0.8);
        EXPECT_GT(sy[2], std::fabs(sx[2]) * 0.8);
        EXPECT_LT(sy[3], -std::fabs(sx[3]) * 0.8);
    }
}

TEST(Data, GenerationIsSeededAndHashed) {
    auto spec = exact_spec(Task::classification);
    spec.rotate = true;
    spec.noise = 0.01;
    spec.jitter = 0.2;
    const auto a = gen_synthetic(spec), b = gen_synthetic(spec);
    EXPECT_EQ(dataset_hash(a), dataset_hash(b));
    spec.seed += 1;
    EXPECT_NE(dataset_hash(a), dataset_hash(gen_synthetic(spec)));
}

TEST(Data, NormalizeCentresAndScales) {
    PointCloud c;
    c.coords = {1, 1, 1, 3, 1, 1, 2, 3, 1};
    const auto n = normalize_cloud(c);
    double cx = 0, cy = 0, cz = 0, r = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const auto [x, y, z] = n.point(i);
        cx += x, cy += y, cz += z;
        r = std::max(r, std::sqrt(x * x + y * y + z * z));
    }
    EXPECT_NEAR(cx, 0.0, 1e-15);
    EXPECT_NEAR(cy, 0.0, 1e-15);
    EXPECT_NEAR(cz, 0.0, 1e-15);
    EXPECT_NEAR(r, 1.0, 1e-15);
    PointCloud single;
    single.coords = {5, 5, 5};
    EXPECT_EQ(normalize_cloud(single).coords, (std::vector<double>{0, 0, 0}));
}

TEST(Data, XyzRoundTripIsExact) {
    const auto dir = test::temp_dir("data_xyz");
    std::mt19937_64 rng(1);
    auto c = test::random_cloud(20, rng);
    for (std::size_t i = 0; i < 20; ++i) c.point_labels.push_back(i % 3);
    write_xyz(c, dir / "a.xyz");
    const auto back = load_cloud(dir / "a.xyz");
    EXPECT_EQ(back.coords, c.coords);
    EXPECT_EQ(back.point_labels, c.point_labels);
}

TEST(Data, XyzParseErrorsCarryLineNumbers) {
    const auto dir = test::temp_dir("data_xyz_err");
    write_text(dir / "a.xyz", "0 0 0\n1 2\n");
    try {
        load_xyz(dir / "a.xyz");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write_text(dir / "b.xyz", "0 0 0 1\n1 1 1\n");
    EXPECT_THROW(load_xyz(dir / "b.xyz"), ParseError);
    write_text(dir / "c.xyz", "0 0 abc\n");
    EXPECT_THROW(load_xyz(dir / "c.xyz"), ParseError);
    write_text(dir / "d.xyz", "# only a comment\n");
    EXPECT_THROW(load_xyz(dir / "d.xyz"), ParseError);
    EXPECT_THROW(load_xyz(dir / "missing.xyz"), DataError);
}

TEST(Data, OffVerticesAreRead) {
    const auto dir = test::temp_dir("data_off");
    write_text(dir / "a.off", "OFF\n# tetrahedron\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n");
    const auto a = load_cloud(dir / "a.off");
    EXPECT_EQ(a.coords, (std::vector<double>{0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1}));
    write_text(dir / "b.off", "OFF3 0 0\n1 2 3\n4 5 6\n7 8 9\n");
    EXPECT_EQ(load_off(dir / "b.off").size(), 3u);
    write_text(dir / "c.off", "OFF\n3 0 0\n1 2 3\n");
    EXPECT_THROW(load_off(dir / "c.off"), ParseError);
    write_text(dir / "d.off", "PLY\n");
    EXPECT_THROW(load_off(dir / "d.off"), ParseError);
}

TEST(Data, PaletteIsDistinctAndPlyInvertsIt) {
    std::set<std::array<unsigned char, 3>> colours(label_palette().begin(), label_palette().end());
    EXPECT_EQ(colours.size(), 50u);
    const auto dir = test::temp_dir("data_ply");
    std::mt19937_64 rng(2);
    const auto c = test::random_cloud(60, rng);
    std::vector<std::size_t> labels(60);
    for (std::size_t i = 0; i < 60; ++i) labels[i] = (i * 7) % 50;
    write_colored_ply(c, labels, dir / "a.ply");
    const auto back = read_colored_ply(dir / "a.ply");
    EXPECT_EQ(back.point_labels, labels);
    EXPECT_LE(test::max_abs_diff(back.coords, c.coords), 1e-8);  // nine significant digits
    EXPECT_THROW(write_colored_ply(c, {1, 2}, dir / "b.ply"), DataError);
}

TEST(Data, FileListResolvesRelativePaths) {
    const auto dir = test::temp_dir("data_list");
    std::filesystem::create_directories(dir / "clouds");
    write_text(dir / "clouds" / "a.xyz", "0 0 0 0\n1 0 0 1\n");
    write_text(dir / "clouds" / "b.xyz", "0 0 0 2\n0 1 0 2\n");
    write_text(dir / "train.txt", "clouds/a.xyz 0\n# comment\nclouds/b.xyz 1\n");
    const auto seg = load_file_list(dir / "train.txt", Task::segmentation, {{0, 2}, {2, 3}});
    ASSERT_EQ(seg.size(), 2u);
    EXPECT_EQ(*seg.clouds[1].category, 1u);
    // Label 1 of the first cloud falls outside a one-part range.
    EXPECT_THROW(load_file_list(dir / "train.txt", Task::segmentation, {{0, 1}, {1, 3}}), DataError);
    write_text(dir / "bad.txt", "clouds/a.xyz\n");
    EXPECT_THROW(load_file_list(dir / "bad.txt", Task::classification, {}), ParseError);
}
