#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskclu/pointcloud.hpp"

namespace maskclu {

enum class ShapeKind { sphere = 0, plane = 1, box = 2, cylinder = 3 };

ShapeKind shape_kind_from_name(std::string_view name);
std::string_view shape_kind_name(ShapeKind kind);

struct SyntheticShape {
    ShapeKind kind;
    int label;  // static_cast<int>(kind)
    PointCloud cloud;
};

struct DatasetRequest {
    std::string generator;
    std::size_t count = 0;
};

/// Clouds sampled on randomly rotated surfaces with Gaussian noise of standard
/// deviation `noise`, then shifted to zero mean and scaled to max radius 1.
/// Points are drawn in antipodal pairs, so noise-free clouds are already
/// centered and a noise-free sphere stays exactly on the unit sphere.
/// Output is grouped by request, in request order.
std::vector<SyntheticShape> generate_dataset(const std::vector<DatasetRequest>& requests, double noise,
                                             std::uint64_t seed, std::size_t points_per_cloud = 1024);

/// Balanced four-class set: every generator `per_class` times.
std::vector<SyntheticShape> four_class_dataset(std::size_t per_class, double noise, std::uint64_t seed,
                                               std::size_t points_per_cloud = 1024);

std::vector<PointCloud> clouds_of(const std::vector<SyntheticShape>& shapes);

/// gen-data request file: {"shapes": [{"generator": "sphere", "count": 64}, ...],
/// "noise": 0.01, "seed": 0, "points": 1024}.
struct DatasetSpec {
    std::vector<DatasetRequest> requests;
    double noise = 0.01;
    std::uint64_t seed = 0;
    std::size_t points = 1024;
};

DatasetSpec dataset_spec_from_json(std::string_view text);

/// Writes one labeled XYZ file per cloud, named <index>_<generator>.xyz.
void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticShape>& shapes);
/// Reads every *.xyz file in `dir` in lexicographic filename order.
std::vector<PointCloud> read_dataset(const std::filesystem::path& dir);

}  // namespace maskclu
