#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "maskclu/layers.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

using Vec3 = std::array<double, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int> label;  // class id, probe datasets only

    std::size_t size() const { return points.size(); }
};

/// Rejects empty clouds and non-finite coordinates.
void validate_cloud(const PointCloud& cloud);

/// A cloud split into N local patches. Neighborhood rows are stored flat:
/// patch i occupies rows [i * k_patch, (i + 1) * k_patch).
struct PatchSet {
    std::vector<std::size_t> center_indices;  // into the source cloud
    std::vector<Vec3> centers;                // N
    std::vector<std::size_t> neighbor_indices;  // N * k_patch
    std::vector<Vec3> neighborhoods;           // N * k_patch, center-relative
    std::size_t k_patch = 0;
    Tensor tokens;  // [N, d] once embedded

    std::size_t count() const { return centers.size(); }
    /// Neighborhood coordinates as a constant [N * k_patch, 3] tensor.
    Tensor neighborhood_tensor() const;
};

/// Greedy maximin subset of `n` indices. The first index is drawn uniformly
/// from Rng(seed); each next index maximizes the minimum distance to those
/// already chosen, lowest index on ties.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);

/// For each query, the k nearest reference indices by Euclidean distance,
/// ascending, lowest index on ties. Returned flat, row-major [queries, k].
std::vector<std::size_t> knn(std::span<const Vec3> queries, std::span<const Vec3> reference, std::size_t k);

PatchSet build_patches(const PointCloud& cloud, std::size_t n, std::size_t k_patch, std::uint64_t seed);

/// Shared point-wise MLP with an intermediate per-patch max-pool:
///   stage 1: 3 -> 64 -> 128 (relu between), max-pool over the patch,
///   concatenate the pooled vector onto every point feature,
///   stage 2: 256 -> 256 -> d (relu between), final max-pool.
struct MiniPointNet {
    Linear first_in;
    Linear first_out;
    Linear second_in;
    Linear second_out;

    MiniPointNet() = default;
    MiniPointNet(std::size_t out_dim, Rng& rng);

    std::size_t out_dim() const { return second_out.out_features(); }
    NamedParameters parameters() const;
};

/// Tokens [N, d] for every patch. Invariant to the order of points within a patch.
Tensor embed_patches(const PatchSet& patches, const MiniPointNet& encoder);

// ---------------------------------------------------------------------------
// ASCII XYZ files: one point per line, three reals and an optional integer
// label, '#' comment lines and blank lines skipped.

struct XyzData {
    std::vector<Vec3> points;
    std::vector<long> labels;  // empty, or one per point
};

XyzData parse_xyz(std::string_view text);
XyzData read_xyz(const std::filesystem::path& path);
/// Reals are written with 17 significant digits so reading back is exact.
std::string format_xyz(std::span<const Vec3> points, std::span<const long> labels = {});
void write_xyz(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const long> labels = {});

/// Loads a cloud; the label, if present, must be identical on every line.
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace maskclu
