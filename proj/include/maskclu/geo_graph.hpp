#pragma once

#include <span>

#include "maskclu/pointcloud.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

/// Exponent clamp applied to the distance weighting exp(mean_i(Dis) - Dis_ij).
inline constexpr double kDistanceExponentClamp = 30.0;

struct AffinityGraph {
    Tensor weights;  // [N, N], symmetric, nonnegative, zero diagonal
    std::size_t k_graph = 0;

    std::size_t size() const { return weights.rows(); }
};

/// Constant part of the affinity: for each row i, exp(clamp(mean_j Dis_ij - Dis_ij))
/// on i's k nearest other centers (lowest index on distance ties), zero elsewhere.
/// Not symmetric.
Tensor distance_weights(std::span<const Vec3> centers, std::size_t k_graph);

/// Geo-semantic affinity graph over patch centers. Feature rows are unit
/// normalized, the cosine factor 1 + F F^T (in [0, 2]) is masked and weighted by
/// distance_weights, then symmetrized as (W + W^T) / 2. Differentiable through
/// the cosine factor only.
AffinityGraph build_graph(std::span<const Vec3> centers, const Tensor& features, std::size_t k_graph);

}  // namespace maskclu
