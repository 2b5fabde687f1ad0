#include "maskclu/geo_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskclu/errors.hpp"

namespace maskclu {

Tensor distance_weights(std::span<const Vec3> centers, std::size_t k_graph) {
    const std::size_t n = centers.size();
    if (k_graph == 0 || k_graph >= n) {
        throw ParameterError("build_graph: k_graph must satisfy 0 < k < N (k=" + std::to_string(k_graph) +
                             ", N=" + std::to_string(n) + ")");
    }
    std::vector<double> dis(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            dis[i * n + j] = std::sqrt(squared_distance(centers[i], centers[j]));
        }
    }
    std::vector<double> w(n * n, 0.0);
    std::vector<std::size_t> order(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = dis.data() + i * n;
        double row_mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row_mean += row[j];
        }
        row_mean /= static_cast<double>(n);
        // Self is excluded before the top-k selection.
        std::size_t m = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                order[m++] = j;
            }
        }
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k_graph), order.end(),
                          [row](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); });
        for (std::size_t t = 0; t < k_graph; ++t) {
            const std::size_t j = order[t];
            const double e = std::clamp(row_mean - row[j], -kDistanceExponentClamp, kDistanceExponentClamp);
            w[i * n + j] = std::exp(e);
        }
    }
    return Tensor::from({n, n}, std::move(w));
}

AffinityGraph build_graph(std::span<const Vec3> centers, const Tensor& features, std::size_t k_graph) {
    const std::size_t n = centers.size();
    if (features.rank() != 2 || features.rows() != n) {
        throw DimensionError("build_graph: features " + shape_str(features.shape()) + " do not match " +
                             std::to_string(n) + " centers");
    }
    for (double v : features.data()) {
        if (!std::isfinite(v)) {
            throw DomainError("build_graph: features contain a non-finite value");
        }
    }
    const Tensor weights = distance_weights(centers, k_graph);
    const Tensor norm_sq = sum_axis(square(features), 1);
    for (double v : norm_sq.data()) {
        if (!(v > 0.0)) {
            throw DomainError("build_graph: a feature row has zero norm");
        }
    }
    const Tensor unit = div(features, sqrt(norm_sq));
    // relu only guards against rounding pushing 1 + cos slightly below zero.
    const Tensor similarity = relu(add_scalar(matmul(unit, transpose(unit)), 1.0));
    const Tensor directed = mul(similarity, weights);
    return {scale(add(directed, transpose(directed)), 0.5), k_graph};
}

}  // namespace maskclu
