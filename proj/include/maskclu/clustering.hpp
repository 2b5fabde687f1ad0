#pragma once

#include <span>
#include <vector>

#include "maskclu/geo_graph.hpp"
#include "maskclu/layers.hpp"
#include "maskclu/pointcloud.hpp"
#include "maskclu/tensor.hpp"

namespace maskclu {

/// Learnable MinCut-style clustering head.
struct ClusterHead {
    Tensor mix;     // W_m [D, D]
    Tensor skip;    // W_s [D, D]
    Tensor hidden;  // W_1 [D, D_h]
    Tensor out;     // W_2 [D_h, K]
    double temperature = 1.0;

    ClusterHead() = default;
    ClusterHead(std::size_t dim, std::size_t hidden_dim, std::size_t clusters, double temperature, Rng& rng);

    std::size_t dim() const { return mix.dim(0); }
    std::size_t clusters() const { return out.dim(1); }
    NamedParameters parameters() const;
};

/// relu(W (F W_m)) + F W_s.
Tensor message_pass(const AffinityGraph& graph, const Tensor& features, const ClusterHead& head);

/// Pre-softmax cluster logits relu(hidden W_1) W_2, [N, K].
Tensor cluster_logits(const Tensor& hidden, const ClusterHead& head);

/// Row-stochastic scores softmax(logits / tau), [N, K].
Tensor cluster_scores(const Tensor& hidden, const ClusterHead& head);

/// Score-weighted mean of the centers per cluster, [K, 3].
Tensor pool_centers(const Tensor& scores, std::span<const Vec3> centers);

struct SinkhornConfig {
    double epsilon = 5e-4;
    std::size_t max_iters = 200;
    double marginal_tol = 1e-6;
    bool epsilon_scaling = true;  // anneal from the largest cost down to epsilon
};

struct SinkhornResult {
    Tensor plan;  // [N, K], no tape
    bool converged = false;
    std::size_t iterations = 0;
    double marginal_error = 0.0;         // max |row/col sum - target| at exit
    std::vector<double> error_history;  // marginal_error after each iteration
};

/// Balanced entropic transport from N points to K targets with squared
/// Euclidean cost and uniform marginals 1/N (rows), 1/K (columns), solved with
/// log-domain Sinkhorn iterations. With epsilon scaling the regularization
/// is halved every iteration until it reaches epsilon, and convergence is only
/// declared at the target epsilon. Not converging within max_iters is reported
/// through the result, not thrown.
SinkhornResult sinkhorn_assign(std::span<const Vec3> points, std::span<const Vec3> targets, const SinkhornConfig& cfg);

/// Symmetric Chamfer distance between a fixed point set and a differentiable
/// one: mean squared distance to the nearest neighbor in the other set, summed
/// over both directions. The nearest-neighbor choice is constant in backward.
Tensor chamfer(std::span<const Vec3> points, const Tensor& other);

/// chamfer(C^a, pooled^b) + chamfer(C^b, pooled^a).
Tensor center_loss(std::span<const Vec3> centers_a, std::span<const Vec3> centers_b, const Tensor& pooled_a,
                   const Tensor& pooled_b);

/// -(1/N) * sum(stop(plan_ab) * log(scores_ab) + stop(plan_ba) * log(scores_ba)).
Tensor assignment_loss(const Tensor& scores_ab, const Tensor& plan_ab, const Tensor& scores_ba, const Tensor& plan_ba);

/// Row-wise argmax (lowest index on ties).
std::vector<std::size_t> hard_labels(const Tensor& scores);

}  // namespace maskclu
