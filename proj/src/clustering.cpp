#include "maskclu/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskclu/errors.hpp"

namespace maskclu {

ClusterHead::ClusterHead(std::size_t dim, std::size_t hidden_dim, std::size_t clusters, double temperature_,
                         Rng& rng)
    : mix(xavier_uniform(dim, dim, rng)),
      skip(xavier_uniform(dim, dim, rng)),
      hidden(xavier_uniform(dim, hidden_dim, rng)),
      out(xavier_uniform(hidden_dim, clusters, rng)),
      temperature(temperature_) {
    if (clusters < 2) {
        throw ParameterError("ClusterHead: need at least 2 clusters");
    }
    if (!(temperature > 0.0)) {
        throw ParameterError("ClusterHead: temperature must be positive");
    }
}

NamedParameters ClusterHead::parameters() const {
    return {{"mix", mix}, {"skip", skip}, {"hidden", hidden}, {"out", out}};
}

Tensor message_pass(const AffinityGraph& graph, const Tensor& features, const ClusterHead& head) {
    const std::size_t n = graph.size();
    if (features.rank() != 2 || features.rows() != n || features.cols() != head.dim()) {
        throw ConfigError("message_pass: features " + shape_str(features.shape()) + " do not fit a graph of " +
                          std::to_string(n) + " nodes and head width " + std::to_string(head.dim()));
    }
    return add(relu(matmul(graph.weights, matmul(features, head.mix))), matmul(features, head.skip));
}

Tensor cluster_logits(const Tensor& hidden, const ClusterHead& head) {
    if (hidden.rank() != 2 || hidden.cols() != head.dim()) {
        throw ConfigError("cluster_scores: hidden " + shape_str(hidden.shape()) + " does not match head width " +
                          std::to_string(head.dim()));
    }
    return matmul(relu(matmul(hidden, head.hidden)), head.out);
}

Tensor cluster_scores(const Tensor& hidden, const ClusterHead& head) {
    if (!(head.temperature > 0.0)) {
        throw ParameterError("cluster_scores: temperature must be positive");
    }
    return softmax(cluster_logits(hidden, head), head.temperature);
}

namespace {

Tensor centers_tensor(std::span<const Vec3> centers) {
    std::vector<double> v;
    v.reserve(centers.size() * 3);
    for (const Vec3& c : centers) {
        v.insert(v.end(), c.begin(), c.end());
    }
    return Tensor::from({centers.size(), 3}, std::move(v));
}

}  // namespace

Tensor pool_centers(const Tensor& scores, std::span<const Vec3> centers) {
    if (scores.rank() != 2 || scores.rows() != centers.size()) {
        throw DimensionError("pool_centers: scores " + shape_str(scores.shape()) + " vs " +
                             std::to_string(centers.size()) + " centers");
    }
    const Tensor weights = div(scores, sum_axis(scores, 0));  // columns sum to 1
    return matmul(transpose(weights), centers_tensor(centers));
}

namespace {

double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        top = std::max(top, v[i * stride]);
    }
    if (!std::isfinite(top)) {
        return top;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += std::exp(v[i * stride] - top);
    }
    return top + std::log(total);
}

}  // namespace

SinkhornResult sinkhorn_assign(std::span<const Vec3> points, std::span<const Vec3> targets, const SinkhornConfig& cfg) {
    const std::size_t n = points.size();
    const std::size_t k = targets.size();
    if (k < 2 || n < k) {
        throw ParameterError("sinkhorn_assign: need N >= K >= 2 (N=" + std::to_string(n) + ", K=" +
                             std::to_string(k) + ")");
    }
    if (!(cfg.epsilon > 0.0) || cfg.max_iters == 0 || !(cfg.marginal_tol > 0.0)) {
        throw ParameterError("sinkhorn_assign: epsilon, max_iters and marginal_tol must be positive");
    }
    const double log_a = -std::log(static_cast<double>(n));
    const double log_b = -std::log(static_cast<double>(k));
    const double row_target = 1.0 / static_cast<double>(n);
    const double col_target = 1.0 / static_cast<double>(k);

    std::vector<double> cost(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            cost[i * k + j] = squared_distance(points[i], targets[j]);
        }
    }
    std::vector<double> f(n, 0.0);
    std::vector<double> g(k, 0.0);
    std::vector<double> scratch(n * k);
    std::vector<double> plan(n * k);

    // With epsilon scaling, start at the largest cost and halve toward the
    // target, warm-starting each stage from the previous potentials.
    double eps = cfg.epsilon;
    if (cfg.epsilon_scaling) {
        eps = std::max(cfg.epsilon, *std::max_element(cost.begin(), cost.end()));
    }
    SinkhornResult result;
    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        if (it > 0) {
            eps = std::max(cfg.epsilon, 0.5 * eps);
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                scratch[i * k + j] = (g[j] - cost[i * k + j]) / eps;
            }
            f[i] = eps * (log_a - log_sum_exp(scratch.data() + i * k, k, 1));
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                scratch[i * k + j] = (f[i] - cost[i * k + j]) / eps;
            }
        }
        for (std::size_t j = 0; j < k; ++j) {
            g[j] = eps * (log_b - log_sum_exp(scratch.data() + j, n, k));
        }
        std::vector<double> col(k, 0.0);
        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double v = std::exp((f[i] + g[j] - cost[i * k + j]) / eps);
                plan[i * k + j] = v;
                row += v;
                col[j] += v;
            }
            err = std::max(err, std::abs(row - row_target));
        }
        for (std::size_t j = 0; j < k; ++j) {
            err = std::max(err, std::abs(col[j] - col_target));
        }
        result.error_history.push_back(err);
        result.iterations = it + 1;
        result.marginal_error = err;
        if (eps == cfg.epsilon && err < cfg.marginal_tol) {
            result.converged = true;
            break;
        }
    }
    result.plan = Tensor::from({n, k}, std::move(plan));
    return result;
}

Tensor chamfer(std::span<const Vec3> points, const Tensor& other) {
    if (points.empty() || other.numel() == 0) {
        throw ContractError("chamfer: both point sets must be nonempty");
    }
    if (other.rank() != 2 || other.cols() != 3) {
        throw DimensionError("chamfer: expected [M, 3] points, got " + shape_str(other.shape()));
    }
    const std::size_t n = points.size();
    const std::size_t m = other.rows();
    std::vector<Vec3> others(m);
    for (std::size_t j = 0; j < m; ++j) {
        others[j] = {other.at(j, 0), other.at(j, 1), other.at(j, 2)};
    }
    auto nearest = [](const Vec3& q, std::span<const Vec3> set) {
        std::size_t best = 0;
        double best_d = squared_distance(q, set[0]);
        for (std::size_t i = 1; i < set.size(); ++i) {
            const double d = squared_distance(q, set[i]);
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        return best;
    };
    std::vector<std::size_t> to_other(n);
    for (std::size_t i = 0; i < n; ++i) {
        to_other[i] = nearest(points[i], others);
    }
    std::vector<Vec3> matched(m);
    for (std::size_t j = 0; j < m; ++j) {
        matched[j] = points[nearest(others[j], points)];
    }
    const Tensor fixed = centers_tensor(points);
    const Tensor forward_sq = sum_axis(square(sub(gather_rows(other, to_other), fixed)), 1);
    const Tensor backward_sq = sum_axis(square(sub(other, centers_tensor(matched))), 1);
    return add(scale(sum(forward_sq), 1.0 / static_cast<double>(n)),
               scale(sum(backward_sq), 1.0 / static_cast<double>(m)));
}

Tensor center_loss(std::span<const Vec3> centers_a, std::span<const Vec3> centers_b, const Tensor& pooled_a,
                   const Tensor& pooled_b) {
    return add(chamfer(centers_a, pooled_b), chamfer(centers_b, pooled_a));
}

Tensor assignment_loss(const Tensor& scores_ab, const Tensor& plan_ab, const Tensor& scores_ba, const Tensor& plan_ba) {
    if (scores_ab.shape() != plan_ab.shape() || scores_ba.shape() != plan_ba.shape() ||
        scores_ab.shape() != scores_ba.shape() || scores_ab.rank() != 2) {
        throw DimensionError("assignment_loss: scores and plans must share one [N, K] shape");
    }
    const double n = static_cast<double>(scores_ab.rows());
    const Tensor ab = sum(mul(stop_gradient(plan_ab), log(scores_ab)));
    const Tensor ba = sum(mul(stop_gradient(plan_ba), log(scores_ba)));
    return scale(add(ab, ba), -1.0 / n);
}

std::vector<std::size_t> hard_labels(const Tensor& scores) {
    const std::size_t n = scores.rows();
    const std::size_t k = scores.cols();
    std::vector<std::size_t> labels(n);
    const auto d = scores.data();
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::size_t>(std::max_element(d.begin() + i * k, d.begin() + (i + 1) * k) -
                                             (d.begin() + i * k));
    }
    return labels;
}

}  // namespace maskclu
