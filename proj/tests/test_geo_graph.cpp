#include <gtest/gtest.h>

#include <cmath>

#include "maskclu/errors.hpp"
#include "maskclu/geo_graph.hpp"
#include "maskclu/rng.hpp"

using namespace maskclu;

namespace {

std::vector<Vec3> random_centers(std::size_t n, Rng& rng) {
    std::vector<Vec3> c(n);
    for (auto& v : c) {
        v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    return c;
}

Tensor random_features(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<double> v(n * d);
    for (double& x : v) {
        x = rng.normal();
    }
    return Tensor::from({n, d}, std::move(v));
}

double cosine(const Tensor& f, std::size_t i, std::size_t j) {
    double dot = 0, ni = 0, nj = 0;
    for (std::size_t c = 0; c < f.cols(); ++c) {
        dot += f.at(i, c) * f.at(j, c);
        ni += f.at(i, c) * f.at(i, c);
        nj += f.at(j, c) * f.at(j, c);
    }
    return dot / std::sqrt(ni * nj);
}

}  // namespace

TEST(BuildGraph, IdenticalFeaturesLeaveDistanceWeightsOnly) {
    Rng rng(1);
    const auto centers = random_centers(10, rng);
    const Tensor f = Tensor::full({10, 4}, 0.5);
    const Tensor w = build_graph(centers, f, 3).weights;
    const Tensor d = distance_weights(centers, 3);
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = 0; j < 10; ++j) {
            EXPECT_NEAR(w.at(i, j), (2.0 * d.at(i, j) + 2.0 * d.at(j, i)) / 2.0, 1e-12);
        }
    }
}

TEST(BuildGraph, ColinearHandCase) {
    const std::vector<Vec3> centers{{0, 0, 0}, {1, 0, 0}, {10, 0, 0}};
    const Tensor f = Tensor::from({3, 2}, {1, 0, 0.6, 0.8, 0, 1});
    const Tensor w = build_graph(centers, f, 1).weights;
    const double c01 = 1.0 + 0.6;
    const double c12 = 1.0 + 0.8;
    const double w01 = std::exp(11.0 / 3.0 - 1.0);
    const double w10 = std::exp(10.0 / 3.0 - 1.0);
    const double w21 = std::exp(19.0 / 3.0 - 9.0);
    EXPECT_NEAR(w.at(0, 1), c01 * (w01 + w10) / 2.0, 1e-12);
    EXPECT_NEAR(w.at(1, 2), c12 * w21 / 2.0, 1e-12);
    EXPECT_EQ(w.at(1, 2), w.at(2, 1));
    EXPECT_GT(w.at(2, 1), 0.0);
    EXPECT_EQ(w.at(0, 2), 0.0);
    EXPECT_EQ(w.at(2, 0), 0.0);
}

TEST(BuildGraph, InvariantsOnRandomInstances) {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 3 + rng.index(30);
        const std::size_t k = 1 + rng.index(n - 1);
        const auto centers = random_centers(n, rng);
        const Tensor f = random_features(n, 1 + rng.index(8), rng);
        const AffinityGraph g = build_graph(centers, f, k);
        const Tensor directed = distance_weights(centers, k);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t out_degree = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double w = g.weights.at(i, j);
                EXPECT_EQ(w, g.weights.at(j, i));
                EXPECT_GE(w, 0.0);
                const bool linked = directed.at(i, j) > 0.0 || directed.at(j, i) > 0.0;
                if (!linked) {
                    EXPECT_EQ(w, 0.0);
                }
                out_degree += directed.at(i, j) > 0.0;
            }
            EXPECT_EQ(g.weights.at(i, i), 0.0);
            EXPECT_EQ(out_degree, k);
        }
    }
}

TEST(BuildGraph, TranslationInvariant) {
    Rng rng(3);
    const auto centers = random_centers(16, rng);
    auto moved = centers;
    for (Vec3& c : moved) {
        c[0] += 3.0;
        c[1] -= 7.5;
    }
    const Tensor f = random_features(16, 6, rng);
    const Tensor a = build_graph(centers, f, 4).weights;
    const Tensor b = build_graph(moved, f, 4).weights;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12 * (1.0 + std::abs(a.data()[i])));
    }
}

TEST(BuildGraph, FeatureRotationInvariant) {
    Rng rng(4);
    const auto centers = random_centers(12, rng);
    const Tensor f = random_features(12, 2, rng);
    const double t = 0.7;
    const Tensor rot = Tensor::from({2, 2}, {std::cos(t), std::sin(t), -std::sin(t), std::cos(t)});
    const Tensor a = build_graph(centers, f, 4).weights;
    const Tensor b = build_graph(centers, matmul(f, rot), 4).weights;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12 * (1.0 + std::abs(a.data()[i])));
    }
}

TEST(BuildGraph, MoreSimilarPairIsNotWeaker) {
    Rng rng(5);
    const auto centers = random_centers(8, rng);
    Tensor f = random_features(8, 3, rng);
    const Tensor before = build_graph(centers, f, 7).weights;
    // Move row 1 halfway toward row 0: their cosine rises, nothing else moves.
    std::vector<double> v = f.values();
    const double n0 = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    const double n1 = std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5]);
    for (int c = 0; c < 3; ++c) {
        v[3 + c] = v[3 + c] / n1 + v[c] / n0;
    }
    const Tensor g = Tensor::from({8, 3}, v);
    ASSERT_GT(cosine(g, 0, 1), cosine(f, 0, 1));
    const Tensor after = build_graph(centers, g, 7).weights;
    EXPECT_GE(after.at(0, 1), before.at(0, 1));
}

TEST(BuildGraph, ExponentIsClamped) {
    const std::vector<Vec3> centers{{0, 0, 0}, {1e-3, 0, 0}, {200, 0, 0}, {400, 0, 0}};
    const Tensor d = distance_weights(centers, 1);
    EXPECT_EQ(d.at(0, 1), std::exp(kDistanceExponentClamp));
    for (double v : d.data()) {
        EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(BuildGraph, Errors) {
    Rng rng(6);
    const auto centers = random_centers(4, rng);
    EXPECT_THROW(build_graph(centers, random_features(4, 3, rng), 4), ParameterError);
    EXPECT_THROW(build_graph(centers, random_features(4, 3, rng), 0), ParameterError);
    Tensor bad = random_features(4, 3, rng);
    bad.mutable_data()[5] = std::nan("");
    EXPECT_THROW(build_graph(centers, bad, 2), DomainError);
    EXPECT_THROW(build_graph(centers, Tensor::zeros({4, 3}), 2), DomainError);
    EXPECT_THROW(build_graph(centers, random_features(5, 3, rng), 2), DimensionError);
}

TEST(BuildGraph, GradientOnlyThroughFeatures) {
    Rng rng(7);
    const auto centers = random_centers(6, rng);
    Tensor f = random_features(6, 4, rng).set_requires_grad(true);
    sum(build_graph(centers, f, 2).weights).backward();
    EXPECT_TRUE(f.has_grad());
}
