#include <gtest/gtest.h>

#include <cmath>

#include "maskclu/contrastive.hpp"
#include "maskclu/errors.hpp"
#include "maskclu/rng.hpp"

using namespace maskclu;

namespace {

Tensor random_vec(std::size_t d, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(d);
    for (double& x : v) {
        x = rng.normal();
    }
    return Tensor::from({1, d}, std::move(v), requires_grad);
}

}  // namespace

TEST(GlobalPool, SingleRowIsItself) {
    const Tensor r = Tensor::from({1, 3}, {1, -2, 3});
    EXPECT_EQ(global_pool(r).values(), r.values());
}

TEST(GlobalPool, ColumnMaxima) {
    EXPECT_EQ(global_pool(Tensor::from({2, 2}, {1, 5, 3, 2})).values(), (std::vector<double>{3, 5}));
}

TEST(GlobalPool, RowPermutationInvariant) {
    Rng rng(1);
    std::vector<double> v(20);
    for (double& x : v) {
        x = rng.normal();
    }
    const Tensor a = Tensor::from({5, 4}, v);
    const std::vector<std::size_t> perm{3, 1, 4, 0, 2};
    EXPECT_EQ(global_pool(a).values(), global_pool(gather_rows(a, perm)).values());
}

TEST(GlobalPool, EmptyIsContractError) { EXPECT_THROW(global_pool(Tensor::zeros({0, 3})), ContractError); }

TEST(SiameseDistance, EqualVectorsGiveZero) {
    Rng rng(2);
    const Tensor f = random_vec(8, rng);
    EXPECT_NEAR(siamese_distance(f, f).item(), 0.0, 1e-15);
}

TEST(SiameseDistance, OrthogonalGivesTwo) {
    EXPECT_EQ(siamese_distance(Tensor::from({1, 2}, {1, 0}), Tensor::from({1, 2}, {0, 3})).item(), 2.0);
}

TEST(SiameseDistance, OppositeGivesFour) {
    Rng rng(3);
    const Tensor f = random_vec(6, rng);
    EXPECT_NEAR(siamese_distance(f, neg(f)).item(), 4.0, 1e-15);
}

TEST(SiameseDistance, ZeroNormIsDomainError) {
    EXPECT_THROW(siamese_distance(Tensor::zeros({1, 3}), Tensor::from({1, 3}, {1, 2, 3})), DomainError);
}

TEST(SiameseDistance, DetachedBranchesCarryExactlyZero) {
    // Through s1 only f moves; through s2 only z moves. Checking each branch
    // alone: the gradient of D with z held via stop_gradient is the s1 part.
    Rng rng(4);
    Tensor f = random_vec(5, rng, true);
    Tensor z = random_vec(5, rng, true);
    cosine_rows(f, stop_gradient(z)).backward();
    for (double v : z.grad()) {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_TRUE(f.has_grad());
    f.zero_grad();
    cosine_rows(stop_gradient(f), z).backward();
    for (double v : f.grad()) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(SiameseDistance, GradientIsHalfTheUndetachedOne) {
    // With both branches live, each argument would get two cosine terms; the
    // symmetric stop-gradient keeps exactly one of them.
    Rng rng(5);
    Tensor f = random_vec(7, rng, true);
    Tensor z = random_vec(7, rng, true);
    siamese_distance(f, z).backward();
    const auto gf = f.grad();
    f.zero_grad();
    z.zero_grad();
    scale(cosine_rows(f, z), -2.0).backward();
    const auto full = f.grad();
    for (std::size_t i = 0; i < 7; ++i) {
        EXPECT_NEAR(gf[i], 0.5 * full[i], 1e-15);
    }
}

TEST(ContrastiveLoss, IdenticalInputsGiveZero) {
    Rng rng(6);
    const Tensor v = random_vec(8, rng);
    EXPECT_NEAR(contrastive_loss(v, v, v, v).item(), 0.0, 1e-15);
}

TEST(ContrastiveLoss, PositiveScaleInvariant) {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor fa = random_vec(8, rng), zb = random_vec(8, rng), fb = random_vec(8, rng), za = random_vec(8, rng);
        const double c = rng.uniform(0.01, 100.0);
        const double base = contrastive_loss(fa, zb, fb, za).item();
        EXPECT_NEAR(contrastive_loss(scale(fa, c), zb, fb, scale(za, c)).item(), base, 1e-13);
        EXPECT_GE(base, 0.0);
        EXPECT_LE(base, 8.0);
    }
}

TEST(ContrastiveLoss, BatchMeanOverRows) {
    Rng rng(8);
    std::vector<double> a(12), b(12);
    for (std::size_t i = 0; i < 12; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    const Tensor f = Tensor::from({3, 4}, a);
    const Tensor z = Tensor::from({3, 4}, b);
    double expected = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        const std::vector<std::size_t> row{r};
        expected += siamese_distance(gather_rows(f, row), gather_rows(z, row)).item() / 3.0;
    }
    EXPECT_NEAR(siamese_distance(f, z).item(), expected, 1e-14);
}
