#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "maskclu/errors.hpp"
#include "maskclu/gradcheck.hpp"
#include "maskclu/rng.hpp"
#include "maskclu/tensor.hpp"

using namespace maskclu;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        x = rng.uniform(-1.0, 1.0);
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
    ASSERT_EQ(t.numel(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR(t.data()[i], expected[i], tol) << "entry " << i;
    }
}

}  // namespace

TEST(Matmul, IdentityLeavesOperand) {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
    expect_values(matmul(eye, b), {3, 4, 5, 6});
}

TEST(Matmul, RowTimesColumn) {
    const Tensor c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
    EXPECT_EQ(c.shape(), (Shape{1, 1}));
    EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, GradientOfSumAgainstFiniteDifferences) {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    const Tensor b = Tensor::from({2, 2}, {1, 1, 1, 1});
    sum(matmul(a, b)).backward();
    const auto analytic = a.grad();
    const double h = 1e-6;
    for (std::size_t i = 0; i < 4; ++i) {
        auto perturbed = [&](double delta) {
            std::vector<double> v = a.values();
            v[i] += delta;
            return sum(matmul(Tensor::from({2, 2}, v), b)).item();
        };
        const double numeric = (perturbed(h) - perturbed(-h)) / (2 * h);
        EXPECT_NEAR(numeric, 2.0, 1e-8);
        EXPECT_NEAR(analytic[i], 2.0, 1e-12);
    }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    }
}

TEST(Matmul, Float32ModeIsCloseToDouble) {
    Rng rng(3);
    const Tensor a = random_tensor({5, 7}, rng, false);
    const Tensor b = random_tensor({7, 4}, rng, false);
    const Tensor exact = matmul(a, b);
    set_matmul_precision(Precision::f32);
    const Tensor approx = matmul(a, b);
    set_matmul_precision(Precision::f64);
    for (std::size_t i = 0; i < exact.numel(); ++i) {
        EXPECT_NEAR(exact.data()[i], approx.data()[i], 1e-5);
    }
}

TEST(Elementwise, ReluClampsNegativesAndZero) {
    expect_values(relu(Tensor::from({3}, {-1, 0, 2})), {0, 0, 2});
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
    Tensor x = Tensor::from({3}, {-1, 0, 2}, true);
    sum(relu(x)).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 1}));
}

TEST(Elementwise, ExpOfZero) { expect_values(exp(Tensor::from({1}, {0})), {1}); }

TEST(Elementwise, LogDerivativeAtTwo) {
    Tensor x = Tensor::from({1}, {2}, true);
    sum(log(x)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.5);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
    EXPECT_THROW(log(Tensor::from({2}, {1.0, 0.0})), DomainError);
    EXPECT_THROW(log(Tensor::from({1}, {-3.0})), DomainError);
}

TEST(Elementwise, ExpOverflowReportsExponent) {
    try {
        exp(Tensor::from({2}, {1.0, 800.0}));
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("800"), std::string::npos) << e.what();
    }
}

TEST(Elementwise, DivisionByZeroIsDomainError) {
    EXPECT_THROW(div(Tensor::from({2}, {1, 2}), Tensor::from({2}, {1, 0})), DomainError);
}

TEST(Elementwise, AddSubMulNegScale) {
    const Tensor a = Tensor::from({2}, {1, 2});
    const Tensor b = Tensor::from({2}, {3, -5});
    expect_values(add(a, b), {4, -3});
    expect_values(sub(a, b), {-2, 7});
    expect_values(mul(a, b), {3, -10});
    expect_values(neg(a), {-1, -2});
    expect_values(scale(a, 2.5), {2.5, 5});
}

TEST(Broadcast, ScalarRowAndColumn) {
    const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    expect_values(add(m, Tensor::scalar(10)), {11, 12, 13, 14, 15, 16});
    expect_values(add(m, Tensor::from({3}, {1, 0, -1})), {2, 2, 2, 5, 5, 5});
    expect_values(mul(Tensor::from({1, 3}, {2, 2, 2}), m), {2, 4, 6, 8, 10, 12});
    expect_values(sub(m, Tensor::from({2, 1}, {1, 4})), {0, 1, 2, 0, 1, 2});
}

TEST(Broadcast, IncompatibleShapesThrow) {
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
}

TEST(Broadcast, GradientsReduceOverExpandedAxes) {
    Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor row = Tensor::from({3}, {1, 2, 3}, true);
    Tensor col = Tensor::from({2, 1}, {1, 2}, true);
    Tensor s = Tensor::scalar(2.0, true);
    sum(add(add(mul(m, row), col), s)).backward();
    EXPECT_EQ(row.grad(), (std::vector<double>{5, 7, 9}));
    EXPECT_EQ(col.grad(), (std::vector<double>{3, 3}));
    EXPECT_EQ(s.grad(), (std::vector<double>{6}));
    EXPECT_EQ(m.grad(), (std::vector<double>{1, 2, 3, 1, 2, 3}));
}

TEST(Softmax, UniformForEqualLogits) {
    const Tensor s = softmax(Tensor::from({3}, {0, 0, 0}));
    for (double v : s.data()) {
        EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
}

TEST(Softmax, FlattensAtLargeTemperature) {
    const Tensor s = softmax(Tensor::from({2}, {1, 1}), 1e6);
    EXPECT_NEAR(s.data()[0], 0.5, 1e-12);
    const Tensor t = softmax(Tensor::from({2}, {3, -3}), 1e8);
    EXPECT_NEAR(t.data()[0], 0.5, 1e-7);
}

TEST(Softmax, TwoLogitsDirectEvaluation) {
    const double e2 = std::exp(2.0);
    expect_values(softmax(Tensor::from({2}, {2, 0})), {e2 / (e2 + 1), 1 / (e2 + 1)}, 1e-15);
    EXPECT_NEAR(softmax(Tensor::from({2}, {2, 0})).data()[0], 0.8808, 1e-4);
}

TEST(Softmax, NonPositiveTemperatureIsParameterError) {
    EXPECT_THROW(softmax(Tensor::from({2}, {1, 2}), 0.0), ParameterError);
    EXPECT_THROW(softmax(Tensor::from({2}, {1, 2}), -1.0), ParameterError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, false);
        for (double& v : x.mutable_data()) {
            v *= 40.0;
        }
        const double shift = rng.uniform(-100.0, 100.0);
        const Tensor s = softmax(x, 0.5);
        const Tensor shifted = softmax(add_scalar(x, shift), 0.5);
        for (std::size_t i = 0; i < 4; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                EXPECT_GE(s.at(i, j), 0.0);
                EXPECT_NEAR(s.at(i, j), shifted.at(i, j), 1e-12);
                row += s.at(i, j);
            }
            EXPECT_NEAR(row, 1.0, 1e-12);
        }
    }
}

TEST(StopGradient, ValuesPassThrough) {
    Rng rng(5);
    const Tensor x = random_tensor({3, 4}, rng);
    EXPECT_EQ(stop_gradient(x).values(), x.values());
}

TEST(StopGradient, SeversOneBranchOfProduct) {
    Tensor x = Tensor::from({3}, {1.5, -2.0, 0.25}, true);
    sum(mul(stop_gradient(x), x)).backward();
    EXPECT_EQ(x.grad(), x.values());
}

TEST(StopGradient, HeldArgumentMatchesPartialDerivative) {
    // f(x, g(x)) = sum(x^2 * g), g = stop(exp(x)): gradient is 2 x exp(x).
    Rng rng(9);
    Tensor x = random_tensor({5}, rng);
    sum(mul(square(x), stop_gradient(exp(x)))).backward();
    for (std::size_t i = 0; i < 5; ++i) {
        const double v = x.data()[i];
        EXPECT_NEAR(x.grad()[i], 2.0 * v * std::exp(v), 1e-14);
    }
}

TEST(Backward, SquareAtThree) {
    Tensor x = Tensor::scalar(3.0, true);
    square(x).backward();
    EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, AccumulatesAcrossUses) {
    Tensor x = Tensor::scalar(1.0, true);
    add(x, x).backward();
    EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, AccumulatesAcrossBranchesAsSum) {
    Rng rng(21);
    Tensor x = random_tensor({4}, rng);
    sum(add(exp(x), square(x))).backward();
    const auto both = x.grad();
    x.zero_grad();
    sum(exp(x)).backward();
    const auto first = x.grad();
    x.zero_grad();
    sum(square(x)).backward();
    const auto second = x.grad();
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(both[i], first[i] + second[i], 1e-15);
    }
}

TEST(Backward, NonScalarRootIsContractError) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(square(x).backward(), ContractError);
}

TEST(Backward, ReleasesInteriorTape) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = square(x);
    Tensor loss = sum(y);
    loss.backward();
    EXPECT_TRUE(y.node()->parents.empty());
    EXPECT_TRUE(loss.node()->parents.empty());
}

TEST(Backward, DeepChainDoesNotOverflowStack) {
    Tensor x = Tensor::scalar(1.0, true);
    Tensor y = x;
    for (int i = 0; i < 100000; ++i) {
        y = add_scalar(y, 0.0);
    }
    y.backward();
    EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(NoGrad, SkipsTapeRecording) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard guard;
    const Tensor y = square(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Structural, MaxRowsRoutesToLowestArgmax) {
    Tensor x = Tensor::from({3, 2}, {1, 5, 3, 2, 3, 5}, true);
    const Tensor m = max_rows(x);
    expect_values(m, {3, 5});
    sum(m).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(Structural, SegmentMaxAndRepeat) {
    const Tensor x = Tensor::from({4, 2}, {1, 4, 2, 3, 7, 0, 5, 9});
    expect_values(segment_max_rows(x, 2), {2, 4, 7, 9});
    expect_values(repeat_rows(Tensor::from({2, 1}, {1, 2}), 3), {1, 1, 1, 2, 2, 2});
    EXPECT_THROW(segment_max_rows(x, 3), DimensionError);
}

TEST(Structural, GatherRowsScatterAddsGradient) {
    Tensor x = Tensor::from({3, 1}, {10, 20, 30}, true);
    const std::vector<std::size_t> idx{2, 0, 2};
    const Tensor g = gather_rows(x, idx);
    expect_values(g, {30, 10, 30});
    sum(g).backward();
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 0, 2}));
    const std::vector<std::size_t> bad{3};
    EXPECT_THROW(gather_rows(x, bad), DimensionError);
}

TEST(Structural, ConcatSliceTransposeReshape) {
    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor b = Tensor::from({2, 1}, {5, 6});
    expect_values(concat_cols({a, b}), {1, 2, 5, 3, 4, 6});
    expect_values(concat_rows({a, a}), {1, 2, 3, 4, 1, 2, 3, 4});
    expect_values(slice_cols(concat_cols({a, b}), 1, 2), {2, 5, 4, 6});
    expect_values(transpose(a), {1, 3, 2, 4});
    EXPECT_EQ(reshape(a, {4}).shape(), (Shape{4}));
    EXPECT_THROW(reshape(a, {3}), DimensionError);
}

TEST(LayerNorm, NormalizesRows) {
    const Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, -2, 0, 2, 8});
    const Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 0.0);
    for (std::size_t i = 0; i < 2; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            mean += y.at(i, j);
        }
        mean /= 4.0;
        for (std::size_t j = 0; j < 4; ++j) {
            var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        }
        EXPECT_NEAR(mean, 0.0, 1e-15);
        EXPECT_NEAR(var / 4.0, 1.0, 1e-14);
    }
}

TEST(GradCheck, DetectsAWrongGradient) {
    // A hand-built node whose backward is deliberately off by a factor of 2.
    Tensor x = Tensor::from({3}, {0.3, -0.2, 0.9}, true);
    auto broken = [x] {
        auto node = std::make_shared<TapeNode>();
        node->shape = {1};
        node->data = {0.0};
        for (double v : x.data()) {
            node->data[0] += v * v;
        }
        node->requires_grad = grad_enabled();
        node->parents = {x.node()};
        node->backward = [](TapeNode& self) {
            auto& parent = *self.parents[0];
            auto& g = parent.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += 4.0 * parent.data[i] * self.grad[0];
            }
        };
        return Tensor(node);
    };
    const GradCheckReport report = check_gradients("broken", broken, {{"x", x}});
    EXPECT_FALSE(report.passed);
    EXPECT_NEAR(report.max_error, 0.5, 1e-6);
}

TEST(GradCheck, StaysOnTheBasePointPieceAtKinks) {
    // Entries within h of zero: plain central differences would straddle the kink.
    Tensor x = Tensor::from({4}, {2e-6, -3e-6, 0.5, -0.5}, true);
    Tensor y = Tensor::from({2, 2}, {1.0, 1.0 + 1e-7, 0.3, -0.4}, true);
    const Tensor r = Tensor::from({4}, {1.0, -2.0, 3.0, 0.5});
    const GradCheckReport a = check_gradients("relu", [=] { return sum(mul(relu(x), r)); }, {{"x", x}});
    EXPECT_TRUE(a.passed) << a.max_error;
    const GradCheckReport b = check_gradients("max", [=] { return sum(max_rows(y)); }, {{"y", y}});
    EXPECT_TRUE(b.passed) << b.max_error;
}

TEST(GradCheck, ReplayMismatchIsContractError) {
    StopGradientTrace trace(StopGradientTrace::Mode::record);
    {
        StopGradientTraceScope scope(trace);
        relu(Tensor::from({2}, {1.0, -1.0}));
    }
    trace.set_mode(StopGradientTrace::Mode::replay);
    StopGradientTraceScope scope(trace);
    EXPECT_THROW(relu(Tensor::from({3}, {1.0, -1.0, 0.0})), ContractError);
}

TEST(GradCheck, FullSuitePasses) {
    for (const GradCheckReport& r : run_gradcheck_suite(17)) {
        EXPECT_TRUE(r.passed) << r.name << " error " << r.max_error << " at " << r.worst_input;
        EXPECT_LE(r.max_error, 1e-4) << r.name;
    }
}
