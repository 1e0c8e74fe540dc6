#include "oracles.hpp"
#include "primitives.hpp"

#include <efcn/autodiff.hpp>
#include <efcn/errors.hpp>
#include <efcn/model.hpp>
#include <efcn/ops.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace efcn;

namespace {

Tensor vec(std::vector<float> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return Tensor(Shape{n}, std::move(v));
}

// 0.5 * sum(theta^2), recorded with tape primitives.
LossFn half_square() {
    return [](Tape&, Var theta, const Batch&) { return ops::scale(ops::sum(ops::mul(theta, theta)), 0.5); };
}

// 0.5 * theta^T diag(d) theta
LossFn diag_quadratic(std::vector<float> d) {
    return [d](Tape& t, Var theta, const Batch&) {
        Var w = t.constant(vec(d));
        return ops::scale(ops::sum(ops::mul(w, ops::mul(theta, theta))), 0.5);
    };
}

const Batch kNoBatch{};

}  // namespace

TEST(Tensor, ShapeAndStorageAgree) {
    Tensor t(Shape{2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_EQ(numel(t.shape()), 24);
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
    EXPECT_THROW(t.reshaped(Shape{5, 5}), ShapeError);
    EXPECT_EQ(t.reshaped(Shape{6, 4}).dim(0), 6);
}

TEST(Tensor, FiniteCheck) {
    Tensor t(Shape{3}, 1.0f);
    EXPECT_TRUE(t.all_finite());
    t[1] = std::nanf("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Tape, UnusedNodeHasZeroAdjoint) {
    Tape tape;
    Var a = tape.leaf(vec({1, 2}));
    Var unused = tape.leaf(vec({3, 4}));
    Var y = ops::sum(ops::mul(a, a));
    tape.backward(y);
    const Tensor& g = tape.grad(unused);
    EXPECT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0], 0.0f);
    EXPECT_EQ(g[1], 0.0f);
}

TEST(Tape, BackwardVisitsEachNodeOnce) {
    Tape tape;
    Var a = tape.leaf(vec({1, 2, 3}));
    Var b = ops::mul(a, a);
    Var c = ops::add(b, a);
    Var d = ops::add(c, b);
    Var y = ops::sum(d);
    tape.backward(y);
    EXPECT_LE(tape.backward_visits(), tape.size());
    // d/da (2a^2 + a) = 4a + 1
    const Tensor& g = tape.grad(a);
    EXPECT_FLOAT_EQ(g[0], 5.0f);
    EXPECT_FLOAT_EQ(g[1], 9.0f);
    EXPECT_FLOAT_EQ(g[2], 13.0f);
}

TEST(Grad, HalfSquareIsIdentity) {
    const ParamVector theta(std::vector<float>{1, -2, 3});
    const auto g = grad(half_square(), theta, kNoBatch);
    EXPECT_EQ(g.storage(), (std::vector<float>{1, -2, 3}));
}

TEST(Grad, ConstantLossHasZeroGradient) {
    LossFn c = [](Tape& t, Var theta, const Batch&) {
        return ops::add(ops::scale(ops::sum(theta), 0.0), t.constant(Tensor::scalar(4.0f)));
    };
    const auto g = grad(c, ParamVector(std::vector<float>{1, 2, 3}), kNoBatch);
    for (float v : g.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(Grad, TwoLayerDenseNetMatchesFiniteDifferences) {
    // 2 -> 2 -> 2 without biases: 8 parameters.
    ModelSpec m;
    m.input = {2, 1, 1};
    m.classes = 2;
    m.layers = {Flatten{}, Dense{2, 2, std::nullopt}, ReLU{}, Dense{2, 2, std::nullopt}};
    oracle::Gen gen(11);
    int checked = 0;
    while (checked < 10) {
        const ParamVector theta = init_params(m, gen.seed());
        const Batch b = gen.batch(m, 5);
        const auto x = oracle::to_double(theta.values());
        if (oracle::kink_margin(m, x, b.images) < 1e-2) continue;
        const auto g = grad(model_loss(m), theta, b);
        const auto fd = finite_diff_grad(model_loss(m), theta, b, 1e-2);
        EXPECT_LT(relative_error(g.values(), fd.values()), 1e-4);
        ++checked;
    }
}

TEST(Grad, NonFiniteLossNamesTheLayer) {
    ModelSpec m;
    m.input = {2, 1, 1};
    m.classes = 2;
    m.layers = {Flatten{}, Dense{2, 2, std::nullopt}, ReLU{}, Dense{2, 2, std::nullopt}};
    ParamVector theta = zero_params(m);
    theta[0] = std::numeric_limits<float>::infinity();
    Batch b{Tensor(Shape{1, 2, 1, 1}, std::vector<float>{1, 1}), {0}};
    try {
        grad(model_loss(m), theta, b);
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_EQ(e.layer(), 1);
    }
}

TEST(FiniteDiff, QuadraticIsExact) {
    const auto g = finite_diff_grad(half_square(), ParamVector(std::vector<float>{2}), kNoBatch, 1e-3);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
}

TEST(FiniteDiff, CubicCarriesSecondOrderTerm) {
    const double x[] = {1.0};
    const auto g = finite_diff_grad([](std::span<const double> p) { return p[0] * p[0] * p[0]; }, x, 1e-3);
    EXPECT_NEAR(g[0], 3.000001, 1e-9);
}

TEST(FiniteDiff, DeadCoordinateIsZero) {
    LossFn f = [](Tape& t, Var theta, const Batch&) {
        Var first = ops::slice(theta, 0, Shape{1});
        return ops::sum(ops::mul(first, ops::mul(first, first)));
    };
    const auto g = finite_diff_grad(f, ParamVector(std::vector<float>{0.7f, 3.0f}), kNoBatch, 1e-3);
    EXPECT_EQ(g[1], 0.0f);
}

TEST(Hvp, DiagonalQuadratic) {
    const LossFn f = diag_quadratic({3, 1});
    const ParamVector theta(std::vector<float>{0, 0});
    const auto h1 = hvp(f, theta, kNoBatch, ParamVector(std::vector<float>{1, 0}));
    EXPECT_NEAR(h1[0], 3.0, 1e-6);
    EXPECT_NEAR(h1[1], 0.0, 1e-6);
    const auto h2 = hvp(f, theta, kNoBatch, ParamVector(std::vector<float>{0, 1}));
    EXPECT_NEAR(h2[0], 0.0, 1e-6);
    EXPECT_NEAR(h2[1], 1.0, 1e-6);
}

TEST(Hvp, ZeroDirectionIsAnError) {
    EXPECT_THROW(hvp(half_square(), ParamVector(std::vector<float>{1, 2}), kNoBatch,
                     ParamVector(std::vector<float>{0, 0})),
                 Error);
}

TEST(Hvp, ColumnsReproduceDenseFiniteDifferenceHessian) {
    // 5 -> 6 -> 2 dense with biases.
    ModelSpec m;
    m.input = {5, 1, 1};
    m.classes = 2;
    m.layers = {Flatten{}, Dense{5, 6, std::nullopt}, ReLU{}, Dense{6, 2, std::nullopt}};
    ASSERT_EQ(param_count(m), 50u);

    oracle::Gen gen(5);
    ParamVector theta;
    Batch b;
    do {
        theta = init_params(m, gen.seed());
        b = gen.batch(m, 6);
    } while (oracle::kink_margin(m, oracle::to_double(theta.values()), b.images) < 1e-2);

    const std::size_t n = theta.size();
    const auto x = oracle::to_double(theta.values());
    const auto H = oracle::fd_hessian([&](std::span<const double> p) { return oracle::loss(m, p, b); }, x, 1e-4);
    double num = 0, den = 0;
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<float> e(n, 0.0f);
        e[k] = 1.0f;
        const auto col = hvp(model_loss(m), theta, b, ParamVector(theta.segments(), e));
        for (std::size_t i = 0; i < n; ++i) {
            num += std::pow(col[i] - H[i * n + k], 2);
            den += H[i * n + k] * H[i * n + k];
        }
    }
    EXPECT_LT(std::sqrt(num / den), 1e-2);
}

TEST(Hvp, LinearInDirection) {
    ModelSpec m;
    m.input = {3, 1, 1};
    m.classes = 3;
    m.layers = {Flatten{}, Dense{3, 4, std::nullopt}, ReLU{}, Dense{4, 3, std::nullopt}};
    oracle::Gen gen(21);
    for (int trial = 0; trial < 10; ++trial) {
        const ParamVector theta = init_params(m, gen.seed());
        const Batch b = gen.batch(m, 4);
        if (oracle::kink_margin(m, oracle::to_double(theta.values()), b.images) < 1e-2) continue;
        const ParamVector v(theta.segments(), gen.floats(theta.size()));
        const auto hv = hvp(model_loss(m), theta, b, v);
        for (double alpha : {2.0, -1.0}) {
            ParamVector av = v;
            for (auto& x : av.storage()) x = static_cast<float>(alpha * x);
            const auto hav = hvp(model_loss(m), theta, b, av);
            std::vector<float> expect(hv.size());
            for (std::size_t i = 0; i < hv.size(); ++i) expect[i] = static_cast<float>(alpha * hv[i]);
            EXPECT_LE(distance(hav.values(), expect), 1e-3 * norm(expect));
        }
    }
}

TEST(Determinism, RepeatedGradientsAreBitwiseEqual) {
    const ModelSpec m = build_vanilla_cnn(4, {1, 8, 8}, 3);
    oracle::Gen gen(2);
    const ParamVector theta = init_params(m, 9);
    const Batch b = gen.batch(m, 7);
    const auto g1 = grad(model_loss(m), theta, b);
    const auto g2 = grad(model_loss(m), theta, b);
    EXPECT_EQ(g1.storage(), g2.storage());
    const ParamVector v(theta.segments(), gen.floats(theta.size()));
    EXPECT_EQ(hvp(model_loss(m), theta, b, v).storage(), hvp(model_loss(m), theta, b, v).storage());
}

// Per-primitive gradient checks against double-precision oracles.

TEST(PrimitiveGradient, Dense) { EXPECT_LT(oracle::dense_error(100, 100), 1e-4); }
TEST(PrimitiveGradient, Conv2d) { EXPECT_LT(oracle::conv2d_error(200, 100), 1e-4); }
TEST(PrimitiveGradient, ReluAwayFromKink) { EXPECT_LT(oracle::relu_error(300, 100), 1e-4); }
TEST(PrimitiveGradient, MaxPoolAwayFromTies) { EXPECT_LT(oracle::maxpool_error(400, 100), 1e-4); }
TEST(PrimitiveGradient, SoftmaxCrossEntropy) { EXPECT_LT(oracle::softmax_cross_entropy_error(500, 100), 1e-4); }

TEST(Ops, ReluDerivativeAtZeroIsZero) {
    Tape tape;
    Var x = tape.leaf(vec({0.0f, 1.0f, -1.0f}));
    tape.backward(ops::sum(ops::relu(x)));
    EXPECT_EQ(tape.grad(x)[0], 0.0f);
    EXPECT_EQ(tape.grad(x)[1], 1.0f);
    EXPECT_EQ(tape.grad(x)[2], 0.0f);
}

TEST(Ops, MaxPoolTieGoesToLowestIndex) {
    Tape tape;
    Var x = tape.leaf(Tensor(Shape{1, 1, 2, 2}, std::vector<float>{5, 5, 5, 5}));
    tape.backward(ops::sum(ops::maxpool2d(x, 2, 2)));
    const Tensor& g = tape.grad(x);
    EXPECT_EQ(g[0], 1.0f);
    EXPECT_EQ(g[1] + g[2] + g[3], 0.0f);
}

TEST(Ops, DropoutIsSeededAndInverted) {
    Tape tape;
    Var x = tape.constant(Tensor(Shape{1000}, 1.0f));
    const Tensor a = tape.value(ops::dropout(x, 0.5, 3));
    const Tensor b = tape.value(ops::dropout(x, 0.5, 3));
    EXPECT_EQ(a.storage(), b.storage());
    for (float v : a.storage()) EXPECT_TRUE(v == 0.0f || v == 2.0f);
}
