#include "oracles.hpp"

#include <efcn/embed.hpp>
#include <efcn/errors.hpp>
#include <efcn/ops.hpp>
#include <efcn/probes.hpp>
#include <efcn/train.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace efcn;

namespace {

// The toy objectives ignore their batch, but probes insist on a non-empty one.
const Batch kNoBatch{Tensor(Shape{1, 1}), {0}};

Tensor vec(std::vector<float> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    return Tensor(Shape{n}, std::move(v));
}

LossFn diag_quadratic(std::vector<float> d, double c = 1.0) {
    return [d, c](Tape& t, Var theta, const Batch&) {
        Var w = t.constant(vec(d));
        return ops::scale(ops::sum(ops::mul(w, ops::mul(theta, theta))), 0.5 * c);
    };
}

// Linear classifier on flat inputs of width `n`.
ModelSpec linear_model(int n, int classes) {
    ModelSpec m;
    m.input = {1, 1, n};
    m.layers = {Flatten{}, Dense{n, classes, std::nullopt}};
    m.classes = classes;
    return m;
}

Dataset one_hot_set(int classes, int per_class, float scale) {
    Dataset d;
    d.classes = classes;
    const int n = classes * per_class;
    d.images = Tensor(Shape{n, 1, 1, classes});
    for (int i = 0; i < n; ++i) {
        const int y = i % classes;
        d.labels.push_back(y);
        d.images.storage()[static_cast<std::size_t>(i) * classes + y] = scale;
    }
    return d;
}

ParamVector identity_dense(const ModelSpec& m, int n, float diag) {
    ParamVector t = zero_params(m);
    auto w = t.view(t.segment("dense1.weight"));
    for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i) * n + i] = diag;
    return t;
}

ModelSpec tiny_conv_net() {
    ModelSpec m;
    m.input = {1, 4, 4};
    m.layers = {Conv{{1, 2, 3, 1, 1}}, ReLU{}, MaxPool{2, 2}, Flatten{}, Dense{8, 3, std::nullopt}};
    m.classes = 3;
    return m;
}

}  // namespace

TEST(GradNorm, Pythagoras) {
    const LossFn half = [](Tape&, Var theta, const Batch&) { return ops::scale(ops::sum(ops::mul(theta, theta)), 0.5); };
    EXPECT_NEAR(grad_norm(half, ParamVector(std::vector<float>{3, 4}), kNoBatch), 5.0, 1e-6);
}

TEST(GradNorm, ScalesWithLoss) {
    oracle::Gen gen(1);
    for (int i = 0; i < 20; ++i) {
        const ParamVector theta(gen.floats(6));
        const double c = gen.uniform(-5, 5);
        const double a = grad_norm(diag_quadratic({1, 2, 3, 4, 5, 6}), theta, kNoBatch);
        const double b = grad_norm(diag_quadratic({1, 2, 3, 4, 5, 6}, c), theta, kNoBatch);
        EXPECT_NEAR(b, std::abs(c) * a, 1e-5 * (1 + b));
    }
}

TEST(GradNorm, VanishesAtInterpolatingMinimum) {
    const ModelSpec m = linear_model(2, 2);
    const Dataset d = one_hot_set(2, 1, 1.0f);
    TrainConfig c;
    c.lr = 100.0;
    c.batch_size = 2;
    c.epochs = 3;
    const auto r = train(m, TrainState{zero_params(m), {}, 0}, d, d, c);
    const ParamVector& theta = r.final_state.theta;
    ASSERT_LT(oracle::loss(m, oracle::to_double(theta.values()), d.all()), 1e-10);
    EXPECT_LE(grad_norm(m, theta, d.all()), 1e-4);
}

TEST(LambdaMax, KnownDiagonalSpectrum) {
    PowerIterationConfig cfg;
    cfg.max_iters = 500;
    cfg.tol = 1e-10;
    const auto r = lambda_max(diag_quadratic({3, 1, -0.5f}), ParamVector(std::vector<float>{0, 0, 0}), kNoBatch, cfg);
    EXPECT_NEAR(r.lambda, 3.0, 1e-6);
    EXPECT_GT(r.iterations, 0);
    EXPECT_LE(r.residual, 1e-3);
}

TEST(LambdaMax, ScalesWithLoss) {
    PowerIterationConfig cfg;
    cfg.max_iters = 500;
    cfg.tol = 1e-9;
    const ParamVector theta(std::vector<float>{0.5f, -1, 2});
    const double a = lambda_max(diag_quadratic({2, -1, 0.25f}), theta, kNoBatch, cfg).lambda;
    for (double c : {0.5, 3.0, 10.0}) {
        const double b = lambda_max(diag_quadratic({2, -1, 0.25f}, c), theta, kNoBatch, cfg).lambda;
        EXPECT_NEAR(b, c * a, 1e-3 * std::abs(c * a));
    }
}

TEST(LambdaMax, NonPositiveToleranceRejected) {
    PowerIterationConfig cfg;
    cfg.tol = 0;
    EXPECT_THROW(lambda_max(diag_quadratic({1}), ParamVector(std::vector<float>{1}), kNoBatch, cfg), Error);
}

TEST(LambdaMax, MatchesDenseFiniteDifferenceHessian) {
    const ModelSpec m = tiny_conv_net();
    ASSERT_LE(param_count(m), 200u);
    oracle::Gen gen(11);
    int done = 0;
    while (done < 5) {
        const ParamVector theta = init_params(m, gen.seed());
        const Batch b = gen.batch(m, 4);
        const auto th = oracle::to_double(theta.values());
        if (oracle::kink_margin(m, th, b.images) < 1e-2) continue;
        const auto f = [&](std::span<const double> x) { return oracle::loss(m, x, b); };
        const auto h = oracle::fd_hessian(f, th, 1e-4);
        const auto ev = oracle::sym_eigenvalues(h, th.size());
        const double want = std::abs(ev.front()) > std::abs(ev.back()) ? ev.front() : ev.back();
        PowerIterationConfig cfg;
        cfg.max_iters = 2000;
        cfg.tol = 1e-7;
        cfg.seed = gen.seed();
        const auto r = lambda_max(m, theta, b, cfg);
        EXPECT_NEAR(r.lambda, want, 1e-2 * std::abs(want)) << "instance " << done;
        ++done;
    }
}

TEST(Evaluate, PerfectAndConstantLogits) {
    const ModelSpec m = linear_model(10, 10);
    const Dataset d = one_hot_set(10, 7, 1.0f);
    const Evaluation perfect = evaluate(m, identity_dense(m, 10, 5.0f), d);
    EXPECT_EQ(perfect.accuracy, 1.0);
    const Evaluation flat = evaluate(m, zero_params(m), d);
    EXPECT_EQ(flat.accuracy, 0.1);
    EXPECT_NEAR(flat.loss, std::log(10.0), 1e-6);
}

TEST(Evaluate, ChunkingDoesNotMatter) {
    auto [tr, te] = gen_synthetic(SyntheticConfig{10, 16, 7, 50, 37, 0.3}, 2);
    const ModelSpec m = build_vanilla_cnn(2, te.shape(), te.classes);
    const ParamVector theta = init_params(m, 1);
    const Evaluation a = evaluate(m, theta, te, 1000);
    const Evaluation b = evaluate(m, theta, te, 5);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_NEAR(a.loss, b.loss, 1e-9);
}

TEST(Accuracy, InvariantUnderMonotoneTransform) {
    oracle::Gen gen(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = gen.integer(1, 20), c = gen.integer(2, 8);
        Tensor logits(Shape{n, c});
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(gen.integer(0, c - 1));
        for (float& v : logits.storage()) v = static_cast<float>(gen.normal());
        Tensor moved = logits;
        const double a = gen.uniform(0.1, 3), s = gen.uniform(-2, 2);
        for (float& v : moved.storage()) v = static_cast<float>(std::exp(a * v) + s);
        EXPECT_EQ(accuracy(logits, labels), accuracy(moved, labels));
    }
}

TEST(Accuracy, TiesGoToLowestClass) {
    EXPECT_EQ(argmax_row(std::vector<float>{1, 3, 3, 0}), 1);
    EXPECT_EQ(argmax_row(std::vector<float>{0, 0, 0}), 0);
}

TEST(MaskedAccuracy, AtEmbedding) {
    auto [tr, te] = gen_synthetic(SyntheticConfig{10, 16, 7, 300, 200, 0.3}, 4);
    const ModelSpec cnn = build_vanilla_cnn(4, tr.shape(), tr.classes);
    TrainConfig c;
    c.batch_size = 20;
    c.epochs = 2;
    const auto r = train(cnn, TrainState{init_params(cnn, 1), {}, 0}, tr, te, c);
    const Embedding e = embed(cnn, r.final_state.theta);
    const double cnn_acc = evaluate(cnn, r.final_state.theta, te).accuracy;
    EXPECT_EQ(masked_accuracy(e.fcn_spec, e.theta, e.map.mask(), Keep::local, te), cnn_acc);
    EXPECT_EQ(masked_accuracy(e.fcn_spec, e.theta, e.map.mask(), Keep::off_local, te), 0.1);

    // The off-local-only model ignores its input.
    const ParamVector off = mask_apply(e.theta, e.map.mask(), Keep::off_local);
    const Tensor logits = forward(e.fcn_spec, off, te.all().images);
    const auto cls = static_cast<std::size_t>(te.classes);
    for (std::size_t i = 1; i < te.size(); ++i) {
        for (std::size_t k = 0; k < cls; ++k) EXPECT_EQ(logits.storage()[i * cls + k], logits.storage()[k]);
    }
}

TEST(Heatmap, EmbeddedRowShowsReceptiveField) {
    ModelSpec m;
    m.input = {2, 5, 5};
    m.layers = {Conv{{2, 3, 3, 1, 1}}, Flatten{}};
    m.classes = 75;
    oracle::Gen gen(7);
    const ParamVector theta(param_layout(m), gen.floats(param_count(m)));
    const Embedding e = embed(m, theta);
    const auto w = theta.view(theta.segment("conv0.weight"));
    for (int co = 0; co < 3; ++co) {
        for (int io = 0; io < 5; ++io) {
            for (int jo = 0; jo < 5; ++jo) {
                const Heatmap h = filter_heatmap(e.theta, e.map, 0, co, io, jo);
                ASSERT_EQ(h.channels, 2);
                ASSERT_EQ(h.height, 5);
                for (int ci = 0; ci < 2; ++ci) {
                    for (int i = 0; i < 5; ++i) {
                        for (int j = 0; j < 5; ++j) {
                            const double got = h.values[(static_cast<std::size_t>(ci) * 5 + i) * 5 + j];
                            const int u = i - io + 1, v = j - jo + 1;
                            if (u < 0 || u > 2 || v < 0 || v > 2) {
                                EXPECT_EQ(got, std::log(kHeatmapFloor));
                            } else {
                                const double cw = w[((static_cast<std::size_t>(co) * 2 + ci) * 3 + u) * 3 + v];
                                EXPECT_DOUBLE_EQ(got, std::log(std::abs(cw) + kHeatmapFloor));
                            }
                        }
                    }
                }
            }
        }
    }
}

TEST(Heatmap, RawRowRoundTrips) {
    ModelSpec m;
    m.input = {2, 7, 7};
    m.layers = {Conv{{2, 2, 3, 2, 0}}, Flatten{}};
    m.classes = 18;
    oracle::Gen gen(8);
    const ParamVector theta(param_layout(m), gen.floats(param_count(m)));
    const Embedding e = embed(m, theta);
    ParamVector moved = e.theta;
    for (float& v : moved.values()) v += static_cast<float>(gen.normal(0.1));
    const auto dense = moved.view(moved.segment("dense0.weight"));
    for (int co = 0; co < 2; ++co) {
        for (int p = 0; p < 9; ++p) {
            const Heatmap h = filter_heatmap(moved, e.map, 0, co, p / 3, p % 3);
            const std::size_t row = static_cast<std::size_t>(co) * 9 + p;
            ASSERT_EQ(h.raw.size(), 98u);
            for (std::size_t c = 0; c < 98; ++c) EXPECT_EQ(h.raw[c], dense[row * 98 + c]);
        }
    }
}

TEST(Heatmap, OutOfRangeIndex) {
    ModelSpec m;
    m.input = {1, 4, 4};
    m.layers = {Conv{{1, 1, 3, 1, 0}}, Flatten{}};
    m.classes = 4;
    const Embedding e = embed(m, init_params(m, 1));
    EXPECT_THROW(filter_heatmap(e.theta, e.map, 0, 1, 0, 0), Error);
    EXPECT_THROW(filter_heatmap(e.theta, e.map, 0, 0, 2, 0), Error);
    EXPECT_THROW(filter_heatmap(e.theta, e.map, 3, 0, 0, 0), Error);
}
