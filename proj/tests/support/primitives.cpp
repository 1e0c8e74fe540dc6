#include "primitives.hpp"

#include "oracles.hpp"

#include <efcn/ops.hpp>
#include <efcn/tape.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

using namespace efcn;

namespace oracle {

namespace {

double rel(std::span<const double> a, std::span<const double> b) {
    double num = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::sqrt(std::max(na, nb));
    return den == 0 ? 0 : std::sqrt(num) / den;
}

struct PrimitiveCase {
    std::vector<Tensor> inputs;
    // Engine: records the primitive on `tape` and returns the loss node.
    std::function<Var(Tape&, const std::vector<Var>&)> engine;
    // Oracle: the same loss in double.
    std::function<double(const std::vector<std::vector<double>>&)> oracle;
};

double primitive_error(const PrimitiveCase& c) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : c.inputs) leaves.push_back(tape.leaf(t));
    Var out = c.engine(tape, leaves);
    tape.backward(out);
    std::vector<std::vector<double>> point;
    for (const auto& t : c.inputs) point.push_back(oracle::to_double(t.data()));
    double worst = 0.0;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        auto fd = oracle::fd_grad(
            [&](std::span<const double> p) {
                auto q = point;
                q[i].assign(p.begin(), p.end());
                return c.oracle(q);
            },
            point[i], 1e-6);
        const auto g = oracle::to_double(tape.grad(leaves[i]).data());
        worst = std::max(worst, rel(g, fd));
    }
    return worst;
}

double dot_d(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

Tensor random_tensor(oracle::Gen& gen, Shape s) { return Tensor(s, gen.floats(static_cast<std::size_t>(numel(s)))); }

// Values whose pairwise gaps are at least `gap`, shuffled.
Tensor separated_tensor(oracle::Gen& gen, Shape s, double gap) {
    const auto n = static_cast<std::size_t>(numel(s));
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>((static_cast<double>(i) - n / 2.0) * gap + gen.uniform(0.0, gap / 4));
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(gen.integer(0, static_cast<int>(i) - 1))]);
    return Tensor(s, v);
}

}  // namespace

double dense_error(std::uint64_t seed, int trials) {
    oracle::Gen gen(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = gen.integer(1, 4), in = gen.integer(1, 6), out = gen.integer(1, 5);
        const Tensor r = random_tensor(gen, Shape{n, out});
        PrimitiveCase c{{random_tensor(gen, Shape{n, in}), random_tensor(gen, Shape{out, in}), random_tensor(gen, Shape{out})},
                        [&](Tape&, const std::vector<Var>& v) { return ops::weighted_sum(ops::dense(v[0], v[1], v[2]), r); },
                        [&](const std::vector<std::vector<double>>& p) {
                            double s = 0;
                            for (int a = 0; a < n; ++a)
                                for (int o = 0; o < out; ++o) {
                                    double y = p[2][o];
                                    for (int i = 0; i < in; ++i) y += p[0][a * in + i] * p[1][o * in + i];
                                    s += r[a * out + o] * y;
                                }
                            return s;
                        }};
        worst = std::max(worst, primitive_error(c));
    }
    return worst;
}

double conv2d_error(std::uint64_t seed, int trials) {
    oracle::Gen gen(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = gen.integer(1, 2), ci = gen.integer(1, 3), co = gen.integer(1, 3), d = gen.integer(3, 6);
        const int k = gen.integer(1, 3), p = gen.integer(0, k - 1);
        const int s = (d + 2 * p - k) % 2 == 0 ? gen.integer(1, 2) : 1;
        const int dout = (d + 2 * p - k) / s + 1;
        const Tensor r = random_tensor(gen, Shape{n, co, dout, dout});
        PrimitiveCase c{{random_tensor(gen, Shape{n, ci, d, d}), random_tensor(gen, Shape{co, ci, k, k}), random_tensor(gen, Shape{co})},
                        [&](Tape&, const std::vector<Var>& v) {
                            return ops::weighted_sum(ops::conv2d(v[0], v[1], v[2], s, p), r);
                        },
                        [&](const std::vector<std::vector<double>>& q) {
                            double total = 0;
                            const auto per = static_cast<std::size_t>(ci) * d * d;
                            const auto per_out = static_cast<std::size_t>(co) * dout * dout;
                            for (int a = 0; a < n; ++a) {
                                oracle::Image x{ci, d, d, std::vector<double>(q[0].begin() + a * per, q[0].begin() + (a + 1) * per)};
                                const auto y = oracle::conv(x, q[1], q[2], co, k, s, p);
                                total += dot_d(y.v, oracle::to_double(std::span<const float>(r.ptr() + a * per_out, per_out)));
                            }
                            return total;
                        }};
        worst = std::max(worst, primitive_error(c));
    }
    return worst;
}

double relu_error(std::uint64_t seed, int trials) {
    oracle::Gen gen(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const int len = gen.integer(1, 20);
        std::vector<float> x(len);
        for (auto& v : x) v = static_cast<float>((gen.integer(0, 1) ? 1 : -1) * gen.uniform(1e-2, 2.0));
        const Tensor r = random_tensor(gen, Shape{len});
        PrimitiveCase c{{Tensor(Shape{len}, x)},
                        [&](Tape&, const std::vector<Var>& v) { return ops::weighted_sum(ops::relu(v[0]), r); },
                        [&](const std::vector<std::vector<double>>& p) {
                            double s = 0;
                            for (int i = 0; i < len; ++i) s += r[i] * std::max(p[0][i], 0.0);
                            return s;
                        }};
        worst = std::max(worst, primitive_error(c));
    }
    return worst;
}

double maxpool_error(std::uint64_t seed, int trials) {
    oracle::Gen gen(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = gen.integer(1, 2), ch = gen.integer(1, 3), h = 2 * gen.integer(1, 3);
        const Tensor x = separated_tensor(gen, Shape{n, ch, h, h}, 2e-2);
        const Tensor r = random_tensor(gen, Shape{n, ch, h / 2, h / 2});
        PrimitiveCase c{{x},
                        [&](Tape&, const std::vector<Var>& v) { return ops::weighted_sum(ops::maxpool2d(v[0], 2, 2), r); },
                        [&](const std::vector<std::vector<double>>& p) {
                            double total = 0;
                            const auto per = static_cast<std::size_t>(ch) * h * h;
                            for (int a = 0; a < n; ++a) {
                                oracle::Image img{ch, h, h, std::vector<double>(p[0].begin() + a * per, p[0].begin() + (a + 1) * per)};
                                const auto y = oracle::maxpool(img, 2, 2);
                                for (std::size_t i = 0; i < y.v.size(); ++i) total += r[a * y.v.size() + i] * y.v[i];
                            }
                            return total;
                        }};
        worst = std::max(worst, primitive_error(c));
    }
    return worst;
}

double softmax_cross_entropy_error(std::uint64_t seed, int trials) {
    oracle::Gen gen(seed);
    double worst = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        const int n = gen.integer(1, 6), k = gen.integer(2, 6);
        std::vector<int> labels(n);
        for (auto& l : labels) l = gen.integer(0, k - 1);
        PrimitiveCase c{{random_tensor(gen, Shape{n, k})},
                        [&](Tape&, const std::vector<Var>& v) { return ops::softmax_cross_entropy(v[0], labels); },
                        [&](const std::vector<std::vector<double>>& p) { return oracle::cross_entropy(p[0], k, labels); }};
        worst = std::max(worst, primitive_error(c));
    }
    return worst;
}

}  // namespace oracle
