#include "efcn/ops.hpp"

#include "efcn/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

namespace efcn::ops {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXf>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXf>;

Tape& tape_of(Var a) {
    if (!a.tape) throw Error("variable is not attached to a tape");
    return *a.tape;
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw Error("operands live on different tapes");
}

void accumulate(Tape& t, std::size_t id, std::span<const float> g) {
    if (!t.requires_grad(id)) return;
    auto dst = t.grad_buffer(id).data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

bool is_scalar(const Tensor& t) { return t.rank() == 0; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
}

}  // namespace

Var slice(Var flat, std::size_t offset, Shape shape) {
    Tape& t = tape_of(flat);
    const Tensor& src = t.value(flat);
    const auto n = static_cast<std::size_t>(numel(shape));
    if (offset + n > src.size()) throw ShapeError("slice out of range");
    std::vector<float> data(src.data().begin() + offset, src.data().begin() + offset + n);
    const std::size_t in = flat.id;
    return t.record(Tensor(std::move(shape), std::move(data)), {in}, [in, offset](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(in)) return;
        const auto g = tp.upstream(self)->data();
        auto dst = tp.grad_buffer(in).data().subspan(offset, g.size());
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
}

Var reshape(Var x, Shape shape) {
    Tape& t = tape_of(x);
    const std::size_t in = x.id;
    return t.record(t.value(x).reshaped(std::move(shape)), {in},
                    [in](Tape& tp, std::size_t self) { accumulate(tp, in, tp.upstream(self)->data()); });
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    require_same_shape(va, vb, "add");
    const std::size_t ia = a.id, ib = b.id;
    auto back = [ia, ib](Tape& tp, std::size_t self) {
        const auto g = tp.upstream(self)->data();
        accumulate(tp, ia, g);
        accumulate(tp, ib, g);
    };
    if (is_scalar(va)) return t.record_scalar(t.scalar(a) + t.scalar(b), {ia, ib}, back);
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
    return t.record(std::move(out), {ia, ib}, back);
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = tape_of(a);
    const Tensor& va = t.value(a);
    const Tensor& vb = t.value(b);
    require_same_shape(va, vb, "mul");
    const std::size_t ia = a.id, ib = b.id;
    auto back = [ia, ib](Tape& tp, std::size_t self) {
        const auto g = tp.upstream(self)->data();
        const Tensor& xa = tp.value(ia);
        const Tensor& xb = tp.value(ib);
        if (tp.requires_grad(ia)) {
            auto d = tp.grad_buffer(ia).data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * xb[i];
        }
        if (tp.requires_grad(ib)) {
            auto d = tp.grad_buffer(ib).data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * xa[i];
        }
    };
    if (is_scalar(va)) return t.record_scalar(t.scalar(a) * t.scalar(b), {ia, ib}, back);
    Tensor out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
    return t.record(std::move(out), {ia, ib}, back);
}

Var scale(Var a, double c) {
    Tape& t = tape_of(a);
    const Tensor& va = t.value(a);
    const std::size_t ia = a.id;
    auto back = [ia, c](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const auto g = tp.upstream(self)->data();
        auto d = tp.grad_buffer(ia).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += static_cast<float>(c * g[i]);
    };
    if (is_scalar(va)) return t.record_scalar(c * t.scalar(a), {ia}, back);
    Tensor out = va;
    for (auto& v : out.data()) v = static_cast<float>(c * v);
    return t.record(std::move(out), {ia}, back);
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    double s = 0.0;
    for (float v : t.value(a).data()) s += v;
    const std::size_t ia = a.id;
    return t.record_scalar(s, {ia}, [ia](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const float g = (*tp.upstream(self))[0];
        for (auto& d : tp.grad_buffer(ia).data()) d += g;
    });
}

Var weighted_sum(Var a, const Tensor& weights) {
    Tape& t = tape_of(a);
    const Tensor& va = t.value(a);
    if (va.size() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) s += static_cast<double>(va[i]) * static_cast<double>(weights[i]);
    const std::size_t ia = a.id;
    return t.record_scalar(s, {ia}, [ia, weights](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ia)) return;
        const float g = (*tp.upstream(self))[0];
        auto d = tp.grad_buffer(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * weights[i];
    });
}

Var dense(Var x, Var w, Var b) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    Tape& t = tape_of(x);
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vw.rank() != 2 || vb.rank() != 1 || vb.dim(0) != vw.dim(0)) {
        throw ShapeError("dense: expected w (out, in) and b (out), got " + to_string(vw.shape()) + " and " +
                         to_string(vb.shape()));
    }
    if (vx.rank() < 1) throw ShapeError("dense: input must be batched");
    const auto n = vx.dim(0);
    const auto out_dim = vw.dim(0);
    const auto in_dim = vw.dim(1);
    if (n == 0 || static_cast<std::int64_t>(vx.size()) != n * in_dim) {
        throw ShapeError("dense: input " + to_string(vx.shape()) + " does not flatten to (N, " +
                         std::to_string(in_dim) + ")");
    }
    Tensor y(Shape{n, out_dim});
    {
        ConstMapMat X(vx.ptr(), n, in_dim);
        ConstMapMat W(vw.ptr(), out_dim, in_dim);
        ConstMapVec B(vb.ptr(), out_dim);
        MapMat Y(y.ptr(), n, out_dim);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += B.transpose();
    }
    const std::size_t ix = x.id, iw = w.id, ib = b.id;
    return t.record(std::move(y), {ix, iw, ib}, [ix, iw, ib, n, in_dim, out_dim](Tape& tp, std::size_t self) {
        ConstMapMat dY(tp.upstream(self)->ptr(), n, out_dim);
        if (tp.requires_grad(iw)) {
            MapMat dW(tp.grad_buffer(iw).ptr(), out_dim, in_dim);
            ConstMapMat X(tp.value(ix).ptr(), n, in_dim);
            dW.noalias() += dY.transpose() * X;
        }
        if (tp.requires_grad(ib)) {
            MapVec dB(tp.grad_buffer(ib).ptr(), out_dim);
            dB += dY.colwise().sum().transpose();
        }
        if (tp.requires_grad(ix)) {
            MapMat dX(tp.grad_buffer(ix).ptr(), n, in_dim);
            ConstMapMat W(tp.value(iw).ptr(), out_dim, in_dim);
            dX.noalias() += dY * W;
        }
    });
}

namespace {

struct ConvGeometry {
    std::int64_t n, c_in, h, w, c_out, k, h_out, w_out;
    int stride, pad;
    std::int64_t patch() const { return c_in * k * k; }
    std::int64_t positions() const { return h_out * w_out; }
};

// cols[(ci*k + u)*k + v, img*P + oi*w_out + oj]
void im2col(const float* x, const ConvGeometry& g, float* cols) {
    const std::int64_t total = g.n * g.positions();
    for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
        for (std::int64_t u = 0; u < g.k; ++u) {
            for (std::int64_t v = 0; v < g.k; ++v) {
                float* row = cols + ((ci * g.k + u) * g.k + v) * total;
                for (std::int64_t img = 0; img < g.n; ++img) {
                    const float* plane = x + (img * g.c_in + ci) * g.h * g.w;
                    float* dst = row + img * g.positions();
                    for (std::int64_t oi = 0; oi < g.h_out; ++oi) {
                        const std::int64_t ii = oi * g.stride - g.pad + u;
                        for (std::int64_t oj = 0; oj < g.w_out; ++oj) {
                            const std::int64_t jj = oj * g.stride - g.pad + v;
                            const bool inside = ii >= 0 && ii < g.h && jj >= 0 && jj < g.w;
                            dst[oi * g.w_out + oj] = inside ? plane[ii * g.w + jj] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvGeometry& g, float* dx) {
    const std::int64_t total = g.n * g.positions();
    for (std::int64_t ci = 0; ci < g.c_in; ++ci) {
        for (std::int64_t u = 0; u < g.k; ++u) {
            for (std::int64_t v = 0; v < g.k; ++v) {
                const float* row = cols + ((ci * g.k + u) * g.k + v) * total;
                for (std::int64_t img = 0; img < g.n; ++img) {
                    float* plane = dx + (img * g.c_in + ci) * g.h * g.w;
                    const float* src = row + img * g.positions();
                    for (std::int64_t oi = 0; oi < g.h_out; ++oi) {
                        const std::int64_t ii = oi * g.stride - g.pad + u;
                        if (ii < 0 || ii >= g.h) continue;
                        for (std::int64_t oj = 0; oj < g.w_out; ++oj) {
                            const std::int64_t jj = oj * g.stride - g.pad + v;
                            if (jj < 0 || jj >= g.w) continue;
                            plane[ii * g.w + jj] += src[oi * g.w_out + oj];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    Tape& t = tape_of(x);
    const Tensor& vx = t.value(x);
    const Tensor& vw = t.value(w);
    const Tensor& vb = t.value(b);
    if (vx.rank() != 4) throw ShapeError("conv2d: input must be (N, C, H, W), got " + to_string(vx.shape()));
    if (vw.rank() != 4 || vw.dim(2) != vw.dim(3) || vw.dim(1) != vx.dim(1)) {
        throw ShapeError("conv2d: filter " + to_string(vw.shape()) + " incompatible with input " + to_string(vx.shape()));
    }
    if (vb.rank() != 1 || vb.dim(0) != vw.dim(0)) throw ShapeError("conv2d: bias must be (c_out)");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
    ConvGeometry g{};
    g.n = vx.dim(0);
    g.c_in = vx.dim(1);
    g.h = vx.dim(2);
    g.w = vx.dim(3);
    g.c_out = vw.dim(0);
    g.k = vw.dim(2);
    g.stride = stride;
    g.pad = pad;
    const auto span_h = g.h + 2 * pad - g.k;
    const auto span_w = g.w + 2 * pad - g.k;
    if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
        throw ShapeError("conv2d: (d_in + 2p - k) must be a non-negative multiple of the stride");
    }
    g.h_out = span_h / stride + 1;
    g.w_out = span_w / stride + 1;

    const std::int64_t total = g.n * g.positions();
    auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(g.patch() * total));
    im2col(vx.ptr(), g, cols->data());

    RowMat out(g.c_out, total);
    {
        ConstMapMat W(vw.ptr(), g.c_out, g.patch());
        ConstMapMat C(cols->data(), g.patch(), total);
        out.noalias() = W * C;
    }
    Tensor y(Shape{g.n, g.c_out, g.h_out, g.w_out});
    for (std::int64_t img = 0; img < g.n; ++img) {
        for (std::int64_t co = 0; co < g.c_out; ++co) {
            const float bias = vb[static_cast<std::size_t>(co)];
            const float* src = out.data() + co * total + img * g.positions();
            float* dst = y.ptr() + (img * g.c_out + co) * g.positions();
            for (std::int64_t p = 0; p < g.positions(); ++p) dst[p] = src[p] + bias;
        }
    }

    const std::size_t ix = x.id, iw = w.id, ib = b.id;
    return t.record(std::move(y), {ix, iw, ib}, [ix, iw, ib, g, cols, total](Tape& tp, std::size_t self) {
        const Tensor& up = *tp.upstream(self);
        // Gather dY into (c_out, N*P) to match the column layout.
        RowMat dy(g.c_out, total);
        for (std::int64_t img = 0; img < g.n; ++img) {
            for (std::int64_t co = 0; co < g.c_out; ++co) {
                const float* src = up.ptr() + (img * g.c_out + co) * g.positions();
                std::copy(src, src + g.positions(), dy.data() + co * total + img * g.positions());
            }
        }
        if (tp.requires_grad(iw)) {
            MapMat dW(tp.grad_buffer(iw).ptr(), g.c_out, g.patch());
            ConstMapMat C(cols->data(), g.patch(), total);
            dW.noalias() += dy * C.transpose();
        }
        if (tp.requires_grad(ib)) {
            MapVec dB(tp.grad_buffer(ib).ptr(), g.c_out);
            dB += dy.rowwise().sum();
        }
        if (tp.requires_grad(ix)) {
            ConstMapMat W(tp.value(iw).ptr(), g.c_out, g.patch());
            RowMat dcols = W.transpose() * dy;
            col2im_add(dcols.data(), g, tp.grad_buffer(ix).ptr());
        }
    });
}

Var relu(Var x) {
    Tape& t = tape_of(x);
    Tensor y = t.value(x);
    for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
    const std::size_t ix = x.id;
    return t.record(std::move(y), {ix}, [ix](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ix)) return;
        const auto g = tp.upstream(self)->data();
        const auto in = tp.value(ix).data();
        auto d = tp.grad_buffer(ix).data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (in[i] > 0.0f) d[i] += g[i];
        }
    });
}

Var maxpool2d(Var x, int window, int stride) {
    Tape& t = tape_of(x);
    const Tensor& vx = t.value(x);
    if (vx.rank() != 4) throw ShapeError("maxpool2d: input must be (N, C, H, W), got " + to_string(vx.shape()));
    if (window < 1 || stride < 1) throw ShapeError("maxpool2d: window and stride must be >= 1");
    const auto n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    if (h < window || w < window) throw ShapeError("maxpool2d: window larger than input");
    const auto ho = (h - window) / stride + 1;
    const auto wo = (w - window) / stride + 1;
    Tensor y(Shape{n, c, ho, wo});
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(y.size());
    std::size_t o = 0;
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const float* src = vx.ptr() + plane * h * w;
        for (std::int64_t oi = 0; oi < ho; ++oi) {
            for (std::int64_t oj = 0; oj < wo; ++oj, ++o) {
                std::int64_t best = (oi * stride) * w + oj * stride;
                for (int u = 0; u < window; ++u) {
                    for (int v = 0; v < window; ++v) {
                        const std::int64_t idx = (oi * stride + u) * w + oj * stride + v;
                        // Row-major scan with strict '>' keeps the lowest flat index on ties.
                        if (src[idx] > src[best]) best = idx;
                    }
                }
                y[o] = src[best];
                (*argmax)[o] = static_cast<std::uint32_t>(plane * h * w + best);
            }
        }
    }
    const std::size_t ix = x.id;
    return t.record(std::move(y), {ix}, [ix, argmax](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ix)) return;
        const auto g = tp.upstream(self)->data();
        auto d = tp.grad_buffer(ix).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[(*argmax)[i]] += g[i];
    });
}

Var dropout(Var x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must lie in [0, 1)");
    Tape& t = tape_of(x);
    if (rate == 0.0) return reshape(x, t.value(x).shape());
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    const float scale_kept = static_cast<float>(1.0 / (1.0 - rate));
    auto mask = std::make_shared<std::vector<float>>(t.value(x).size());
    for (auto& m : *mask) m = keep(rng) ? scale_kept : 0.0f;
    Tensor y = t.value(x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= (*mask)[i];
    const std::size_t ix = x.id;
    return t.record(std::move(y), {ix}, [ix, mask](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(ix)) return;
        const auto g = tp.upstream(self)->data();
        auto d = tp.grad_buffer(ix).data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*mask)[i];
    });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    Tape& t = tape_of(logits);
    const Tensor& z = t.value(logits);
    if (z.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be (N, classes)");
    const auto n = z.dim(0), c = z.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n || n == 0) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    }
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * c));
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        const float* row = z.ptr() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(s);
        for (std::int64_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(static_cast<double>(row[j]) - lse);
        total += lse - static_cast<double>(row[y]);
    }
    const double mean = total / static_cast<double>(n);
    std::vector<int> lab(labels.begin(), labels.end());
    const std::size_t iz = logits.id;
    return t.record_scalar(mean, {iz}, [iz, probs, lab = std::move(lab), n, c](Tape& tp, std::size_t self) {
        if (!tp.requires_grad(iz)) return;
        const double g = (*tp.upstream(self))[0] / static_cast<double>(n);
        auto d = tp.grad_buffer(iz).data();
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                const double target = (j == lab[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
                d[i * c + j] += static_cast<float>(g * ((*probs)[i * c + j] - target));
            }
        }
    });
}

}  // namespace efcn::ops
