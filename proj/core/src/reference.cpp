#include "efcn/reference.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace efcn {

namespace {

struct Act {
    std::vector<double> v;
    int c = 0, h = 0, w = 0;
    std::int64_t features = 0;
};

}  // namespace

std::vector<double> to_double(const ParamVector& theta) {
    return std::vector<double>(theta.storage().begin(), theta.storage().end());
}

namespace {

std::vector<double> run(const ModelSpec& model, std::span<const double> theta, const Tensor& x, double* margin) {
    if (theta.size() != param_count(model)) throw ShapeError("reference_forward: parameter count mismatch");
    const auto n = x.dim(0);
    const auto in = model.input;
    std::vector<double> logits;
    logits.reserve(static_cast<std::size_t>(n * model.classes));

    for (std::int64_t b = 0; b < n; ++b) {
        Act a;
        a.c = in.channels;
        a.h = in.height;
        a.w = in.width;
        a.features = in.size();
        a.v.assign(x.ptr() + b * in.size(), x.ptr() + (b + 1) * in.size());
        std::size_t off = 0;
        for (const auto& layer : model.layers) {
            if (const auto* cv = std::get_if<Conv>(&layer)) {
                const auto& s = cv->spec;
                const int ho = (a.h + 2 * s.p - s.k) / s.s + 1;
                const int wo = (a.w + 2 * s.p - s.k) / s.s + 1;
                const double* wt = theta.data() + off;
                const double* bias = wt + static_cast<std::size_t>(s.c_out) * s.c_in * s.k * s.k;
                std::vector<double> out(static_cast<std::size_t>(s.c_out) * ho * wo);
                for (int co = 0; co < s.c_out; ++co)
                    for (int i = 0; i < ho; ++i)
                        for (int j = 0; j < wo; ++j) {
                            double acc = bias[co];
                            for (int ci = 0; ci < s.c_in; ++ci)
                                for (int u = 0; u < s.k; ++u)
                                    for (int t = 0; t < s.k; ++t) {
                                        const int r = i * s.s - s.p + u;
                                        const int q = j * s.s - s.p + t;
                                        if (r < 0 || r >= a.h || q < 0 || q >= a.w) continue;
                                        acc += wt[((co * s.c_in + ci) * s.k + u) * s.k + t] *
                                               a.v[(static_cast<std::size_t>(ci) * a.h + r) * a.w + q];
                                    }
                            out[(static_cast<std::size_t>(co) * ho + i) * wo + j] = acc;
                        }
                off += static_cast<std::size_t>(s.c_out) * s.c_in * s.k * s.k + s.c_out;
                a.v = std::move(out);
                a.c = s.c_out;
                a.h = ho;
                a.w = wo;
                a.features = std::int64_t{a.c} * a.h * a.w;
            } else if (const auto* d = std::get_if<Dense>(&layer)) {
                const double* wt = theta.data() + off;
                const double* bias = wt + static_cast<std::size_t>(d->out) * d->in;
                std::vector<double> out(static_cast<std::size_t>(d->out));
                for (int o = 0; o < d->out; ++o) {
                    double acc = bias[o];
                    for (int k = 0; k < d->in; ++k) acc += wt[static_cast<std::size_t>(o) * d->in + k] * a.v[k];
                    out[o] = acc;
                }
                off += static_cast<std::size_t>(d->out) * d->in + d->out;
                a.v = std::move(out);
                a.features = d->out;
                if (d->out_shape) {
                    a.c = d->out_shape->channels;
                    a.h = d->out_shape->height;
                    a.w = d->out_shape->width;
                }
            } else if (std::holds_alternative<ReLU>(layer)) {
                for (auto& v : a.v) {
                    if (margin) *margin = std::min(*margin, std::abs(v));
                    v = std::max(v, 0.0);
                }
            } else if (const auto* mp = std::get_if<MaxPool>(&layer)) {
                const int ho = (a.h - mp->window) / mp->stride + 1;
                const int wo = (a.w - mp->window) / mp->stride + 1;
                std::vector<double> out(static_cast<std::size_t>(a.c) * ho * wo);
                for (int c = 0; c < a.c; ++c)
                    for (int i = 0; i < ho; ++i)
                        for (int j = 0; j < wo; ++j) {
                            double best = -INFINITY, second = -INFINITY;
                            for (int u = 0; u < mp->window; ++u)
                                for (int t = 0; t < mp->window; ++t) {
                                    const double v = a.v[(static_cast<std::size_t>(c) * a.h + i * mp->stride + u) * a.w +
                                                         j * mp->stride + t];
                                    if (v > best) {
                                        second = best;
                                        best = v;
                                    } else if (v > second) {
                                        second = v;
                                    }
                                }
                            if (margin && best > 0.0) *margin = std::min(*margin, best - second);
                            out[(static_cast<std::size_t>(c) * ho + i) * wo + j] = best;
                        }
                a.v = std::move(out);
                a.h = ho;
                a.w = wo;
                a.features = std::int64_t{a.c} * ho * wo;
            }
        }
        logits.insert(logits.end(), a.v.begin(), a.v.end());
    }
    return logits;
}

}  // namespace

std::vector<double> reference_forward(const ModelSpec& model, std::span<const double> theta, const Tensor& x) {
    return run(model, theta, x, nullptr);
}

double kink_margin(const ModelSpec& model, std::span<const double> theta, const Tensor& x) {
    double m = INFINITY;
    run(model, theta, x, &m);
    return m;
}

double reference_loss(const ModelSpec& model, std::span<const double> theta, const Tensor& x,
                      std::span<const int> labels) {
    const auto logits = reference_forward(model, theta, x);
    const auto c = static_cast<std::size_t>(model.classes);
    double total = 0.0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        const double* row = logits.data() + b * c;
        const double m = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - m);
        total += m + std::log(z) - row[labels[b]];
    }
    return total / static_cast<double>(labels.size());
}

}  // namespace efcn
