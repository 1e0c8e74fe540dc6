#include "efcn/probes.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace efcn {

int argmax_row(std::span<const float> logits) {
    int best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j) {
        if (logits[j] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    }
    return best;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<std::int64_t>(labels.size())) {
        throw ShapeError("accuracy: logits and labels disagree");
    }
    if (labels.empty()) return 0.0;
    const auto c = static_cast<std::size_t>(logits.dim(1));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (argmax_row(logits.data().subspan(i * c, c)) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Evaluation evaluate(const ModelSpec& model, const ParamVector& theta, const Dataset& data, std::size_t chunk) {
    if (data.size() == 0) throw Error("evaluate: empty dataset");
    chunk = std::max<std::size_t>(chunk, 1);
    std::size_t hits = 0;
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < data.size(); lo += chunk) {
        const std::size_t hi = std::min(data.size(), lo + chunk);
        const Batch b = data.range(lo, hi);
        const Tensor logits = forward(model, theta, b.images);
        const auto c = static_cast<std::size_t>(logits.dim(1));
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto row = logits.data().subspan(i * c, c);
            if (argmax_row(row) == b.labels[i]) ++hits;
            double mx = row[0];
            for (float v : row) mx = std::max(mx, static_cast<double>(v));
            double s = 0.0;
            for (float v : row) s += std::exp(static_cast<double>(v) - mx);
            loss_sum += mx + std::log(s) - static_cast<double>(row[static_cast<std::size_t>(b.labels[i])]);
        }
    }
    if (!std::isfinite(loss_sum)) throw NonFiniteError(-1, "evaluate: non-finite loss");
    const auto n = static_cast<double>(data.size());
    return Evaluation{static_cast<double>(hits) / n, loss_sum / n};
}

double grad_norm(const LossFn& loss, const ParamVector& theta, const Batch& probe) {
    if (probe.size() == 0) throw Error("grad_norm: empty probe set");
    return norm(grad(loss, theta, probe).values());
}

double grad_norm(const ModelSpec& model, const ParamVector& theta, const Batch& probe) {
    return grad_norm(model_loss(model), theta, probe);
}

PowerIterationResult lambda_max(const LossFn& loss, const ParamVector& theta, const Batch& probe,
                                const PowerIterationConfig& cfg) {
    if (!(cfg.tol > 0.0)) throw Error("lambda_max: tol must be positive");
    if (cfg.max_iters < 1) throw Error("lambda_max: max_iters must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    ParamVector v = ParamVector::zeros_like(theta);
    for (auto& x : v.values()) x = static_cast<float>(gauss(rng));

    auto normalize = [](ParamVector& x) {
        const double n = norm(x.values());
        if (!(n > 0.0) || !std::isfinite(n)) throw Error("lambda_max: power iterate collapsed to zero");
        for (auto& e : x.values()) e = static_cast<float>(e / n);
    };
    normalize(v);

    PowerIterationResult r;
    double prev = 0.0;
    for (int it = 1; it <= cfg.max_iters; ++it) {
        ParamVector hv = hvp(loss, theta, probe, v, cfg.hvp);
        const double lambda = dot(v.values(), hv.values());
        double res = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double d = static_cast<double>(hv[i]) - lambda * v[i];
            res += d * d;
        }
        r.lambda = lambda;
        r.residual = std::sqrt(res);
        r.iterations = it;
        r.vector = v;
        if (it > 1 && std::abs(lambda - prev) <= cfg.tol * std::max(1.0, std::abs(lambda))) {
            r.converged = true;
            break;
        }
        prev = lambda;
        v = std::move(hv);
        normalize(v);
    }
    return r;
}

PowerIterationResult lambda_max(const ModelSpec& model, const ParamVector& theta, const Batch& probe,
                                const PowerIterationConfig& cfg) {
    return lambda_max(model_loss(model), theta, probe, cfg);
}

double masked_accuracy(const ModelSpec& model, const ParamVector& theta, const LocalMask& mask, Keep keep,
                       const Dataset& test) {
    return evaluate(model, mask_apply(theta, mask, keep), test).accuracy;
}

Heatmap filter_heatmap(const ParamVector& theta_efcn, const EmbeddingMap& map, int layer, int out_channel, int i_o,
                       int j_o) {
    const TiedLayer& t = map.tied_layer(layer);
    if (out_channel < 0 || out_channel >= t.out.channels || i_o < 0 || i_o >= t.out.height || j_o < 0 ||
        j_o >= t.out.width) {
        throw Error("filter_heatmap: output index (" + std::to_string(out_channel) + ", " + std::to_string(i_o) + ", " +
                    std::to_string(j_o) + ") outside layer output " + std::to_string(t.out.channels) + "x" +
                    std::to_string(t.out.height) + "x" + std::to_string(t.out.width));
    }
    if (theta_efcn.size() != map.fcn_size()) throw ShapeError("filter_heatmap: theta is not an eFCN vector");
    const auto in_size = static_cast<std::size_t>(t.in.size());
    const std::size_t row =
        (static_cast<std::size_t>(out_channel) * t.out.height + static_cast<std::size_t>(i_o)) * t.out.width +
        static_cast<std::size_t>(j_o);
    const auto src = theta_efcn.values().subspan(t.fcn_weight_offset + row * in_size, in_size);
    Heatmap h;
    h.channels = t.in.channels;
    h.height = t.in.height;
    h.width = t.in.width;
    h.raw.assign(src.begin(), src.end());
    h.values.resize(in_size);
    for (std::size_t i = 0; i < in_size; ++i) h.values[i] = std::log(std::abs(static_cast<double>(src[i])) + kHeatmapFloor);
    return h;
}

std::string to_string(ProbePhase phase) {
    return phase == ProbePhase::at_embedding ? "at_embedding" : "after_training";
}

ProbeReport probe_model(const std::string& name, int t_w, ProbePhase phase, const ModelSpec& model,
                        const ParamVector& theta, const Batch& probe_set, const Dataset& test, const LocalMask* mask,
                        const ProbeOptions& options) {
    ProbeReport r;
    r.model = name;
    r.t_w = t_w;
    r.phase = phase;
    r.test_accuracy = evaluate(model, theta, test).accuracy;
    if (options.gradient) r.grad_norm = grad_norm(model, theta, probe_set);
    if (options.hessian) {
        const auto p = lambda_max(model, theta, probe_set, options.power);
        r.lambda_max = p.lambda;
        r.lambda_iterations = p.iterations;
        r.lambda_residual = p.residual;
    }
    if (mask) {
        if (options.deviation) r.delta = delta(theta, *mask);
        if (options.masks) {
            r.test_accuracy_local = masked_accuracy(model, theta, *mask, Keep::local, test);
            r.test_accuracy_offlocal = masked_accuracy(model, theta, *mask, Keep::off_local, test);
        }
    }
    return r;
}

}  // namespace efcn
