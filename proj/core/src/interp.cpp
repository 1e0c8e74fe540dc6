#include "efcn/interp.hpp"

#include "efcn/errors.hpp"
#include "efcn/probes.hpp"
#include "efcn/train.hpp"

#include <algorithm>
#include <cmath>

namespace efcn {

namespace {

std::vector<double> softmax_rows(const Tensor& logits) {
    const auto n = static_cast<std::size_t>(logits.dim(0));
    const auto c = static_cast<std::size_t>(logits.dim(1));
    std::vector<double> p(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.ptr() + i * c;
        double mx = row[0];
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) p[i * c + j] = std::exp(row[j] - mx) / s;
    }
    return p;
}

}  // namespace

void Path::validate() const {
    if (points.size() < 2) throw Error("path needs at least two points");
    if (alphas.size() != points.size()) throw Error("path alphas and points disagree");
    for (const auto& p : points) {
        if (p.size() != points.front().size()) throw ShapeError("path points have different dimensions");
    }
}

std::vector<double> even_alphas(int n) {
    if (n < 2) throw Error("interpolation needs n >= 2");
    std::vector<double> a(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
    return a;
}

Path linear_path(const ParamVector& theta_a, const ParamVector& theta_b, int n) {
    if (theta_a.size() != theta_b.size()) {
        throw ShapeError("linear_path: endpoint dimensions differ (" + std::to_string(theta_a.size()) + " vs " +
                         std::to_string(theta_b.size()) + ")");
    }
    Path path;
    path.alphas = even_alphas(n);
    for (int i = 0; i < n; ++i) {
        const double a = path.alphas[static_cast<std::size_t>(i)];
        if (i == 0) {
            path.points.push_back(theta_a);
        } else if (i == n - 1) {
            path.points.push_back(theta_b);
        } else {
            ParamVector x = theta_a;
            for (std::size_t j = 0; j < x.size(); ++j) {
                x[j] = static_cast<float>((1.0 - a) * theta_a[j] + a * theta_b[j]);
            }
            path.points.push_back(std::move(x));
        }
    }
    return path;
}

double elastic_loss(const Path& path, double k) {
    path.validate();
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
        const double d = distance(path.points[i + 1].values(), path.points[i].values());
        s += d * d;
    }
    return 0.5 * k * s;
}

Path string_relax(Path path, const StringConfig& cfg, const ModelSpec& model, const Dataset& train_set) {
    path.validate();
    if (cfg.stiffness < 0.0) throw ConfigError("interp.stiffness", "stiffness must be >= 0");
    if (cfg.steps < 0) throw ConfigError("interp.steps", "steps must be >= 0");
    if (!(cfg.lr > 0.0)) throw ConfigError("interp.lr", "step size must be positive");
    if (cfg.batch_size < 1) throw ConfigError("interp.batch_size", "batch size must be >= 1");
    const std::size_t n = path.size();
    const std::size_t dim = path.points.front().size();
    const LossFn loss = model_loss(model);
    std::vector<std::size_t> perm;
    std::size_t cursor = 0;
    int epoch = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        Batch batch;
        if (cfg.use_train_loss) {
            // Walk seeded epoch permutations so every point sees the same minibatch.
            if (cursor >= perm.size()) {
                perm = epoch_permutation(train_set.size(), cfg.seed, ++epoch);
                cursor = 0;
            }
            const std::size_t hi = std::min(perm.size(), cursor + static_cast<std::size_t>(cfg.batch_size));
            batch = train_set.batch(std::span<const std::size_t>(perm).subspan(cursor, hi - cursor));
            cursor = hi;
        }
        std::vector<ParamVector> next(path.points.begin(), path.points.end());
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const auto& prev = path.points[i - 1].values();
            const auto& cur = path.points[i].values();
            const auto& nxt = path.points[i + 1].values();
            std::vector<double> g(dim, 0.0);
            if (cfg.use_train_loss) {
                ParamVector tg;
                try {
                    tg = grad(loss, path.points[i], batch);
                } catch (const NonFiniteError& e) {
                    throw DivergenceError(step, static_cast<int>(i),
                                          "string relaxation diverged at step " + std::to_string(step) + ": " + e.what());
                }
                for (std::size_t j = 0; j < dim; ++j) g[j] = tg[j];
            }
            auto out = next[i].values();
            for (std::size_t j = 0; j < dim; ++j) {
                const double elastic = cfg.stiffness * (2.0 * cur[j] - prev[j] - nxt[j]);
                out[j] = static_cast<float>(cur[j] - cfg.lr * (g[j] + elastic));
                if (!std::isfinite(out[j])) {
                    throw DivergenceError(step, static_cast<int>(i),
                                          "string relaxation diverged at step " + std::to_string(step));
                }
            }
        }
        path.points = std::move(next);
    }
    return path;
}

Tensor output_interpolation(const ModelSpec& model_a, const ParamVector& theta_a, const ModelSpec& model_b,
                            const ParamVector& theta_b, double alpha, const Tensor& x) {
    if (model_a.classes != model_b.classes) throw ShapeError("output_interpolation: class counts differ");
    if (alpha < 0.0 || alpha > 1.0) throw Error("output_interpolation: alpha must lie in [0, 1]");
    const Tensor la = forward(model_a, theta_a, x);
    const Tensor lb = forward(model_b, theta_b, x);
    const auto pa = softmax_rows(la);
    const auto pb = softmax_rows(lb);
    Tensor out(la.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (alpha == 0.0) {
            out[i] = static_cast<float>(pa[i]);
        } else if (alpha == 1.0) {
            out[i] = static_cast<float>(pb[i]);
        } else {
            out[i] = static_cast<float>((1.0 - alpha) * pa[i] + alpha * pb[i]);
        }
    }
    return out;
}

std::vector<ProfileRow> path_profile(const std::string& method, const Path& path, const ModelSpec& model,
                                     const Dataset& train_set, const Dataset& test_set) {
    path.validate();
    std::vector<ProfileRow> rows;
    for (std::size_t i = 0; i < path.size(); ++i) {
        const Evaluation tr = evaluate(model, path.points[i], train_set);
        const Evaluation te = evaluate(model, path.points[i], test_set);
        rows.push_back(ProfileRow{method, path.alphas[i], tr.loss, te.accuracy});
    }
    return rows;
}

std::vector<ProfileRow> output_profile(const std::vector<double>& alphas, const ModelSpec& model_a,
                                       const ParamVector& theta_a, const ModelSpec& model_b,
                                       const ParamVector& theta_b, const Dataset& train_set,
                                       const Dataset& test_set) {
    constexpr std::size_t chunk = 1000;
    auto mixed_probs = [&](const Dataset& d, auto&& visit) {
        for (std::size_t lo = 0; lo < d.size(); lo += chunk) {
            const Batch b = d.range(lo, std::min(d.size(), lo + chunk));
            const auto pa = softmax_rows(forward(model_a, theta_a, b.images));
            const auto pb = softmax_rows(forward(model_b, theta_b, b.images));
            visit(b, pa, pb);
        }
    };
    const auto c = static_cast<std::size_t>(model_a.classes);
    std::vector<ProfileRow> rows;
    for (double alpha : alphas) {
        double loss_sum = 0.0;
        mixed_probs(train_set, [&](const Batch& b, const std::vector<double>& pa, const std::vector<double>& pb) {
            for (std::size_t i = 0; i < b.size(); ++i) {
                const std::size_t k = i * c + static_cast<std::size_t>(b.labels[i]);
                loss_sum -= std::log(std::max((1.0 - alpha) * pa[k] + alpha * pb[k], 1e-300));
            }
        });
        std::size_t hits = 0;
        mixed_probs(test_set, [&](const Batch& b, const std::vector<double>& pa, const std::vector<double>& pb) {
            for (std::size_t i = 0; i < b.size(); ++i) {
                std::size_t best = 0;
                double best_p = -1.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double p = (1.0 - alpha) * pa[i * c + j] + alpha * pb[i * c + j];
                    if (p > best_p) {
                        best_p = p;
                        best = j;
                    }
                }
                if (static_cast<int>(best) == b.labels[i]) ++hits;
            }
        });
        rows.push_back(ProfileRow{"output", alpha, loss_sum / static_cast<double>(train_set.size()),
                                  static_cast<double>(hits) / static_cast<double>(test_set.size())});
    }
    return rows;
}

}  // namespace efcn
