#include "efcn/verify.hpp"

#include "efcn/embed.hpp"
#include "efcn/probes.hpp"
#include "efcn/reference.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace efcn {

namespace {

Batch random_batch(const ModelSpec& model, int n, std::mt19937_64& rng) {
    std::normal_distribution<float> pix(0.0f, 1.0f);
    std::uniform_int_distribution<int> cls(0, model.classes - 1);
    Batch b{Tensor(Shape{n, model.input.channels, model.input.height, model.input.width}), {}};
    for (auto& v : b.images.storage()) v = pix(rng);
    for (int i = 0; i < n; ++i) b.labels.push_back(cls(rng));
    return b;
}

CheckResult make(std::string name, double value, double tol, std::string detail = {}) {
    return CheckResult{std::move(name), value <= tol, value, tol, std::move(detail)};
}

ModelSpec tiny_cnn() {
    ModelSpec m;
    m.input = {1, 4, 4};
    m.classes = 3;
    m.layers = {Conv{{1, 2, 3, 1, 1}}, ReLU{}, MaxPool{}, Flatten{}, Dense{8, 3, std::nullopt}};
    return m;
}

double dense_hessian_lambda(const ModelSpec& model, const ParamVector& theta, const Batch& b) {
    const auto x0 = to_double(theta);
    const std::size_t n = x0.size();
    const double h = 1e-4;
    auto f = [&](std::vector<double>& x) { return reference_loss(model, x, b.images, b.labels); };
    Eigen::MatrixXd H(n, n);
    std::vector<double> x = x0;
    const double f0 = f(x);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double v;
            if (i == j) {
                x[i] = x0[i] + h;
                const double up = f(x);
                x[i] = x0[i] - h;
                const double dn = f(x);
                x[i] = x0[i];
                v = (up - 2.0 * f0 + dn) / (h * h);
            } else {
                auto at = [&](double si, double sj) {
                    x[i] = x0[i] + si * h;
                    x[j] = x0[j] + sj * h;
                    const double r = f(x);
                    x[i] = x0[i];
                    x[j] = x0[j];
                    return r;
                };
                v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
            }
            H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    return std::abs(ev(0)) > std::abs(ev(ev.size() - 1)) ? ev(0) : ev(ev.size() - 1);
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
    std::vector<CheckResult> out;
    std::mt19937_64 rng(options.seed);
    const ModelSpec cnn = build_vanilla_cnn(8, {1, 16, 16}, 10);
    const EmbeddingMap map = build_embedding_map(cnn);
    const ModelSpec& fcn = map.fcn_spec();

    double eq = 0.0, ref = 0.0, pb = 0.0, dz = 0.0;
    for (int r = 0; r < options.instances; ++r) {
        const ParamVector theta = init_params(cnn, rng());
        const ParamVector phi = map.apply(theta);
        const Batch b = random_batch(cnn, 20, rng);
        const Tensor yc = forward(cnn, theta, b.images);
        const Tensor yf = forward(fcn, phi, b.images);
        const auto yr = reference_forward(cnn, to_double(theta), b.images);
        for (std::size_t i = 0; i < yc.size(); ++i) {
            eq = std::max(eq, static_cast<double>(std::abs(yc[i] - yf[i])));
            ref = std::max(ref, std::abs(static_cast<double>(yc[i]) - yr[i]));
        }
        const auto g_cnn = grad(model_loss(cnn), theta, b);
        const auto g_fcn = grad(model_loss(fcn), phi, b);
        pb = std::max(pb, relative_error(map.pullback(g_fcn).values(), g_cnn.values()));
        dz = std::max(dz, delta(phi, map.mask()));
    }
    out.push_back(make("equivalence: max |cnn - efcn logits|", eq, 1e-5));
    out.push_back(make("reference: max |cnn - double reference logits|", ref, 1e-4));
    out.push_back(make("pullback: relative error vs cnn gradient", pb, 1e-4));
    out.push_back(make("deviation of embedded parameters", dz, 0.0));

    const ModelSpec tiny = tiny_cnn();
    double gerr = 0.0, herr = 0.0;
    std::string hdetail;
    for (int r = 0; r < options.instances; ++r) {
        ParamVector theta;
        Batch b;
        do {
            theta = init_params(tiny, rng());
            b = random_batch(tiny, 4, rng);
        } while (kink_margin(tiny, to_double(theta), b.images) < 1e-2);
        const auto g = grad(model_loss(tiny), theta, b);
        const auto x = to_double(theta);
        const auto fd = finite_diff_grad(
            [&](std::span<const double> p) { return reference_loss(tiny, p, b.images, b.labels); }, x, 1e-6);
        std::vector<float> fdf(fd.begin(), fd.end());
        gerr = std::max(gerr, relative_error(g.values(), fdf));

        PowerIterationConfig pc;
        pc.max_iters = 2000;
        pc.tol = 1e-7;
        pc.seed = rng();
        const double lam = lambda_max(tiny, theta, b, pc).lambda;
        const double want = dense_hessian_lambda(tiny, theta, b);
        const double e = std::abs(lam - want) / std::max(std::abs(want), 1e-12);
        if (e >= herr) {
            std::ostringstream d;
            d << "power " << lam << " dense " << want;
            hdetail = d.str();
        }
        herr = std::max(herr, e);
    }
    out.push_back(make("autodiff: relative error vs double-precision differences", gerr, 1e-4));
    out.push_back(make("hessian: lambda_max vs dense eigensolve (relative)", herr, 1e-2, hdetail));
    return out;
}

}  // namespace efcn
