#pragma once

#include "efcn/params.hpp"
#include "efcn/tape.hpp"

#include <functional>
#include <span>
#include <vector>

namespace efcn {

/// Inputs and integer class labels for one evaluation.
struct Batch {
    Tensor images;
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// A differentiable scalar objective. `theta` is a flat leaf on `tape`; the
/// function records whatever it needs and returns a rank-0 node.
using LossFn = std::function<Var(Tape& tape, Var theta, const Batch& batch)>;

struct ValueAndGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Loss and its exact reverse-mode gradient at `theta`.
ValueAndGrad value_and_grad(const LossFn& loss, const ParamVector& theta, const Batch& batch);
ParamVector grad(const LossFn& loss, const ParamVector& theta, const Batch& batch);
double loss_value(const LossFn& loss, const ParamVector& theta, const Batch& batch);

/// Central differences, one coordinate at a time. The quotient divides by the
/// step actually realized in float32 storage rather than the nominal 2*eps.
ParamVector finite_diff_grad(const LossFn& loss, const ParamVector& theta, const Batch& batch, double eps);

/// Double-precision central differences for plain callables f(x) -> double.
template <class F>
std::vector<double> finite_diff_grad(F&& f, std::span<const double> x, double eps) {
    std::vector<double> point(x.begin(), x.end());
    std::vector<double> g(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = point[i];
        point[i] = keep + eps;
        const double up = f(std::span<const double>(point));
        point[i] = keep - eps;
        const double down = f(std::span<const double>(point));
        point[i] = keep;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

struct HvpOptions {
    /// Step is eps0 * (1 + ||theta||).
    double eps0 = 1e-4;
};

/// Hessian-vector product by central differences of reverse-mode gradients.
ParamVector hvp(const LossFn& loss, const ParamVector& theta, const Batch& batch, const ParamVector& v,
                const HvpOptions& options = {});

}  // namespace efcn
