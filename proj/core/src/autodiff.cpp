#include "efcn/autodiff.hpp"

#include "efcn/errors.hpp"

#include <cmath>

namespace efcn {
namespace {

Tensor flat_tensor(const ParamVector& theta) {
    return Tensor(Shape{static_cast<std::int64_t>(theta.size())}, theta.storage());
}

double checked_scalar(const Tape& tape, Var out) {
    const double v = tape.scalar(out);
    if (!std::isfinite(v)) throw NonFiniteError(-1, "loss evaluated to a non-finite value");
    return v;
}

}  // namespace

ValueAndGrad value_and_grad(const LossFn& loss, const ParamVector& theta, const Batch& batch) {
    Tape tape;
    Var leaf = tape.leaf(flat_tensor(theta));
    Var out = loss(tape, leaf, batch);
    ValueAndGrad r;
    r.loss = checked_scalar(tape, out);
    tape.backward(out);
    r.grad = ParamVector(theta.segments(), tape.grad(leaf).storage());
    return r;
}

ParamVector grad(const LossFn& loss, const ParamVector& theta, const Batch& batch) {
    return value_and_grad(loss, theta, batch).grad;
}

double loss_value(const LossFn& loss, const ParamVector& theta, const Batch& batch) {
    Tape tape;
    Var leaf = tape.constant(flat_tensor(theta));
    return checked_scalar(tape, loss(tape, leaf, batch));
}

ParamVector finite_diff_grad(const LossFn& loss, const ParamVector& theta, const Batch& batch, double eps) {
    if (!(eps > 0.0)) throw Error("finite_diff_grad: eps must be positive");
    ParamVector point = theta;
    ParamVector g = ParamVector::zeros_like(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const float keep = theta[i];
        const float up_x = static_cast<float>(keep + eps);
        const float down_x = static_cast<float>(keep - eps);
        point[i] = up_x;
        const double up = loss_value(loss, point, batch);
        point[i] = down_x;
        const double down = loss_value(loss, point, batch);
        point[i] = keep;
        const double step = static_cast<double>(up_x) - static_cast<double>(down_x);
        g[i] = static_cast<float>((up - down) / step);
    }
    return g;
}

ParamVector hvp(const LossFn& loss, const ParamVector& theta, const Batch& batch, const ParamVector& v,
                const HvpOptions& options) {
    if (v.size() != theta.size()) throw ShapeError("hvp: direction length differs from theta");
    const double vnorm = norm(v.values());
    if (!(vnorm > 0.0)) throw Error("hvp: direction has zero norm");
    const double eps = options.eps0 * (1.0 + norm(theta.values()));

    ParamVector plus = theta;
    ParamVector minus = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double d = eps * static_cast<double>(v[i]) / vnorm;
        plus[i] = static_cast<float>(theta[i] + d);
        minus[i] = static_cast<float>(theta[i] - d);
    }
    // Realized step along the unit direction; differs from 2*eps by float rounding.
    double step = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        step += (static_cast<double>(plus[i]) - static_cast<double>(minus[i])) * static_cast<double>(v[i]) / vnorm;
    }
    const ParamVector g_plus = grad(loss, plus, batch);
    const ParamVector g_minus = grad(loss, minus, batch);
    ParamVector out = ParamVector::zeros_like(theta);
    const double factor = vnorm / step;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        out[i] = static_cast<float>((static_cast<double>(g_plus[i]) - static_cast<double>(g_minus[i])) * factor);
    }
    return out;
}

}  // namespace efcn
