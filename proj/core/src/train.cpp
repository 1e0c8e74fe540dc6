#include "efcn/train.hpp"

#include "efcn/errors.hpp"
#include "efcn/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace efcn {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over a combined word
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

EpochMetrics measure(const ModelSpec& model, const ParamVector& theta, const Dataset& train_set,
                     const Dataset& test_set, int epoch) {
    const Evaluation tr = evaluate(model, theta, train_set);
    const Evaluation te = evaluate(model, theta, test_set);
    return EpochMetrics{epoch, tr.loss, tr.accuracy, te.loss, te.accuracy};
}

}  // namespace

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("optimizer", "unknown optimizer '" + name + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr", "learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size", "batch size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs", "epochs must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum", "momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay", "weight decay must be >= 0");
    if (eval_every < 1) throw ConfigError("eval_every", "eval_every must be >= 1");
}

ParamVector sgd_step(const ParamVector& theta, const ParamVector& grad, double eta) {
    if (theta.size() != grad.size()) throw ShapeError("sgd_step: gradient length differs from theta");
    ParamVector out = theta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(theta[i] - eta * grad[i]);
    return out;
}

std::pair<ParamVector, OptimizerState> adam_step(const ParamVector& theta, const ParamVector& grad,
                                                 OptimizerState state, double eta, const AdamParams& p) {
    if (theta.size() != grad.size()) throw ShapeError("adam_step: gradient length differs from theta");
    state.kind = OptimizerKind::adam;
    if (state.m.empty()) state.m.assign(theta.size(), 0.0f);
    if (state.v.empty()) state.v.assign(theta.size(), 0.0f);
    if (state.m.size() != theta.size() || state.v.size() != theta.size()) {
        throw ShapeError("adam_step: moment buffers do not match theta");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(p.beta1, t);
    const double c2 = 1.0 - std::pow(p.beta2, t);
    ParamVector out = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = grad[i];
        const double m = p.beta1 * state.m[i] + (1.0 - p.beta1) * g;
        const double v = p.beta2 * state.v[i] + (1.0 - p.beta2) * g * g;
        state.m[i] = static_cast<float>(m);
        state.v[i] = static_cast<float>(v);
        const double mhat = m / c1;
        const double vhat = v / c2;
        out[i] = static_cast<float>(theta[i] - eta * mhat / (std::sqrt(vhat) + p.eps));
    }
    return {std::move(out), std::move(state)};
}

void apply_update(ParamVector& theta, const ParamVector& grad, OptimizerState& state, const TrainConfig& cfg) {
    if (cfg.optimizer == OptimizerKind::adam) {
        ParamVector g = grad;
        if (cfg.weight_decay > 0.0) axpy(cfg.weight_decay, theta.values(), g.values());
        auto [next, st] = adam_step(theta, g, std::move(state), cfg.lr,
                                    AdamParams{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
        theta = std::move(next);
        state = std::move(st);
        return;
    }
    if (cfg.momentum == 0.0 && cfg.weight_decay == 0.0) {
        theta = sgd_step(theta, grad, cfg.lr);
        return;
    }
    ++state.step;
    if (cfg.momentum > 0.0 && state.m.empty()) state.m.assign(theta.size(), 0.0f);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i] + cfg.weight_decay * theta[i];
        if (cfg.momentum > 0.0) {
            g = cfg.momentum * state.m[i] + g;
            state.m[i] = static_cast<float>(g);
        }
        theta[i] = static_cast<float>(theta[i] - cfg.lr * g);
    }
}

std::vector<int> log_spaced_epochs(int epochs, int count) {
    if (epochs < 1) throw ConfigError("epochs", "log-spaced schedule needs at least one epoch");
    if (count < 2) throw ConfigError("snapshots", "log-spaced schedule needs at least two snapshots");
    std::vector<int> out{0};
    if (count == 2) {
        out.push_back(epochs);
    } else {
        for (int i = 0; i <= count - 2; ++i) {
            const double e = std::pow(static_cast<double>(epochs), static_cast<double>(i) / (count - 2));
            out.push_back(static_cast<int>(std::lround(e)));
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

TrainResult train(const ModelSpec& model, TrainState start, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, std::span<const int> snapshot_epochs, const std::string& run_id,
                  const ProgressFn& progress) {
    cfg.validate();
    train_set.validate();
    test_set.validate();
    if (start.theta.size() != param_count(model)) throw ShapeError("train: theta does not match the model");

    TrainResult result;
    result.curve.run_id = run_id;
    ParamVector theta = std::move(start.theta);
    OptimizerState opt = std::move(start.optimizer);
    if (cfg.optimizer == OptimizerKind::adam) opt.kind = OptimizerKind::adam;

    auto wants_snapshot = [&](int epoch) {
        return std::find(snapshot_epochs.begin(), snapshot_epochs.end(), epoch) != snapshot_epochs.end();
    };
    auto take_snapshot = [&](int epoch, const EpochMetrics& m) {
        result.snapshots.push_back(Snapshot{epoch, theta, opt, cfg.seed, m.train_loss, m.test_accuracy});
    };

    result.curve.initial = measure(model, theta, train_set, test_set, start.epoch);
    if (progress) progress(run_id, result.curve.initial);
    if (wants_snapshot(start.epoch)) take_snapshot(start.epoch, result.curve.initial);

    const std::size_t n = train_set.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = start.epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto perm = epoch_permutation(n, cfg.seed, epoch);
        int b = 0;
        for (std::size_t lo = 0; lo < n; lo += bs, ++b) {
            const std::size_t hi = std::min(n, lo + bs);
            const Batch batch = train_set.batch(std::span<const std::size_t>(perm).subspan(lo, hi - lo));
            ForwardOptions fo{true, mix(mix(cfg.seed, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(b))};
            ValueAndGrad vg;
            try {
                vg = value_and_grad(model_loss(model, fo), theta, batch);
            } catch (const NonFiniteError& e) {
                throw DivergenceError(epoch, b, "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                                    std::to_string(b) + ": " + e.what());
            }
            apply_update(theta, vg.grad, opt, cfg);
            if (!std::all_of(theta.values().begin(), theta.values().end(), [](float v) { return std::isfinite(v); })) {
                throw DivergenceError(epoch, b, "parameters became non-finite at epoch " + std::to_string(epoch) +
                                                    ", batch " + std::to_string(b));
            }
        }
        const bool last = epoch == cfg.epochs;
        const bool snap = wants_snapshot(epoch);
        if (epoch % cfg.eval_every == 0 || last || snap) {
            EpochMetrics m = measure(model, theta, train_set, test_set, epoch);
            if (epoch % cfg.eval_every == 0 || last) {
                result.curve.points.push_back(m);
                if (progress) progress(run_id, m);
            }
            if (snap) take_snapshot(epoch, m);
        }
    }
    result.final_state = TrainState{std::move(theta), std::move(opt), std::max(start.epoch, cfg.epochs)};
    return result;
}

}  // namespace efcn
