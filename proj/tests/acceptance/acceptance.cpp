// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.

#include "oracles.hpp"
#include "primitives.hpp"

#include <efcn/checkpoint.hpp>
#include <efcn/config.hpp>
#include <efcn/embed.hpp>
#include <efcn/interp.hpp>
#include <efcn/probes.hpp>
#include <efcn/train.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace efcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double rel_err(std::span<const float> a, std::span<const float> b) {
    double num = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double{a[i]} - b[i];
        num += d * d;
        na += double{a[i]} * a[i];
        nb += double{b[i]} * b[i];
    }
    const double den = std::sqrt(std::max(na, nb));
    return den == 0 ? 0 : std::sqrt(num) / den;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

const ModelSpec& mini() {
    static const ModelSpec m = build_vanilla_cnn(8, {3, 16, 16}, 10);
    return m;
}

Outcome equivalence() {
    const EmbeddingMap map = build_embedding_map(mini());
    oracle::Gen gen(101);
    double worst = 0;
    for (int r = 0; r < 10; ++r) {
        const ParamVector theta = init_params(mini(), gen.seed());
        const Batch b = gen.batch(mini(), 100);
        const Tensor yc = forward(mini(), theta, b.images);
        const Tensor yf = forward(map.fcn_spec(), map.apply(theta), b.images);
        for (std::size_t i = 0; i < yc.size(); ++i) worst = std::max(worst, double{std::abs(yc[i] - yf[i])});
    }
    return {worst <= 1e-5, "max |logit difference| " + fmt(worst) + " (tol 1e-5)"};
}

Outcome pullback_check() {
    const EmbeddingMap map = build_embedding_map(mini());
    oracle::Gen gen(102);
    double worst = 0;
    for (int r = 0; r < 10; ++r) {
        const ParamVector theta = init_params(mini(), gen.seed());
        const Batch b = gen.batch(mini(), 16);
        const ParamVector g_cnn = grad(model_loss(mini()), theta, b);
        const ParamVector g_fcn = grad(model_loss(map.fcn_spec()), map.apply(theta), b);
        worst = std::max(worst, rel_err(map.pullback(g_fcn).values(), g_cnn.values()));
    }
    return {worst <= 1e-4, "max relative error " + fmt(worst) + " (tol 1e-4)"};
}

Outcome autodiff() {
    const std::vector<std::pair<std::string, double>> errs{
        {"dense", oracle::dense_error(301, 100)},
        {"conv2d", oracle::conv2d_error(302, 100)},
        {"relu", oracle::relu_error(303, 100)},
        {"maxpool", oracle::maxpool_error(304, 100)},
        {"softmax_ce", oracle::softmax_cross_entropy_error(305, 100)},
    };
    bool ok = true;
    std::string d;
    for (const auto& [name, e] : errs) {
        ok = ok && e <= 1e-4;
        d += (d.empty() ? "" : ", ") + name + " " + fmt(e);
    }
    return {ok, d + " (tol 1e-4)"};
}

Outcome hessian() {
    oracle::Gen gen(104);
    double worst = 0;
    int done = 0;
    while (done < 20) {
        const ModelSpec m = gen.conv_net();
        if (param_count(m) > 200) continue;
        const ParamVector theta = init_params(m, gen.seed());
        const Batch b = gen.batch(m, 4);
        const auto th = oracle::to_double(theta.values());
        if (oracle::kink_margin(m, th, b.images) < 1e-2) continue;
        const auto h = oracle::fd_hessian([&](std::span<const double> x) { return oracle::loss(m, x, b); }, th, 1e-4);
        const auto ev = oracle::sym_eigenvalues(h, th.size());
        const double want = std::abs(ev.front()) > std::abs(ev.back()) ? ev.front() : ev.back();
        PowerIterationConfig cfg;
        cfg.max_iters = 2000;
        cfg.tol = 1e-7;
        cfg.seed = gen.seed();
        const double got = lambda_max(m, theta, b, cfg).lambda;
        worst = std::max(worst, std::abs(got - want) / std::abs(want));
        ++done;
    }
    return {worst <= 1e-2, "20 instances, max relative error " + fmt(worst) + " (tol 1e-2)"};
}

// Entries of the dense matrix of one convolution that lie on its filter
// support, counted tap by tap.
std::uint64_t local_entries(const ConvSpec& s, int d_in, int d_out) {
    std::uint64_t per_axis = 0;
    for (int o = 0; o < d_out; ++o) {
        for (int u = 0; u < s.k; ++u) {
            const int i = o * s.s - s.p + u;
            per_axis += i >= 0 && i < d_in;
        }
    }
    return static_cast<std::uint64_t>(s.c_in) * s.c_out * per_axis * per_axis;
}

double expected_iid_delta(const ModelSpec& cnn) {
    const auto chain = shape_chain(cnn);
    double m_w = 0, m_off = 0;
    for (std::size_t i = 0; i < cnn.layers.size(); ++i) {
        if (const auto* c = std::get_if<Conv>(&cnn.layers[i])) {
            const ImageShape in = i == 0 ? cnn.input : *chain[i - 1].image;
            const ImageShape out = *chain[i].image;
            const double all = static_cast<double>(in.size()) * static_cast<double>(out.size());
            m_w += all;
            m_off += all - static_cast<double>(local_entries(c->spec, in.height, out.height));
        } else if (const auto* d = std::get_if<Dense>(&cnn.layers[i])) {
            m_w += static_cast<double>(d->in) * d->out;
        }
    }
    return std::sqrt(m_off / m_w);
}

Outcome deviation() {
    oracle::Gen gen(105);
    const EmbeddingMap map = build_embedding_map(mini());
    double embedded = 0;
    for (int r = 0; r < 10; ++r) embedded = std::max(embedded, delta(map.apply(init_params(mini(), gen.seed())), map.mask()));

    ParamVector iid = zero_params(map.fcn_spec());
    for (float& v : iid.values()) v = static_cast<float>(gen.normal(0.05));
    const double got = delta(iid, map.mask());
    const double want = expected_iid_delta(mini());
    const double iid_err = std::abs(got - want) / want;

    const double full = expected_iid_delta(build_vanilla_cnn(64, {3, 32, 32}, 10));
    const double full_err = std::abs(full - 0.97) / 0.97;

    const bool ok = embedded == 0.0 && iid_err <= 0.02 && full_err <= 0.02;
    return {ok, "delta(embedded) " + fmt(embedded) + ", iid " + fmt(got) + " vs " + fmt(want) + " (" +
                    fmt(100 * iid_err) + "%), full-size expectation " + fmt(full) + " vs 0.97 (" +
                    fmt(100 * full_err) + "%)"};
}

Outcome string_method() {
    auto [tr, te] = gen_synthetic(SyntheticConfig{10, 16, 7, 300, 100, 0.3}, 6);
    const ModelSpec cnn = build_vanilla_cnn(4, tr.shape(), tr.classes);
    TrainConfig tc;
    tc.batch_size = 20;
    tc.epochs = 2;
    const ParamVector theta = train(cnn, TrainState{init_params(cnn, 1), {}, 0}, tr, te, tc).final_state.theta;
    const Embedding e = embed(cnn, theta);

    const Path lin = linear_path(e.theta, init_params(e.fcn_spec, 2), 5);
    StringConfig stiff;
    stiff.stiffness = 1e4;
    stiff.lr = 2e-5;
    stiff.steps = 50;
    stiff.batch_size = 50;
    const Path q = string_relax(lin, stiff, e.fcn_spec, tr);
    double dev = 0;
    for (std::size_t i = 0; i < q.size(); ++i) dev = std::max(dev, rel_err(q.points[i].values(), lin.points[i].values()));
    bool frozen = q.points.front().storage() == lin.points.front().storage() &&
                  q.points.back().storage() == lin.points.back().storage();

    oracle::Gen gen(106);
    Path wild;
    wild.alphas = even_alphas(7);
    for (int i = 0; i < 7; ++i) wild.points.emplace_back(gen.floats(16));
    StringConfig elastic;
    elastic.use_train_loss = false;
    elastic.lr = 0.25;
    elastic.steps = 3000;
    const Path r = string_relax(wild, elastic, ModelSpec{}, Dataset{});
    double residual = 0;
    for (std::size_t i = 1; i + 1 < r.size(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double d = 2.0 * r.points[i][j] - double{r.points[i - 1][j]} - r.points[i + 1][j];
            s += d * d;
        }
        residual = std::max(residual, std::sqrt(s));
    }
    frozen = frozen && r.points.front().storage() == wild.points.front().storage() &&
             r.points.back().storage() == wild.points.back().storage();

    return {dev <= 1e-2 && residual <= 1e-6 && frozen,
            "(a) high-k deviation " + fmt(dev) + " (tol 1e-2); (b) elastic residual " + fmt(residual) +
                " (tol 1e-6); (c) endpoints " + (frozen ? "bitwise frozen" : "MODIFIED")};
}

Outcome elastic_exact() {
    const Path five = linear_path(ParamVector(std::vector<float>{0, 0}), ParamVector(std::vector<float>{0.6f, 0.8f}), 5);
    const Path two = linear_path(ParamVector(std::vector<float>{1, -1, 2}), ParamVector(std::vector<float>{2, 1, 0}), 2);
    double worst = 0;
    for (double k : {0.5, 1.0, 8.0}) {
        worst = std::max(worst, std::abs(elastic_loss(five, k) - k / 8));
        worst = std::max(worst, std::abs(elastic_loss(two, k) - 0.5 * k * 9.0));
    }
    return {worst <= 1e-7, "max error " + fmt(worst) + " (tol 1e-7)"};
}

Outcome protocol() {
    bool ok = true;
    std::ostringstream d;
    for (std::uint64_t seed : {0, 1, 2}) {
        const Config cfg = parse_config({{"seed", seed}, {"protocol", {{"snapshots", 6}}}});
        const auto [tr, te] = load_data(cfg);
        const RunReport r = relax_protocol(cfg.protocol, tr, te);
        const double cnn = r.cnn.points.back().test_accuracy;
        const double fcn = r.fcn.points.back().test_accuracy;
        const bool a = cnn - fcn >= 0.05;

        bool b = true;
        std::vector<double> deltas;
        bool e = true;
        for (const auto& run : r.efcn) {
            b = b && run.curve.points.back().test_accuracy >= run.curve.initial.test_accuracy - 0.01;
            deltas.push_back(delta(run.theta_final, r.map->mask()));
            const double off = masked_accuracy(r.fcn_spec, run.theta_init, r.map->mask(), Keep::off_local, te);
            e = e && off == 1.0 / te.classes;
        }
        const double efcn0 = r.efcn.front().curve.points.back().test_accuracy;
        const bool c = r.efcn.front().t_w == 0 && efcn0 > fcn;
        int inversions = 0;
        for (std::size_t i = 1; i < deltas.size(); ++i) inversions += deltas[i] > deltas[i - 1];
        const bool dd = inversions <= 1;
        ok = ok && a && b && c && dd && e;

        d << " [seed " << seed << ": cnn " << fmt(cnn) << ", fcn " << fmt(fcn) << ", efcn(0) " << fmt(efcn0)
          << ", delta";
        for (double v : deltas) d << ' ' << fmt(v);
        d << "; a" << (a ? '+' : '-') << " b" << (b ? '+' : '-') << " c" << (c ? '+' : '-') << " d"
          << (dd ? '+' : '-') << " e" << (e ? '+' : '-') << ']';
    }
    return {ok, "3 seeds, k=6, 30+20 epochs:" + d.str()};
}

Outcome checkpoints() {
    auto [tr, te] = gen_synthetic(SyntheticConfig{10, 16, 7, 300, 100, 0.3}, 9);
    const ModelSpec cnn = build_vanilla_cnn(4, tr.shape(), tr.classes);
    TrainConfig tc;
    tc.batch_size = 20;
    tc.epochs = 3;
    tc.seed = 4;
    const auto run_a = train(cnn, TrainState{init_params(cnn, 1), {}, 0}, tr, te, tc);
    const auto run_b = train(cnn, TrainState{init_params(cnn, 1), {}, 0}, tr, te, tc);
    bool curves = run_a.curve.points.size() == run_b.curve.points.size();
    for (std::size_t i = 0; curves && i < run_a.curve.points.size(); ++i) {
        const auto& x = run_a.curve.points[i];
        const auto& y = run_b.curve.points[i];
        curves = x.train_loss == y.train_loss && x.train_accuracy == y.train_accuracy && x.test_loss == y.test_loss &&
                 x.test_accuracy == y.test_accuracy;
    }
    curves = curves && run_a.final_state.theta.storage() == run_b.final_state.theta.storage();

    const Embedding e = embed(cnn, run_a.final_state.theta);
    const ModelSpec fcn = build_fcn_from(cnn);
    TrainConfig adam = tc;
    adam.optimizer = OptimizerKind::adam;
    adam.lr = 1e-3;
    adam.epochs = 1;
    const auto fcn_run = train(fcn, TrainState{init_params(fcn, 2), {}, 0}, tr, te, adam);

    std::vector<ModelCheckpoint> models(3);
    models[0] = {"cnn", cnn, run_a.final_state.theta, 3, 4, run_a.final_state.optimizer, std::nullopt, std::nullopt, {}};
    models[1] = {"fcn", fcn, fcn_run.final_state.theta, 1, 4, fcn_run.final_state.optimizer, std::nullopt, std::nullopt, {}};
    models[2] = {"efcn", e.fcn_spec, e.theta, 0, 4, {}, cnn, 3, {}};

    const fs::path dir = fs::temp_directory_path() / "efcn_acceptance_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    bool bitwise = true;
    for (const auto& m : models) {
        const fs::path p = dir / (m.kind + ".ckpt");
        const Checkpoint c = to_checkpoint(m);
        save_checkpoint(p, c);
        const Checkpoint back = load_checkpoint(p);
        const ModelCheckpoint mb = model_from_checkpoint(back);
        bitwise = bitwise && back == c && mb.theta.storage() == m.theta.storage() && mb.spec == m.spec &&
                  mb.optimizer == m.optimizer && mb.embedded_from == m.embedded_from && mb.t_w == m.t_w;
    }
    save_checkpoint(dir / "data.ckpt", dataset_checkpoint(te));
    const Dataset dback = dataset_from_checkpoint(load_checkpoint(dir / "data.ckpt"));
    bitwise = bitwise && dback.images.storage() == te.images.storage() && dback.labels == te.labels;
    fs::remove_all(dir);

    return {bitwise && curves, std::string("cnn/fcn/efcn/dataset round trip ") + (bitwise ? "bitwise" : "DIFFERS") +
                                   ", rerun curves " + (curves ? "bitwise equal" : "DIFFER")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"functional equivalence", equivalence},
        {"gradient pullback", pullback_check},
        {"autodiff primitives", autodiff},
        {"hessian probe", hessian},
        {"deviation ratio", deviation},
        {"string method", string_method},
        {"elastic loss", elastic_exact},
        {"desk-scale protocol", protocol},
        {"checkpoint round trip", checkpoints},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("criterion %zu %s: %s - %s [%.1fs]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
