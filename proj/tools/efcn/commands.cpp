#include "commands.hpp"

#include <efcn/embed.hpp>
#include <efcn/errors.hpp>
#include <efcn/verify.hpp>

#include <ostream>
#include <sstream>

namespace efcn::cli {

namespace {

using nlohmann::json;

struct Data {
    Dataset train;
    Dataset test;
};

Data load(Context& ctx) {
    auto [train, test] = load_data(ctx.config);
    return {std::move(train), std::move(test)};
}

void say(Context& ctx, const std::string& line) {
    if (!ctx.quiet && ctx.log) *ctx.log << line << '\n' << std::flush;
}

ProgressFn progress(Context& ctx) {
    if (ctx.quiet || !ctx.log) return {};
    return [&ctx](const std::string& id, const EpochMetrics& m) {
        std::ostringstream s;
        s << id << " epoch " << m.epoch << " train_loss " << m.train_loss << " test_acc " << m.test_accuracy;
        say(ctx, s.str());
    };
}

ModelSpec cnn_spec(const Context& ctx, const Dataset& train) {
    const auto& p = ctx.config.protocol;
    return build_vanilla_cnn(p.channels, train.shape(), train.classes, p.dropout);
}

Checkpoint model_ckpt(const std::string& kind, const ModelSpec& spec, const ParamVector& theta, int epoch,
                      std::uint64_t seed, const OptimizerState& opt = {}, const ModelSpec* from = nullptr,
                      std::optional<int> t_w = std::nullopt) {
    ModelCheckpoint m;
    m.kind = kind;
    m.spec = spec;
    m.theta = theta;
    m.epoch = epoch;
    m.seed = seed;
    m.optimizer = opt;
    if (from) m.embedded_from = *from;
    m.t_w = t_w;
    return to_checkpoint(m);
}

json curve_summary(const Curve& c) {
    const EpochMetrics& last = c.points.empty() ? c.initial : c.points.back();
    return {{"epochs", last.epoch},
            {"initial_test_accuracy", c.initial.test_accuracy},
            {"final_test_accuracy", last.test_accuracy},
            {"final_train_loss", last.train_loss}};
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s.empty() ? "none" : s;
}

int pick_tw(const RunDir& run, std::optional<int> t_w, const std::string& file, const std::string& what) {
    const auto have = run.efcn_epochs(file);
    if (t_w) {
        if (std::find(have.begin(), have.end(), *t_w) == have.end()) {
            throw Error("no " + what + " for t_w=" + std::to_string(*t_w) + "; available t_w: " + join(have));
        }
        return *t_w;
    }
    if (have.empty()) throw Error("run " + run.id() + " has no " + what + " yet");
    return have.front();
}

struct LoadedEfcn {
    ModelCheckpoint ckpt;
    std::shared_ptr<const EmbeddingMap> map;
};

LoadedEfcn load_efcn(Context& ctx, int t_w, const std::string& file,
                     std::shared_ptr<const EmbeddingMap> map = nullptr) {
    LoadedEfcn out;
    out.ckpt = model_from_checkpoint(ctx.run.read_checkpoint(efcn_dir(t_w) / file));
    if (!out.ckpt.embedded_from) throw FormatError(0, "checkpoint " + file + " does not record its source CNN");
    if (!map || !(map->cnn_spec() == *out.ckpt.embedded_from)) {
        map = std::make_shared<const EmbeddingMap>(
            build_embedding_map(*out.ckpt.embedded_from, ctx.config.protocol.embed));
    }
    out.map = std::move(map);
    return out;
}

json config_record(const Context& ctx, const std::string& command) {
    return {{"command", command}, {"config", ctx.config_json}};
}

}  // namespace

void cmd_synth(Context& ctx) {
    const std::vector<fs::path> outs{"data/train.ckpt", "data/test.ckpt", "data/summary.json"};
    ctx.run.require_absent(outs);
    const auto d = load(ctx);
    ctx.run.write_checkpoint(outs[0], dataset_checkpoint(d.train));
    ctx.run.write_checkpoint(outs[1], dataset_checkpoint(d.test));
    const auto s = d.train.shape();
    ctx.run.write_json(outs[2], {{"source", to_string(ctx.config.data.source)},
                                 {"train", d.train.size()},
                                 {"test", d.test.size()},
                                 {"classes", d.train.classes},
                                 {"shape", {s.channels, s.height, s.width}},
                                 {"config", ctx.config_json}});
    say(ctx, "wrote " + ctx.run.file("data").string());
}

void cmd_train_cnn(Context& ctx) {
    ctx.run.require_absent({"cnn/curves.csv", "cnn/final.ckpt", "cnn/summary.json"});
    const auto d = load(ctx);
    const auto& p = ctx.config.protocol;
    const ModelSpec spec = cnn_spec(ctx, d.train);
    const auto schedule = log_spaced_epochs(p.cnn.epochs, p.snapshots);
    for (int e : schedule) ctx.run.require_absent({snapshot_file(e)});

    auto r = train(spec, TrainState{init_params(spec, p.seed), {}, 0}, d.train, d.test, p.cnn, schedule, "cnn",
                   progress(ctx));
    for (const auto& s : r.snapshots) {
        ctx.run.write_checkpoint(snapshot_file(s.epoch), model_ckpt("cnn", spec, s.theta, s.epoch, p.cnn.seed, s.optimizer));
    }
    ctx.run.write_checkpoint("cnn/final.ckpt", model_ckpt("cnn", spec, r.final_state.theta, r.final_state.epoch,
                                                          p.cnn.seed, r.final_state.optimizer));
    ctx.run.write_text("cnn/curves.csv", curves_csv(ctx.run.id(), "cnn", r.curve));
    json summary = config_record(ctx, "train-cnn");
    summary["curve"] = curve_summary(r.curve);
    summary["snapshots"] = schedule;
    summary["params"] = param_count(spec);
    ctx.run.write_json("cnn/summary.json", summary);
}

void cmd_train_fcn(Context& ctx) {
    ctx.run.require_absent({"fcn/curves.csv", "fcn/init.ckpt", "fcn/final.ckpt", "fcn/summary.json"});
    const auto d = load(ctx);
    const auto& p = ctx.config.protocol;
    const ModelSpec spec = build_fcn_from(cnn_spec(ctx, d.train));
    const ParamVector theta0 = init_params(spec, fcn_init_seed(p.seed));
    auto r = train(spec, TrainState{theta0, {}, 0}, d.train, d.test, p.dense, {}, "fcn", progress(ctx));
    ctx.run.write_checkpoint("fcn/init.ckpt", model_ckpt("fcn", spec, theta0, 0, fcn_init_seed(p.seed)));
    ctx.run.write_checkpoint("fcn/final.ckpt", model_ckpt("fcn", spec, r.final_state.theta, r.final_state.epoch,
                                                          p.dense.seed, r.final_state.optimizer));
    ctx.run.write_text("fcn/curves.csv", curves_csv(ctx.run.id(), "fcn", r.curve));
    json summary = config_record(ctx, "train-fcn");
    summary["curve"] = curve_summary(r.curve);
    summary["params"] = param_count(spec);
    ctx.run.write_json("fcn/summary.json", summary);
}

namespace {

std::shared_ptr<const EmbeddingMap> embed_one(Context& ctx, int t_w, std::shared_ptr<const EmbeddingMap> map) {
    const auto have = ctx.run.snapshot_epochs();
    if (std::find(have.begin(), have.end(), t_w) == have.end()) {
        throw Error("no CNN snapshot at epoch " + std::to_string(t_w) + "; available t_w: " + join(have));
    }
    const ModelCheckpoint snap = model_from_checkpoint(ctx.run.read_checkpoint(snapshot_file(t_w)));
    if (!map || !(map->cnn_spec() == snap.spec)) {
        map = std::make_shared<const EmbeddingMap>(build_embedding_map(snap.spec, ctx.config.protocol.embed));
    }
    const ParamVector theta = map->apply(snap.theta);
    ctx.run.write_checkpoint(efcn_dir(t_w) / "init.ckpt",
                             model_ckpt("efcn", map->fcn_spec(), theta, 0, snap.seed, {}, &snap.spec, t_w));
    say(ctx, "embedded t_w=" + std::to_string(t_w) + " into " + std::to_string(map->fcn_size()) + " parameters");
    return map;
}

}  // namespace

void cmd_embed(Context& ctx, std::optional<int> t_w) {
    std::vector<int> which = t_w ? std::vector<int>{*t_w} : ctx.run.snapshot_epochs();
    if (which.empty()) throw Error("run " + ctx.run.id() + " has no CNN snapshots; run train-cnn first");
    for (int e : which) ctx.run.require_absent({efcn_dir(e) / "init.ckpt"});
    std::shared_ptr<const EmbeddingMap> map;
    for (int e : which) map = embed_one(ctx, e, map);
}

void cmd_relax(Context& ctx, int t_w) {
    const fs::path dir = efcn_dir(t_w);
    ctx.run.require_absent({dir / "curves.csv", dir / "final.ckpt"});
    const auto have = ctx.run.snapshot_epochs();
    if (std::find(have.begin(), have.end(), t_w) == have.end()) {
        throw Error("t_w=" + std::to_string(t_w) + " is not a recorded snapshot epoch; available t_w: " + join(have));
    }
    const auto d = load(ctx);
    if (!ctx.run.exists(dir / "init.ckpt")) embed_one(ctx, t_w, nullptr);
    const auto e = load_efcn(ctx, t_w, "init.ckpt");
    TrainConfig c = ctx.config.protocol.dense;
    c.seed = efcn_train_seed(c.seed, t_w);
    auto r = train(e.ckpt.spec, TrainState{e.ckpt.theta, {}, 0}, d.train, d.test, c, {},
                   "efcn_tw" + std::to_string(t_w), progress(ctx));
    ctx.run.write_checkpoint(dir / "final.ckpt", model_ckpt("efcn", e.ckpt.spec, r.final_state.theta,
                                                            r.final_state.epoch, c.seed, r.final_state.optimizer,
                                                            &*e.ckpt.embedded_from, t_w));
    ctx.run.write_text(dir / "curves.csv", curves_csv(ctx.run.id(), "efcn_tw" + std::to_string(t_w), r.curve));
}

namespace {

ProbeOptions probe_options(const Context& ctx, const std::string& what) {
    ProbeOptions o;
    o.gradient = what == "grad" || what == "all";
    o.hessian = what == "hessian" || what == "all";
    o.deviation = what == "delta" || what == "all";
    o.masks = what == "all";
    o.power.max_iters = ctx.config.probes.max_iters;
    o.power.tol = ctx.config.probes.tol;
    o.power.seed = ctx.config.seed;
    o.power.hvp.eps0 = ctx.config.probes.eps0;
    return o;
}

}  // namespace

void cmd_protocol(Context& ctx) {
    const auto& p = ctx.config.protocol;
    const auto schedule = log_spaced_epochs(p.cnn.epochs, p.snapshots);
    std::vector<fs::path> outs{"cnn/curves.csv", "cnn/final.ckpt", "fcn/curves.csv", "fcn/init.ckpt",
                               "fcn/final.ckpt", "probes.csv", "summary.json"};
    for (int e : schedule) {
        outs.push_back(snapshot_file(e));
        outs.push_back(efcn_dir(e) / "init.ckpt");
        outs.push_back(efcn_dir(e) / "final.ckpt");
        outs.push_back(efcn_dir(e) / "curves.csv");
    }
    ctx.run.require_absent(outs);
    const auto d = load(ctx);
    const RunReport rep = relax_protocol(p, d.train, d.test, progress(ctx));

    for (const auto& s : rep.snapshots) {
        ctx.run.write_checkpoint(snapshot_file(s.epoch),
                                 model_ckpt("cnn", rep.cnn_spec, s.theta, s.epoch, p.cnn.seed, s.optimizer));
    }
    ctx.run.write_checkpoint("cnn/final.ckpt", model_ckpt("cnn", rep.cnn_spec, rep.cnn_final, p.cnn.epochs, p.cnn.seed));
    ctx.run.write_text("cnn/curves.csv", curves_csv(ctx.run.id(), "cnn", rep.cnn));
    ctx.run.write_checkpoint("fcn/init.ckpt", model_ckpt("fcn", rep.fcn_spec, rep.fcn_init, 0, fcn_init_seed(p.seed)));
    ctx.run.write_checkpoint("fcn/final.ckpt", model_ckpt("fcn", rep.fcn_spec, rep.fcn_final, p.dense.epochs, p.dense.seed));
    ctx.run.write_text("fcn/curves.csv", curves_csv(ctx.run.id(), "fcn", rep.fcn));

    const Batch probe_set = subsample(d.train, ctx.config.probes.samples, ctx.config.seed);
    const ProbeOptions opts = probe_options(ctx, "all");
    std::vector<ProbeReport> reports;
    json efcn_summary = json::array();
    for (const auto& run : rep.efcn) {
        const fs::path dir = efcn_dir(run.t_w);
        const std::uint64_t seed = efcn_train_seed(p.dense.seed, run.t_w);
        ctx.run.write_checkpoint(dir / "init.ckpt", model_ckpt("efcn", rep.fcn_spec, run.theta_init, 0, seed, {},
                                                               &rep.cnn_spec, run.t_w));
        ctx.run.write_checkpoint(dir / "final.ckpt", model_ckpt("efcn", rep.fcn_spec, run.theta_final,
                                                                p.dense.epochs, seed, {}, &rep.cnn_spec, run.t_w));
        const std::string id = "efcn_tw" + std::to_string(run.t_w);
        ctx.run.write_text(dir / "curves.csv", curves_csv(ctx.run.id(), id, run.curve));
        say(ctx, "probing " + id);
        reports.push_back(probe_model("efcn", run.t_w, ProbePhase::at_embedding, rep.fcn_spec, run.theta_init,
                                      probe_set, d.test, &rep.map->mask(), opts));
        reports.push_back(probe_model("efcn", run.t_w, ProbePhase::after_training, rep.fcn_spec, run.theta_final,
                                      probe_set, d.test, &rep.map->mask(), opts));
        json e = curve_summary(run.curve);
        e["t_w"] = run.t_w;
        e["delta"] = *reports.back().delta;
        efcn_summary.push_back(e);
    }
    ctx.run.write_text("probes.csv", probes_csv(reports));
    json summary = config_record(ctx, "protocol");
    summary["snapshots"] = schedule;
    summary["cnn"] = curve_summary(rep.cnn);
    summary["fcn"] = curve_summary(rep.fcn);
    summary["fcn"]["delta_init"] = delta(rep.fcn_init, rep.map->mask());
    summary["fcn"]["delta_final"] = delta(rep.fcn_final, rep.map->mask());
    summary["efcn"] = efcn_summary;
    summary["params"] = {{"cnn", param_count(rep.cnn_spec)}, {"fcn", param_count(rep.fcn_spec)}};
    ctx.run.write_json("summary.json", summary);
}

void cmd_probe(Context& ctx, const std::string& what) {
    const fs::path out = what == "all" ? fs::path("probes.csv") : fs::path("probes_" + what + ".csv");
    ctx.run.require_absent({out});
    const auto inits = ctx.run.efcn_epochs("init.ckpt");
    if (inits.empty()) throw Error("run " + ctx.run.id() + " has no embedded models; run embed or protocol first");
    const auto d = load(ctx);
    const Batch probe_set = subsample(d.train, ctx.config.probes.samples, ctx.config.seed);
    const ProbeOptions opts = probe_options(ctx, what);
    std::vector<ProbeReport> reports;
    std::shared_ptr<const EmbeddingMap> map;
    for (int t_w : inits) {
        for (const auto& [file, phase] : {std::pair{"init.ckpt", ProbePhase::at_embedding},
                                          std::pair{"final.ckpt", ProbePhase::after_training}}) {
            if (!ctx.run.exists(efcn_dir(t_w) / file)) continue;
            auto e = load_efcn(ctx, t_w, file, map);
            map = e.map;
            say(ctx, "probing t_w=" + std::to_string(t_w) + " " + to_string(phase));
            reports.push_back(
                probe_model("efcn", t_w, phase, e.ckpt.spec, e.ckpt.theta, probe_set, d.test, &map->mask(), opts));
        }
    }
    ctx.run.write_text(out, probes_csv(reports));
}

void cmd_mask_eval(Context& ctx, const std::string& keep_name) {
    const Keep keep = keep_name == "local" ? Keep::local : Keep::off_local;
    const fs::path out = "mask_eval_" + keep_name + ".csv";
    ctx.run.require_absent({out});
    const auto inits = ctx.run.efcn_epochs("init.ckpt");
    if (inits.empty()) throw Error("run " + ctx.run.id() + " has no embedded models; run embed or protocol first");
    const auto d = load(ctx);
    std::ostringstream csv;
    csv << "t_w,phase,keep,test_accuracy\n";
    std::shared_ptr<const EmbeddingMap> map;
    for (int t_w : inits) {
        for (const auto& [file, phase] : {std::pair{"init.ckpt", ProbePhase::at_embedding},
                                          std::pair{"final.ckpt", ProbePhase::after_training}}) {
            if (!ctx.run.exists(efcn_dir(t_w) / file)) continue;
            auto e = load_efcn(ctx, t_w, file, map);
            map = e.map;
            const double acc = masked_accuracy(e.ckpt.spec, e.ckpt.theta, map->mask(), keep, d.test);
            csv << t_w << ',' << to_string(phase) << ',' << keep_name << ',' << format_double(acc) << '\n';
        }
    }
    ctx.run.write_text(out, csv.str());
}

void cmd_interp(Context& ctx, const std::string& method, int n, std::optional<int> t_w_opt) {
    const int t_w = pick_tw(ctx.run, t_w_opt, "final.ckpt", "trained eFCN");
    const fs::path out = "paths_" + method + "_tw" + std::to_string(t_w) + ".csv";
    ctx.run.require_absent({out});
    const auto d = load(ctx);
    const auto e = load_efcn(ctx, t_w, "final.ckpt");
    const ModelCheckpoint cnn = model_from_checkpoint(ctx.run.read_checkpoint("cnn/final.ckpt"));
    if (!(cnn.spec == e.map->cnn_spec())) throw Error("cnn/final.ckpt does not match the eFCN's source CNN");

    std::vector<ProfileRow> rows;
    if (method == "output") {
        rows = output_profile(even_alphas(n), cnn.spec, cnn.theta, e.ckpt.spec, e.ckpt.theta, d.train, d.test);
    } else {
        Path path = linear_path(e.map->apply(cnn.theta), e.ckpt.theta, n);
        if (method == "string") {
            StringConfig sc = ctx.config.interp.string;
            sc.seed = ctx.config.seed;
            path = string_relax(std::move(path), sc, e.ckpt.spec, d.train);
        }
        rows = path_profile(method, path, e.ckpt.spec, d.train, d.test);
    }
    ctx.run.write_text(out, paths_csv(rows));
    say(ctx, "wrote " + ctx.run.file(out).string());
}

void cmd_filters(Context& ctx, int layer, int channel, int i, int j, std::optional<int> t_w_opt,
                 const std::string& phase) {
    const std::string file = phase == "at_embedding" ? "init.ckpt" : "final.ckpt";
    const int t_w = pick_tw(ctx.run, t_w_opt, file, phase == "at_embedding" ? "embedded eFCN" : "trained eFCN");
    const fs::path out = "filters_tw" + std::to_string(t_w) + "_" + phase + "_l" + std::to_string(layer) + "_c" +
                         std::to_string(channel) + "_" + std::to_string(i) + "_" + std::to_string(j) + ".csv";
    ctx.run.require_absent({out});
    const auto e = load_efcn(ctx, t_w, file);
    const Heatmap h = filter_heatmap(e.ckpt.theta, *e.map, layer, channel, i, j);
    ctx.run.write_text(out, heatmap_csv(h));
    say(ctx, "wrote " + ctx.run.file(out).string());
}

bool cmd_verify(Context& ctx) {
    ctx.run.require_absent({"verify.json"});
    VerifyOptions o;
    o.seed = ctx.config.seed;
    const auto results = run_verification(o);
    bool ok = true;
    json arr = json::array();
    for (const auto& r : results) {
        ok = ok && r.passed;
        std::ostringstream line;
        line << (r.passed ? "PASS " : "FAIL ") << r.name << " = " << r.value << " (tolerance " << r.tolerance << ")";
        if (!r.detail.empty()) line << " [" << r.detail << "]";
        say(ctx, line.str());
        arr.push_back({{"name", r.name}, {"passed", r.passed}, {"value", r.value}, {"tolerance", r.tolerance}, {"detail", r.detail}});
    }
    ctx.run.write_json("verify.json", {{"passed", ok}, {"checks", arr}});
    return ok;
}

}  // namespace efcn::cli
