#include "commands.hpp"

#include <efcn/errors.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

enum Exit { ok = 0, usage = 1, config = 2, runtime = 3 };

int report(Exit code, const std::string& kind, const std::string& message, nlohmann::json extra = {}) {
    nlohmann::json err{{"error", kind}, {"message", message}, {"exit_code", static_cast<int>(code)}};
    if (extra.is_object()) err.update(extra);
    std::cerr << err.dump() << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace efcn;
    using namespace efcn::cli;

    CLI::App app{"Embed CNNs into equivalent fully-connected networks and study the relaxed models."};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> sets;
    std::string runs_root = "runs";
    std::string run_id = "default";
    bool quiet = false;
    app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("-s,--set", sets, "Override a config key, e.g. --set cnn.epochs=5");
    app.add_option("--runs", runs_root, "Directory holding run directories");
    app.add_option("-r,--run-id", run_id, "Run directory name");
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    auto* synth = app.add_subcommand("synth", "Generate the configured dataset and store it in the run");
    auto* train_cnn = app.add_subcommand("train-cnn", "Train the CNN and save log-spaced snapshots");
    auto* train_fcn = app.add_subcommand("train-fcn", "Train a freshly initialized FCN");
    auto* embed = app.add_subcommand("embed", "Embed CNN snapshots into FCN space");
    std::optional<int> embed_tw;
    embed->add_option("--tw", embed_tw, "Snapshot epoch (default: all)");
    auto* relax = app.add_subcommand("relax", "Train the eFCN embedded at one relax time");
    int relax_tw = 0;
    relax->add_option("--tw", relax_tw, "Snapshot epoch")->required();
    auto* protocol = app.add_subcommand("protocol", "Run the full relax protocol with probes");
    auto* probe = app.add_subcommand("probe", "Gradient, Hessian and deviation probes on eFCNs");
    std::string what = "all";
    probe->add_option("--what", what, "Probe set")->check(CLI::IsMember({"grad", "hessian", "delta", "all"}));
    auto* mask_eval = app.add_subcommand("mask-eval", "Test accuracy with one block of eFCN weights zeroed");
    std::string keep;
    mask_eval->add_option("--keep", keep, "Block to keep")->required()->check(CLI::IsMember({"local", "offlocal"}));
    auto* interp = app.add_subcommand("interp", "Interpolate between the CNN solution and an eFCN");
    std::string method;
    int points = -1;
    std::optional<int> interp_tw;
    interp->add_option("--method", method, "Interpolation")->required()->check(
        CLI::IsMember({"linear", "string", "output"}));
    interp->add_option("--n", points, "Number of points (default from config)")->check(CLI::Range(2, 100000));
    interp->add_option("--tw", interp_tw, "Relax time of the eFCN endpoint (default: earliest)");
    auto* filters = app.add_subcommand("filters", "Log-magnitude heatmap of one eFCN dense row");
    int layer = 0, channel = 0;
    std::string pos;
    std::optional<int> filters_tw;
    std::string phase = "after_training";
    filters->add_option("--layer", layer, "Layer index in the model")->required();
    filters->add_option("--channel", channel, "Output channel")->required();
    filters->add_option("--pos", pos, "Output position i,j")->required();
    filters->add_option("--tw", filters_tw, "Relax time (default: earliest)");
    filters->add_option("--phase", phase, "Model state")->check(CLI::IsMember({"at_embedding", "after_training"}));
    auto* verify = app.add_subcommand("verify", "Run the built-in correctness checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report(usage, "usage", e.what());
    }

    try {
        Config cfg = load_config(config_path, sets);
        Context ctx{cfg, config_to_json(cfg), RunDir(runs_root, run_id), quiet, &std::cout};

        if (*synth) cmd_synth(ctx);
        else if (*train_cnn) cmd_train_cnn(ctx);
        else if (*train_fcn) cmd_train_fcn(ctx);
        else if (*embed) cmd_embed(ctx, embed_tw);
        else if (*relax) cmd_relax(ctx, relax_tw);
        else if (*protocol) cmd_protocol(ctx);
        else if (*probe) cmd_probe(ctx, what);
        else if (*mask_eval) cmd_mask_eval(ctx, keep);
        else if (*interp) cmd_interp(ctx, method, points > 0 ? points : cfg.interp.points, interp_tw);
        else if (*filters) {
            const auto comma = pos.find(',');
            int i = 0, j = 0;
            try {
                if (comma == std::string::npos) throw std::invalid_argument(pos);
                i = std::stoi(pos.substr(0, comma));
                j = std::stoi(pos.substr(comma + 1));
            } catch (const std::exception&) {
                return report(usage, "usage", "--pos expects i,j, got '" + pos + "'");
            }
            cmd_filters(ctx, layer, channel, i, j, filters_tw, phase);
        } else if (*verify) {
            if (!cmd_verify(ctx)) return report(runtime, "verification", "one or more checks failed");
        }
    } catch (const ConfigError& e) {
        return report(config, "config", e.what(), {{"key", e.key()}});
    } catch (const FormatError& e) {
        return report(runtime, "format", e.what(), {{"offset", e.offset()}});
    } catch (const DivergenceError& e) {
        return report(runtime, "divergence", e.what(), {{"epoch", e.epoch()}, {"batch", e.batch()}});
    } catch (const MemoryBudgetError& e) {
        return report(runtime, "memory_budget", e.what(),
                      {{"required_bytes", e.required_bytes()}, {"budget_bytes", e.budget_bytes()}});
    } catch (const NonFiniteError& e) {
        return report(runtime, "non_finite", e.what(), {{"layer", e.layer()}});
    } catch (const std::exception& e) {
        return report(runtime, "runtime", e.what());
    }
    return ok;
}
