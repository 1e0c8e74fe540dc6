#pragma once

#include "run_dir.hpp"

#include <efcn/config.hpp>

#include <iosfwd>
#include <optional>
#include <string>

namespace efcn::cli {

struct Context {
    Config config;
    nlohmann::json config_json;
    RunDir run;
    bool quiet = false;
    std::ostream* log = nullptr;
};

void cmd_synth(Context& ctx);
void cmd_train_cnn(Context& ctx);
void cmd_train_fcn(Context& ctx);
void cmd_embed(Context& ctx, std::optional<int> t_w);
void cmd_relax(Context& ctx, int t_w);
void cmd_protocol(Context& ctx);
void cmd_probe(Context& ctx, const std::string& what);
void cmd_mask_eval(Context& ctx, const std::string& keep);
void cmd_interp(Context& ctx, const std::string& method, int n, std::optional<int> t_w);
void cmd_filters(Context& ctx, int layer, int channel, int i, int j, std::optional<int> t_w, const std::string& phase);
/// Returns false when any check fails.
bool cmd_verify(Context& ctx);

}  // namespace efcn::cli
