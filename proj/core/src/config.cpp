#include "efcn/config.hpp"

#include "efcn/errors.hpp"

#include <cstdlib>
#include <fstream>

namespace efcn {

namespace {

using nlohmann::json;

json train_json(const TrainConfig& t) {
    return {{"lr", t.lr},
            {"batch_size", t.batch_size},
            {"epochs", t.epochs},
            {"optimizer", to_string(t.optimizer)},
            {"momentum", t.momentum},
            {"weight_decay", t.weight_decay},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"adam_eps", t.adam_eps},
            {"eval_every", t.eval_every}};
}

void read_train(const json& j, TrainConfig& t) {
    t.lr = j.at("lr").get<double>();
    t.batch_size = j.at("batch_size").get<int>();
    t.epochs = j.at("epochs").get<int>();
    t.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    t.momentum = j.at("momentum").get<double>();
    t.weight_decay = j.at("weight_decay").get<double>();
    t.adam_beta1 = j.at("adam_beta1").get<double>();
    t.adam_beta2 = j.at("adam_beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.eval_every = j.at("eval_every").get<int>();
}

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) {
        if (a.is_number_integer() || a.is_number_unsigned()) return b.is_number_integer() || b.is_number_unsigned();
        return true;
    }
    return a.type() == b.type();
}

const char* kind_name(const json& j) {
    if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
    return j.type_name();
}

void overlay(json& base, const json& over, const std::string& path) {
    if (!over.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected an object at " + (path.empty() ? "/" : path));
    for (auto it = over.begin(); it != over.end(); ++it) {
        const std::string key = path + "/" + it.key();
        if (!base.contains(it.key())) throw ConfigError(key, "unknown config key " + key);
        json& slot = base[it.key()];
        if (slot.is_object()) {
            overlay(slot, it.value(), key);
        } else if (!same_kind(slot, it.value())) {
            throw ConfigError(key, "config key " + key + " expects " + kind_name(slot) + ", got " + kind_name(it.value()));
        } else {
            slot = it.value();
        }
    }
}

template <class F>
void guarded(const std::string& key, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(key, "invalid value at " + key + ": " + e.what());
    }
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key, "invalid value at " + key + ": " + what);
}

}  // namespace

std::string to_string(DataSource source) {
    switch (source) {
        case DataSource::synthetic: return "synthetic";
        case DataSource::cifar10: return "cifar10";
        case DataSource::cifar100: return "cifar100";
    }
    return "?";
}

json default_config_json() {
    const Config c;
    return config_to_json(c);
}

json config_to_json(const Config& c) {
    const auto& s = c.data.synthetic;
    const auto& p = c.protocol;
    return {{"seed", c.seed},
            {"deterministic", c.deterministic},
            {"data",
             {{"source", to_string(c.data.source)},
              {"dir", c.data.dir.string()},
              {"train_limit", c.data.train_limit},
              {"test_limit", c.data.test_limit},
              {"synthetic",
               {{"classes", s.classes},
                {"canvas", s.canvas},
                {"pattern", s.pattern},
                {"train", s.train},
                {"test", s.test},
                {"noise", s.noise}}}}},
            {"model", {{"channels", p.channels}, {"dropout", p.dropout}}},
            {"cnn", train_json(p.cnn)},
            {"dense", train_json(p.dense)},
            {"protocol", {{"snapshots", p.snapshots}, {"workers", p.workers}, {"max_embed_bytes", p.embed.max_bytes}}},
            {"probes",
             {{"samples", c.probes.samples},
              {"max_iters", c.probes.max_iters},
              {"tol", c.probes.tol},
              {"eps0", c.probes.eps0}}},
            {"interp",
             {{"points", c.interp.points},
              {"stiffness", c.interp.string.stiffness},
              {"steps", c.interp.string.steps},
              {"lr", c.interp.string.lr},
              {"batch_size", c.interp.string.batch_size}}}};
}

Config parse_config(const json& overrides) {
    json doc = default_config_json();
    if (!overrides.is_null()) overlay(doc, overrides, "");

    Config c;
    c.seed = doc["seed"].get<std::uint64_t>();
    c.deterministic = doc["deterministic"].get<bool>();

    const json& d = doc["data"];
    const auto src = d["source"].get<std::string>();
    if (src == "synthetic") {
        c.data.source = DataSource::synthetic;
    } else if (src == "cifar10") {
        c.data.source = DataSource::cifar10;
    } else if (src == "cifar100") {
        c.data.source = DataSource::cifar100;
    } else {
        throw ConfigError("/data/source", "data source must be synthetic, cifar10 or cifar100, got '" + src + "'");
    }
    c.data.dir = d["dir"].get<std::string>();
    c.data.train_limit = d["train_limit"].get<std::size_t>();
    c.data.test_limit = d["test_limit"].get<std::size_t>();
    auto& s = c.data.synthetic;
    const json& sj = d["synthetic"];
    s.classes = sj["classes"].get<int>();
    s.canvas = sj["canvas"].get<int>();
    s.pattern = sj["pattern"].get<int>();
    s.train = sj["train"].get<int>();
    s.test = sj["test"].get<int>();
    s.noise = sj["noise"].get<double>();
    require(s.classes >= 2, "/data/synthetic/classes", "need at least 2 classes");
    require(s.pattern >= 1 && s.pattern <= s.canvas, "/data/synthetic/pattern", "pattern side must be in [1, canvas]");
    require(s.train > 0 && s.test > 0, "/data/synthetic/train", "split sizes must be positive");
    require(s.noise >= 0.0, "/data/synthetic/noise", "noise must be non-negative");

    auto& p = c.protocol;
    p.seed = c.seed;
    p.channels = doc["model"]["channels"].get<int>();
    p.dropout = doc["model"]["dropout"].get<double>();
    require(p.channels > 0, "/model/channels", "must be positive");
    require(p.dropout >= 0.0 && p.dropout < 1.0, "/model/dropout", "must be in [0, 1)");
    guarded("/cnn", [&] {
        read_train(doc["cnn"], p.cnn);
        p.cnn.validate();
    });
    guarded("/dense", [&] {
        read_train(doc["dense"], p.dense);
        p.dense.validate();
    });
    p.cnn.deterministic = p.dense.deterministic = c.deterministic;
    p.cnn.seed = c.seed;
    p.dense.seed = c.seed + 1;
    p.snapshots = doc["protocol"]["snapshots"].get<int>();
    p.workers = doc["protocol"]["workers"].get<int>();
    p.embed.max_bytes = doc["protocol"]["max_embed_bytes"].get<std::uint64_t>();
    require(p.snapshots >= 2, "/protocol/snapshots", "need at least 2 snapshots");
    require(p.workers >= 1, "/protocol/workers", "need at least 1 worker");

    const json& pr = doc["probes"];
    c.probes.samples = pr["samples"].get<std::size_t>();
    c.probes.max_iters = pr["max_iters"].get<int>();
    c.probes.tol = pr["tol"].get<double>();
    c.probes.eps0 = pr["eps0"].get<double>();
    require(c.probes.samples > 0, "/probes/samples", "must be positive");
    require(c.probes.max_iters > 0, "/probes/max_iters", "must be positive");
    require(c.probes.tol > 0.0, "/probes/tol", "must be positive");
    require(c.probes.eps0 > 0.0, "/probes/eps0", "must be positive");

    const json& ij = doc["interp"];
    c.interp.points = ij["points"].get<int>();
    c.interp.string.stiffness = ij["stiffness"].get<double>();
    c.interp.string.steps = ij["steps"].get<int>();
    c.interp.string.lr = ij["lr"].get<double>();
    c.interp.string.batch_size = ij["batch_size"].get<int>();
    c.interp.string.seed = c.seed;
    require(c.interp.points >= 2, "/interp/points", "need at least 2 points");
    require(c.interp.string.stiffness >= 0.0, "/interp/stiffness", "must be non-negative");
    require(c.interp.string.steps >= 0, "/interp/steps", "must be non-negative");
    require(c.interp.string.lr > 0.0, "/interp/lr", "must be positive");
    require(c.interp.string.batch_size > 0, "/interp/batch_size", "must be positive");
    return c;
}

json apply_sets(json doc, const std::vector<std::string>& sets) {
    if (doc.is_null()) doc = json::object();
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError(s, "override must look like key.path=value: " + s);
        const std::string key = s.substr(0, eq);
        const std::string raw = s.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError(key, "empty component in override key " + key);
            if (!node->is_object()) throw ConfigError(key, "override key " + key + " descends into a non-object");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (node->is_null()) *node = json::object();
            start = dot + 1;
        }
    }
    return doc;
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& sets) {
    json doc = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw ConfigError("", "cannot read config file " + path.string());
        try {
            doc = json::parse(in, nullptr, true, true);
        } catch (const json::exception& e) {
            throw ConfigError("", "config file " + path.string() + " is not valid JSON: " + e.what());
        }
    }
    return parse_config(apply_sets(std::move(doc), sets));
}

std::pair<Dataset, Dataset> load_data(const Config& cfg) {
    std::pair<Dataset, Dataset> out;
    if (cfg.data.source == DataSource::synthetic) {
        out = gen_synthetic(cfg.data.synthetic, cfg.seed);
    } else {
        std::filesystem::path dir = cfg.data.dir;
        if (dir.empty()) {
            const char* env = std::getenv(kDataDirEnv);
            if (env == nullptr || *env == '\0') {
                throw ConfigError("/data/dir", std::string("no data directory: set data.dir or ") + kDataDirEnv);
            }
            dir = env;
        }
        out = cfg.data.source == DataSource::cifar10 ? load_cifar10(dir) : load_cifar100(dir);
    }
    auto trim = [&](Dataset& d, std::size_t limit) {
        if (limit == 0 || limit >= d.size()) return;
        const Batch b = subsample(d, limit, cfg.seed ^ 0x5eedULL);
        d.images = b.images;
        d.labels = b.labels;
    };
    trim(out.first, cfg.data.train_limit);
    trim(out.second, cfg.data.test_limit);
    return out;
}

}  // namespace efcn
