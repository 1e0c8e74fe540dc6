#include "run_dir.hpp"

#include <efcn/errors.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <memory>
#include <sstream>

namespace efcn::cli {

namespace {

void write_exclusive(const fs::path& path, const void* data, std::size_t size) {
    fs::create_directories(path.parent_path());
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wbx"), &std::fclose);
    if (!f) {
        if (fs::exists(path)) throw Error("refusing to overwrite existing run output " + path.string());
        throw Error("cannot create " + path.string());
    }
    if (size > 0 && std::fwrite(data, 1, size, f.get()) != size) throw Error("short write on " + path.string());
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

RunDir::RunDir(fs::path root, std::string id) : path_(std::move(root) / id), id_(std::move(id)) {
    if (id_.empty() || id_.find('/') != std::string::npos || id_ == "." || id_ == "..") {
        throw ConfigError("run-id", "run id must be a plain, non-empty name");
    }
}

void RunDir::require_absent(const std::vector<fs::path>& rels) const {
    for (const auto& r : rels) {
        if (exists(r)) throw Error("refusing to overwrite existing run output " + file(r).string());
    }
}

void RunDir::write_text(const fs::path& rel, const std::string& text) const {
    write_exclusive(file(rel), text.data(), text.size());
}

void RunDir::write_json(const fs::path& rel, const nlohmann::json& j) const { write_text(rel, j.dump(2) + "\n"); }

void RunDir::write_checkpoint(const fs::path& rel, const Checkpoint& ckpt) const {
    const auto bytes = encode_checkpoint(ckpt);
    write_exclusive(file(rel), bytes.data(), bytes.size());
}

Checkpoint RunDir::read_checkpoint(const fs::path& rel) const {
    if (!exists(rel)) throw Error("missing run artifact " + file(rel).string());
    return load_checkpoint(file(rel));
}

std::vector<int> RunDir::snapshot_epochs() const {
    std::vector<int> out;
    const fs::path dir = file("cnn");
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        const std::string pre = "snapshot_e", post = ".ckpt";
        if (name.size() <= pre.size() + post.size() || name.rfind(pre, 0) != 0 ||
            name.compare(name.size() - post.size(), post.size(), post) != 0) {
            continue;
        }
        int v = 0;
        const char* b = name.data() + pre.size();
        const char* end = name.data() + name.size() - post.size();
        if (std::from_chars(b, end, v).ptr == end) out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> RunDir::efcn_epochs(const std::string& fname) const {
    std::vector<int> out;
    const fs::path dir = file("efcn");
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("tw", 0) != 0 || !fs::exists(e.path() / fname)) continue;
        int v = 0;
        const char* end = name.data() + name.size();
        if (std::from_chars(name.data() + 2, end, v).ptr == end) out.push_back(v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

fs::path snapshot_file(int t_w) { return fs::path("cnn") / ("snapshot_e" + std::to_string(t_w) + ".ckpt"); }
fs::path efcn_dir(int t_w) { return fs::path("efcn") / ("tw" + std::to_string(t_w)); }

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string curves_csv(const std::string& run_id, const std::string& phase, const Curve& curve) {
    std::ostringstream out;
    out << "run_id,phase,epoch,split,loss,accuracy\n";
    auto row = [&](const EpochMetrics& m) {
        out << run_id << ',' << phase << ',' << m.epoch << ",train," << format_double(m.train_loss) << ','
            << format_double(m.train_accuracy) << '\n';
        out << run_id << ',' << phase << ',' << m.epoch << ",test," << format_double(m.test_loss) << ','
            << format_double(m.test_accuracy) << '\n';
    };
    row(curve.initial);
    for (const auto& m : curve.points) row(m);
    return out.str();
}

std::string probes_csv(const std::vector<ProbeReport>& reports) {
    std::ostringstream out;
    out << "t_w,phase,grad_norm,lambda_max,delta,test_acc,test_acc_local,test_acc_offlocal\n";
    for (const auto& r : reports) {
        out << r.t_w << ',' << to_string(r.phase) << ',' << opt(r.grad_norm) << ',' << opt(r.lambda_max) << ','
            << opt(r.delta) << ',' << format_double(r.test_accuracy) << ',' << opt(r.test_accuracy_local) << ','
            << opt(r.test_accuracy_offlocal) << '\n';
    }
    return out.str();
}

std::string paths_csv(const std::vector<ProfileRow>& rows) {
    std::ostringstream out;
    out << "method,alpha,train_loss,test_accuracy\n";
    for (const auto& r : rows) {
        out << r.method << ',' << format_double(r.alpha) << ',' << format_double(r.train_loss) << ','
            << format_double(r.test_accuracy) << '\n';
    }
    return out.str();
}

std::string heatmap_csv(const Heatmap& h) {
    std::ostringstream out;
    out << "channel,row";
    for (int j = 0; j < h.width; ++j) out << ",v" << j;
    out << '\n';
    for (int c = 0; c < h.channels; ++c) {
        for (int i = 0; i < h.height; ++i) {
            out << c << ',' << i;
            for (int j = 0; j < h.width; ++j) {
                out << ',' << format_double(h.values[(static_cast<std::size_t>(c) * h.height + i) * h.width + j]);
            }
            out << '\n';
        }
    }
    return out.str();
}

}  // namespace efcn::cli
