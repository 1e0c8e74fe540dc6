#pragma once

#include <efcn/checkpoint.hpp>
#include <efcn/interp.hpp>
#include <efcn/probes.hpp>
#include <efcn/train.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace efcn::cli {

namespace fs = std::filesystem;

/// One run's output directory. Files are created exclusively: writing a path
/// that already exists is an error, so reruns never clobber results.
class RunDir {
public:
    RunDir(fs::path root, std::string id);

    const fs::path& path() const noexcept { return path_; }
    const std::string& id() const noexcept { return id_; }
    fs::path file(const fs::path& rel) const { return path_ / rel; }
    bool exists(const fs::path& rel) const { return fs::exists(path_ / rel); }

    /// Throws if any of `rels` already exists. Call before expensive work.
    void require_absent(const std::vector<fs::path>& rels) const;

    void write_text(const fs::path& rel, const std::string& text) const;
    void write_json(const fs::path& rel, const nlohmann::json& j) const;
    void write_checkpoint(const fs::path& rel, const Checkpoint& ckpt) const;
    Checkpoint read_checkpoint(const fs::path& rel) const;

    /// t_w values with a saved CNN snapshot, ascending.
    std::vector<int> snapshot_epochs() const;
    /// t_w values with an eFCN directory containing `file`, ascending.
    std::vector<int> efcn_epochs(const std::string& file) const;

private:
    fs::path path_;
    std::string id_;
};

fs::path snapshot_file(int t_w);
fs::path efcn_dir(int t_w);

std::string format_double(double v);

/// run_id,phase,epoch,split,loss,accuracy
std::string curves_csv(const std::string& run_id, const std::string& phase, const Curve& curve);
/// t_w,phase,grad_norm,lambda_max,delta,test_acc,test_acc_local,test_acc_offlocal
std::string probes_csv(const std::vector<ProbeReport>& reports);
/// method,alpha,train_loss,test_accuracy
std::string paths_csv(const std::vector<ProfileRow>& rows);
/// channel,row,v0..v{w-1}
std::string heatmap_csv(const Heatmap& h);

}  // namespace efcn::cli
