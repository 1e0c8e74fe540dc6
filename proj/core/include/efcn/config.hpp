#pragma once

#include "efcn/dataset.hpp"
#include "efcn/interp.hpp"
#include "efcn/probes.hpp"
#include "efcn/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace efcn {

/// Environment variable naming the default directory for CIFAR files.
inline constexpr const char* kDataDirEnv = "EFCN_DATA_DIR";

enum class DataSource { synthetic, cifar10, cifar100 };

struct DataConfig {
    DataSource source = DataSource::synthetic;
    std::filesystem::path dir;
    SyntheticConfig synthetic;
    /// Rows kept from the training split, 0 for all.
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
};

struct ProbeConfig {
    std::size_t samples = 2048;
    int max_iters = 100;
    double tol = 1e-4;
    double eps0 = 1e-4;
};

struct InterpConfig {
    int points = 11;
    StringConfig string;
};

struct Config {
    std::uint64_t seed = 0;
    bool deterministic = true;
    DataConfig data;
    ProtocolConfig protocol = default_protocol_config();
    ProbeConfig probes;
    InterpConfig interp;
};

/// Every accepted key with its default value. Files and overrides may only
/// set keys that appear here.
nlohmann::json default_config_json();

/// Overlays `overrides` on the defaults. Unknown keys and type mismatches
/// raise ConfigError carrying the JSON pointer of the offending key.
Config parse_config(const nlohmann::json& overrides);
Config load_config(const std::filesystem::path& path, const std::vector<std::string>& sets = {});
/// Applies "a.b.c=value" assignments. Values parse as JSON, falling back to a
/// plain string.
nlohmann::json apply_sets(nlohmann::json doc, const std::vector<std::string>& sets);
nlohmann::json config_to_json(const Config& cfg);

std::string to_string(DataSource source);

/// Loads the configured train/test pair.
std::pair<Dataset, Dataset> load_data(const Config& cfg);

}  // namespace efcn
