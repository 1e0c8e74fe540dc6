#pragma once

#include "efcn/model.hpp"
#include "efcn/params.hpp"
#include "efcn/tensor.hpp"
#include "efcn/train.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace efcn {

// Layout:
//   "EFCN" | u32 LE version | u64 LE header length | UTF-8 JSON header | payload
// The header holds {"meta": {...}, "arrays": [{name, dtype, shape, offset, length}]}.
// Offsets and lengths are in bytes relative to the first payload byte; every
// array is little-endian float32 and arrays are packed in index order.

inline constexpr char kCheckpointMagic[4] = {'E', 'F', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;

    bool operator==(const NamedArray&) const = default;
};

struct ArrayEntry {
    std::string name;
    std::string dtype;
    Shape shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray& array(const std::string& name) const;
    bool has_array(const std::string& name) const;
    bool operator==(const Checkpoint&) const = default;
};

struct CheckpointHeader {
    std::uint32_t version = 0;
    nlohmann::json meta;
    std::vector<ArrayEntry> index;
    std::uint64_t payload_offset = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
CheckpointHeader decode_checkpoint_header(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Reads only the fixed preamble and header; the payload is never touched.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Model checkpoints. kind is "cnn", "fcn" or "efcn"; an eFCN additionally
// records the CNN spec it was embedded from and its relax time.
struct ModelCheckpoint {
    std::string kind;
    ModelSpec spec;
    ParamVector theta;
    int epoch = 0;
    std::uint64_t seed = 0;
    OptimizerState optimizer;
    std::optional<ModelSpec> embedded_from;
    std::optional<int> t_w;
    nlohmann::json extra = nlohmann::json::object();
};

Checkpoint to_checkpoint(const ModelCheckpoint& m);
ModelCheckpoint model_from_checkpoint(const Checkpoint& ckpt);

Checkpoint dataset_checkpoint(const Dataset& data);
Dataset dataset_from_checkpoint(const Checkpoint& ckpt);

}  // namespace efcn
