#pragma once

#include "efcn/autodiff.hpp"
#include "efcn/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace efcn {

enum class Split { train, test };

struct Dataset {
    Tensor images;  // (N, C, H, W)
    std::vector<int> labels;
    int classes = 0;
    Split split = Split::train;

    std::size_t size() const noexcept { return labels.size(); }
    ImageShape shape() const;
    Batch batch(std::span<const std::size_t> indices) const;
    Batch all() const;
    /// Contiguous rows [begin, end).
    Batch range(std::size_t begin, std::size_t end) const;
    /// Throws if labels are out of range or the image tensor disagrees.
    void validate() const;
};

/// Parses one CIFAR binary batch. Each record is `label_bytes` label bytes (the
/// last one is used) followed by 3x1024 pixel bytes, planes R, G, B, row-major.
/// Pixels come back scaled to [0, 1]; `base_offset` only feeds error messages.
Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, int label_bytes, int classes, Split split,
                            std::uint64_t base_offset = 0);

/// Subtracts the train set's per-channel mean from both splits.
void center_channels(Dataset& train, Dataset& test);

/// data_batch_1..5.bin and test_batch.bin, centered.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);
/// train.bin and test.bin with (coarse, fine) label bytes; fine labels used.
std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir);

struct SyntheticConfig {
    int classes = 10;
    int canvas = 16;
    int pattern = 7;
    int train = 5000;
    int test = 1000;
    double noise = 0.3;
};

/// Shifted-template task: every class owns one sparse {-1, 0, +1} pattern
/// which each sample places at a uniform random offset on a zero canvas,
/// plus Gaussian noise. Labels are balanced (counts differ by at most one).
std::pair<Dataset, Dataset> gen_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

/// The per-class base patterns used by gen_synthetic for `seed`.
std::vector<std::vector<float>> synthetic_patterns(const SyntheticConfig& cfg, std::uint64_t seed);

/// Fixed seeded subsample of `n` rows (all rows when the set is smaller).
Batch subsample(const Dataset& data, std::size_t n, std::uint64_t seed);

}  // namespace efcn
