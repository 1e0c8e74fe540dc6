#include "efcn/dataset.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace efcn {

namespace {

constexpr int kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(0, "cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset concat(std::vector<Dataset> parts) {
    Dataset out;
    out.classes = parts.front().classes;
    out.split = parts.front().split;
    const ImageShape s = parts.front().shape();
    std::vector<float> data;
    for (auto& p : parts) {
        data.insert(data.end(), p.images.data().begin(), p.images.data().end());
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    out.images = Tensor(Shape{static_cast<std::int64_t>(out.labels.size()), s.channels, s.height, s.width}, std::move(data));
    return out;
}

}  // namespace

ImageShape Dataset::shape() const {
    if (images.rank() != 4) throw ShapeError("dataset images must be (N, C, H, W)");
    return ImageShape{static_cast<int>(images.dim(1)), static_cast<int>(images.dim(2)), static_cast<int>(images.dim(3))};
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
    const ImageShape s = shape();
    const auto per = static_cast<std::size_t>(s.size());
    Batch b;
    b.images = Tensor(Shape{static_cast<std::int64_t>(indices.size()), s.channels, s.height, s.width});
    b.labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const std::size_t i = indices[r];
        if (i >= size()) throw ShapeError("dataset index out of range");
        std::copy_n(images.ptr() + i * per, per, b.images.ptr() + r * per);
        b.labels.push_back(labels[i]);
    }
    return b;
}

Batch Dataset::range(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return batch(idx);
}

Batch Dataset::all() const { return range(0, size()); }

void Dataset::validate() const {
    if (size() == 0) throw Error("dataset is empty");
    if (images.rank() != 4 || images.dim(0) != static_cast<std::int64_t>(size())) {
        throw ShapeError("dataset image tensor does not match label count");
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
}

Dataset parse_cifar_records(std::span<const std::uint8_t> bytes, int label_bytes, int classes, Split split,
                            std::uint64_t base_offset) {
    const std::size_t record = static_cast<std::size_t>(label_bytes) + kCifarPixels;
    if (bytes.empty()) throw FormatError(base_offset, "empty CIFAR batch");
    if (bytes.size() % record != 0) {
        const std::uint64_t at = base_offset + (bytes.size() / record) * record;
        throw FormatError(at, "truncated CIFAR record at byte offset " + std::to_string(at) + " (" +
                                  std::to_string(bytes.size() % record) + " of " + std::to_string(record) +
                                  " bytes present)");
    }
    const std::size_t n = bytes.size() / record;
    Dataset d;
    d.classes = classes;
    d.split = split;
    d.labels.resize(n);
    std::vector<float> data(n * kCifarPixels);
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * record;
        const int label = rec[label_bytes - 1];
        if (label >= classes) {
            const std::uint64_t at = base_offset + r * record + static_cast<std::uint64_t>(label_bytes - 1);
            throw FormatError(at, "label byte " + std::to_string(label) + " at offset " + std::to_string(at) +
                                      " outside [0, " + std::to_string(classes) + ")");
        }
        d.labels[r] = label;
        const std::uint8_t* px = rec + label_bytes;
        float* dst = data.data() + r * kCifarPixels;
        for (std::size_t p = 0; p < kCifarPixels; ++p) dst[p] = static_cast<float>(px[p]) / 255.0f;
    }
    d.images = Tensor(Shape{static_cast<std::int64_t>(n), 3, kCifarSide, kCifarSide}, std::move(data));
    return d;
}

void center_channels(Dataset& train, Dataset& test) {
    const ImageShape s = train.shape();
    if (!(test.shape() == s)) throw ShapeError("train and test image shapes differ");
    const auto plane = static_cast<std::size_t>(s.height) * s.width;
    for (int c = 0; c < s.channels; ++c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const float* p = train.images.ptr() + (i * s.channels + c) * plane;
            for (std::size_t q = 0; q < plane; ++q) sum += p[q];
        }
        const auto mean = static_cast<float>(sum / (static_cast<double>(train.size()) * plane));
        for (Dataset* d : {&train, &test}) {
            for (std::size_t i = 0; i < d->size(); ++i) {
                float* p = d->images.ptr() + (i * s.channels + c) * plane;
                for (std::size_t q = 0; q < plane; ++q) p[q] -= mean;
            }
        }
    }
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
    std::vector<Dataset> parts;
    for (int b = 1; b <= 5; ++b) {
        const auto bytes = read_file(dir / ("data_batch_" + std::to_string(b) + ".bin"));
        parts.push_back(parse_cifar_records(bytes, 1, 10, Split::train));
    }
    Dataset train = concat(std::move(parts));
    Dataset test = parse_cifar_records(read_file(dir / "test_batch.bin"), 1, 10, Split::test);
    center_channels(train, test);
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::filesystem::path& dir) {
    Dataset train = parse_cifar_records(read_file(dir / "train.bin"), 2, 100, Split::train);
    Dataset test = parse_cifar_records(read_file(dir / "test.bin"), 2, 100, Split::test);
    center_channels(train, test);
    return {std::move(train), std::move(test)};
}

std::vector<std::vector<float>> synthetic_patterns(const SyntheticConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
    std::uniform_int_distribution<int> pick(0, 3);
    std::vector<std::vector<float>> patterns(static_cast<std::size_t>(cfg.classes));
    for (auto& p : patterns) {
        p.resize(static_cast<std::size_t>(cfg.pattern) * cfg.pattern);
        // 0 with probability 1/2, otherwise +-1.
        for (auto& v : p) {
            const int r = pick(rng);
            v = r < 2 ? 0.0f : (r == 2 ? 1.0f : -1.0f);
        }
    }
    return patterns;
}

namespace {

Dataset synth_split(const SyntheticConfig& cfg, const std::vector<std::vector<float>>& patterns, int count,
                    std::uint64_t stream_seed, Split split) {
    std::mt19937_64 rng(stream_seed);
    std::vector<int> labels(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % cfg.classes;
    std::shuffle(labels.begin(), labels.end(), rng);

    const int d = cfg.canvas, q = cfg.pattern;
    std::uniform_int_distribution<int> offset(0, d - q);
    std::normal_distribution<double> noise(0.0, cfg.noise);
    std::vector<float> data(static_cast<std::size_t>(count) * d * d, 0.0f);
    for (int i = 0; i < count; ++i) {
        float* canvas = data.data() + static_cast<std::size_t>(i) * d * d;
        const auto& p = patterns[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        const int oi = offset(rng);
        const int oj = offset(rng);
        for (int u = 0; u < q; ++u) {
            for (int v = 0; v < q; ++v) canvas[(oi + u) * d + oj + v] = p[static_cast<std::size_t>(u * q + v)];
        }
        if (cfg.noise > 0.0) {
            for (int k = 0; k < d * d; ++k) canvas[k] = static_cast<float>(canvas[k] + noise(rng));
        }
    }
    Dataset out;
    out.classes = cfg.classes;
    out.split = split;
    out.labels = std::move(labels);
    out.images = Tensor(Shape{count, 1, d, d}, std::move(data));
    return out;
}

}  // namespace

std::pair<Dataset, Dataset> gen_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 2 || cfg.canvas < 1 || cfg.pattern < 1 || cfg.pattern > cfg.canvas || cfg.train < 1 ||
        cfg.test < 1 || cfg.noise < 0.0) {
        throw Error("invalid synthetic dataset configuration (need classes >= 2, 1 <= pattern <= canvas, "
                    "positive sizes, noise >= 0)");
    }
    const auto patterns = synthetic_patterns(cfg, seed);
    // Disjoint generator streams for the two splits.
    Dataset train = synth_split(cfg, patterns, cfg.train, seed * 2 + 0x1234567ULL, Split::train);
    Dataset test = synth_split(cfg, patterns, cfg.test, seed * 2 + 0x89ABCDEFULL, Split::test);
    return {std::move(train), std::move(test)};
}

Batch subsample(const Dataset& data, std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (n < idx.size()) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(n);
        std::sort(idx.begin(), idx.end());
    }
    return data.batch(idx);
}

}  // namespace efcn
