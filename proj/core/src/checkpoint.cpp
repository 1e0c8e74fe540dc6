#include "efcn/checkpoint.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace efcn {

namespace {

static_assert(sizeof(float) == 4);

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t at) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[at + i]) << (8 * i);
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f)); }

constexpr std::size_t kPreamble = 4 + 4 + 8;

CheckpointHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreamble) throw FormatError(bytes.size(), "checkpoint shorter than its preamble");
    if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin())) {
        throw FormatError(0, "bad checkpoint magic (expected \"EFCN\")");
    }
    CheckpointHeader h;
    h.version = get_le<std::uint32_t>(bytes, 4);
    if (h.version != kCheckpointVersion) {
        throw FormatError(4, "unsupported checkpoint version " + std::to_string(h.version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - kPreamble) {
        throw FormatError(kPreamble, "checkpoint header length " + std::to_string(header_len) + " exceeds file size");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(kPreamble, std::string("unreadable checkpoint header: ") + e.what());
    }
    h.meta = j.value("meta", nlohmann::json::object());
    std::uint64_t expected = 0;
    for (const auto& a : j.at("arrays")) {
        ArrayEntry e;
        e.name = a.at("name").get<std::string>();
        e.dtype = a.at("dtype").get<std::string>();
        e.shape = a.at("shape").get<Shape>();
        e.offset = a.at("offset").get<std::uint64_t>();
        e.length = a.at("length").get<std::uint64_t>();
        if (e.dtype != "f32") throw FormatError(kPreamble, "array '" + e.name + "' has unsupported dtype " + e.dtype);
        if (e.offset != expected || e.length != static_cast<std::uint64_t>(numel(e.shape)) * 4) {
            throw FormatError(kPreamble, "array index entry '" + e.name + "' disagrees with its shape or position");
        }
        expected += e.length;
        h.index.push_back(std::move(e));
    }
    h.payload_offset = kPreamble + header_len;
    return h;
}

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
    auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
    if (it == arrays.end()) throw FormatError(0, "checkpoint has no array '" + name + "'");
    return *it;
}

bool Checkpoint::has_array(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : ckpt.arrays) {
        if (static_cast<std::int64_t>(a.data.size()) != numel(a.shape)) {
            throw ShapeError("checkpoint array '" + a.name + "' data does not match its shape");
        }
        const std::uint64_t len = a.data.size() * 4;
        index.push_back({{"name", a.name}, {"dtype", "f32"}, {"shape", a.shape}, {"offset", offset}, {"length", len}});
        offset += len;
    }
    const nlohmann::json header{{"meta", ckpt.meta}, {"arrays", std::move(index)}};
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(kPreamble + text.size() + offset);
    out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& a : ckpt.arrays) {
        for (float f : a.data) put_f32(out, f);
    }
    return out;
}

CheckpointHeader decode_checkpoint_header(std::span<const std::uint8_t> bytes) { return parse_header(bytes); }

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    const CheckpointHeader h = parse_header(bytes);
    std::uint64_t payload = 0;
    for (const auto& e : h.index) payload += e.length;
    const std::uint64_t present = bytes.size() - h.payload_offset;
    if (present != payload) {
        throw FormatError(h.payload_offset + std::min(present, payload),
                          "checkpoint payload length mismatch: index describes " + std::to_string(payload) +
                              " bytes, file holds " + std::to_string(present));
    }
    Checkpoint c;
    c.meta = h.meta;
    for (const auto& e : h.index) {
        NamedArray a{e.name, e.shape, std::vector<float>(e.length / 4)};
        const std::size_t base = h.payload_offset + e.offset;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            a.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, base + 4 * i));
        }
        c.arrays.push_back(std::move(a));
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(0, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(0, "cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> pre(kPreamble);
    in.read(reinterpret_cast<char*>(pre.data()), static_cast<std::streamsize>(kPreamble));
    if (in.gcount() != static_cast<std::streamsize>(kPreamble)) throw FormatError(0, "checkpoint shorter than its preamble");
    const auto header_len = get_le<std::uint64_t>(pre, 8);
    if (header_len > (std::uint64_t{1} << 32)) throw FormatError(8, "implausible checkpoint header length");
    pre.resize(kPreamble + header_len);
    in.read(reinterpret_cast<char*>(pre.data() + kPreamble), static_cast<std::streamsize>(header_len));
    if (static_cast<std::uint64_t>(in.gcount()) != header_len) throw FormatError(kPreamble, "truncated checkpoint header");
    return parse_header(pre);
}

Checkpoint to_checkpoint(const ModelCheckpoint& m) {
    Checkpoint c;
    c.meta["kind"] = m.kind;
    c.meta["model"] = m.spec;
    c.meta["epoch"] = m.epoch;
    c.meta["seed"] = m.seed;
    c.meta["optimizer"] = {{"kind", to_string(m.optimizer.kind)}, {"step", m.optimizer.step},
                           {"has_m", !m.optimizer.m.empty()}, {"has_v", !m.optimizer.v.empty()}};
    if (m.embedded_from) c.meta["embedded_from"] = *m.embedded_from;
    if (m.t_w) c.meta["t_w"] = *m.t_w;
    c.meta["extra"] = m.extra;
    c.arrays.push_back(NamedArray{"theta", Shape{static_cast<std::int64_t>(m.theta.size())}, m.theta.storage()});
    if (!m.optimizer.m.empty()) {
        c.arrays.push_back(NamedArray{"optimizer.m", Shape{static_cast<std::int64_t>(m.optimizer.m.size())}, m.optimizer.m});
    }
    if (!m.optimizer.v.empty()) {
        c.arrays.push_back(NamedArray{"optimizer.v", Shape{static_cast<std::int64_t>(m.optimizer.v.size())}, m.optimizer.v});
    }
    return c;
}

ModelCheckpoint model_from_checkpoint(const Checkpoint& c) {
    ModelCheckpoint m;
    try {
        m.kind = c.meta.at("kind").get<std::string>();
        m.spec = c.meta.at("model").get<ModelSpec>();
        m.epoch = c.meta.at("epoch").get<int>();
        m.seed = c.meta.at("seed").get<std::uint64_t>();
        const auto& o = c.meta.at("optimizer");
        m.optimizer.kind = optimizer_from_string(o.at("kind").get<std::string>());
        m.optimizer.step = o.at("step").get<std::uint64_t>();
        if (c.meta.contains("embedded_from")) m.embedded_from = c.meta.at("embedded_from").get<ModelSpec>();
        if (c.meta.contains("t_w")) m.t_w = c.meta.at("t_w").get<int>();
        m.extra = c.meta.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(0, std::string("checkpoint header is not a model checkpoint: ") + e.what());
    }
    m.theta = ParamVector(param_layout(m.spec), c.array("theta").data);
    if (c.has_array("optimizer.m")) m.optimizer.m = c.array("optimizer.m").data;
    if (c.has_array("optimizer.v")) m.optimizer.v = c.array("optimizer.v").data;
    return m;
}

Checkpoint dataset_checkpoint(const Dataset& data) {
    Checkpoint c;
    c.meta["kind"] = "dataset";
    c.meta["classes"] = data.classes;
    c.meta["split"] = data.split == Split::train ? "train" : "test";
    c.arrays.push_back(NamedArray{"images", data.images.shape(), data.images.storage()});
    std::vector<float> labels(data.labels.begin(), data.labels.end());
    c.arrays.push_back(NamedArray{"labels", Shape{static_cast<std::int64_t>(labels.size())}, std::move(labels)});
    return c;
}

Dataset dataset_from_checkpoint(const Checkpoint& c) {
    Dataset d;
    d.classes = c.meta.at("classes").get<int>();
    d.split = c.meta.at("split").get<std::string>() == "train" ? Split::train : Split::test;
    const auto& img = c.array("images");
    d.images = Tensor(img.shape, img.data);
    for (float f : c.array("labels").data) d.labels.push_back(static_cast<int>(f));
    d.validate();
    return d;
}

}  // namespace efcn
