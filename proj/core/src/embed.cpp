#include "efcn/embed.hpp"

#include "efcn/errors.hpp"

#include <cmath>

namespace efcn {
namespace {

// Number of (output, tap) pairs along one axis that land inside the image.
std::uint64_t inside_pairs(int d_in, int d_out, const ConvSpec& c) {
    std::uint64_t n = 0;
    for (int o = 0; o < d_out; ++o) {
        for (int u = 0; u < c.k; ++u) {
            const int i = o * c.s - c.p + u;
            if (i >= 0 && i < d_in) ++n;
        }
    }
    return n;
}

std::size_t segment_offset(const std::vector<Segment>& segs, int layer, bool bias) {
    for (const auto& s : segs) {
        if (s.layer == layer && s.is_bias == bias) return s.offset;
    }
    throw ShapeError("layer " + std::to_string(layer) + " has no parameters");
}

}  // namespace

EmbeddingMap::EmbeddingMap(ModelSpec cnn, ModelSpec fcn, std::vector<TiedLayer> tied, std::vector<CopiedBlock> copied,
                           LocalMask mask)
    : cnn_(std::move(cnn)),
      fcn_(std::move(fcn)),
      tied_(std::move(tied)),
      copied_(std::move(copied)),
      mask_(std::move(mask)),
      cnn_size_(param_count(cnn_)),
      fcn_size_(param_count(fcn_)) {
    if (mask_.local.size() != fcn_size_ || mask_.weight.size() != fcn_size_) {
        throw ShapeError("embedding mask length does not match the eFCN parameter count");
    }
}

const TiedLayer& EmbeddingMap::tied_layer(int layer) const {
    for (const auto& t : tied_) {
        if (t.layer == layer) return t;
    }
    throw Error("layer " + std::to_string(layer) + " is not an embedded convolution");
}

ParamVector EmbeddingMap::apply(const ParamVector& theta_cnn) const {
    if (theta_cnn.size() != cnn_size_) {
        throw ShapeError("embed: CNN parameter vector has " + std::to_string(theta_cnn.size()) + " entries, spec needs " +
                         std::to_string(cnn_size_));
    }
    ParamVector out = zero_params(fcn_);
    for (const auto& t : tied_) {
        const std::size_t nw = t.weight_start.size() - 1;
        for (std::size_t j = 0; j < nw; ++j) {
            const float w = theta_cnn[t.cnn_weight_offset + j];
            for (std::size_t q = t.weight_start[j]; q < t.weight_start[j + 1]; ++q) out[t.weight_positions[q]] = w;
        }
        const std::size_t nb = t.bias_start.size() - 1;
        for (std::size_t c = 0; c < nb; ++c) {
            const float b = theta_cnn[t.cnn_bias_offset + c];
            for (std::size_t q = t.bias_start[c]; q < t.bias_start[c + 1]; ++q) out[t.bias_positions[q]] = b;
        }
    }
    for (const auto& c : copied_) {
        for (std::size_t i = 0; i < c.length; ++i) out[c.fcn_offset + i] = theta_cnn[c.cnn_offset + i];
    }
    return out;
}

ParamVector EmbeddingMap::pullback(const ParamVector& g_efcn) const {
    if (g_efcn.size() != fcn_size_) throw ShapeError("pullback: eFCN vector length does not match the map");
    ParamVector out = zero_params(cnn_);
    for (const auto& t : tied_) {
        const std::size_t nw = t.weight_start.size() - 1;
        for (std::size_t j = 0; j < nw; ++j) {
            double s = 0.0;
            for (std::size_t q = t.weight_start[j]; q < t.weight_start[j + 1]; ++q) s += g_efcn[t.weight_positions[q]];
            out[t.cnn_weight_offset + j] = static_cast<float>(s);
        }
        const std::size_t nb = t.bias_start.size() - 1;
        for (std::size_t c = 0; c < nb; ++c) {
            double s = 0.0;
            for (std::size_t q = t.bias_start[c]; q < t.bias_start[c + 1]; ++q) s += g_efcn[t.bias_positions[q]];
            out[t.cnn_bias_offset + c] = static_cast<float>(s);
        }
    }
    for (const auto& c : copied_) {
        for (std::size_t i = 0; i < c.length; ++i) out[c.cnn_offset + i] = g_efcn[c.fcn_offset + i];
    }
    return out;
}

std::vector<LayerCounts> count_mask(const ModelSpec& cnn) {
    const auto chain = shape_chain(cnn);
    std::vector<LayerCounts> counts;
    for (std::size_t i = 0; i < cnn.layers.size(); ++i) {
        const int li = static_cast<int>(i);
        if (const auto* c = std::get_if<Conv>(&cnn.layers[i])) {
            const ImageShape in = i == 0 ? cnn.input : *chain[i - 1].image;
            const ImageShape out = *chain[i].image;
            LayerCounts lc{li, true, 0, 0, static_cast<std::uint64_t>(in.size())};
            lc.weights = static_cast<std::uint64_t>(in.size()) * static_cast<std::uint64_t>(out.size());
            lc.local = static_cast<std::uint64_t>(c->spec.c_in) * static_cast<std::uint64_t>(c->spec.c_out) *
                       inside_pairs(in.height, out.height, c->spec) * inside_pairs(in.width, out.width, c->spec);
            counts.push_back(lc);
        } else if (const auto* d = std::get_if<Dense>(&cnn.layers[i])) {
            const auto w = static_cast<std::uint64_t>(d->in) * static_cast<std::uint64_t>(d->out);
            counts.push_back(LayerCounts{li, false, w, w, static_cast<std::uint64_t>(d->in)});
        }
    }
    return counts;
}

double iid_delta_expectation(const std::vector<LayerCounts>& counts) {
    double off = 0.0, total = 0.0;
    for (const auto& c : counts) {
        off += static_cast<double>(c.weights - c.local);
        total += static_cast<double>(c.weights);
    }
    if (total == 0.0) throw Error("model has no weights");
    return std::sqrt(off / total);
}

double init_delta_expectation(const std::vector<LayerCounts>& counts) {
    double off = 0.0, total = 0.0;
    for (const auto& c : counts) {
        const double var = 1.0 / static_cast<double>(c.fan_in);
        off += static_cast<double>(c.weights - c.local) * var;
        total += static_cast<double>(c.weights) * var;
    }
    if (total == 0.0) throw Error("model has no weights");
    return std::sqrt(off / total);
}

std::uint64_t embedding_bytes(const ModelSpec& cnn) {
    const auto fcn = build_fcn_from(cnn);
    std::uint64_t params = 0;
    for (const auto& s : param_layout(fcn)) params += s.length;
    std::uint64_t ties = 0;
    for (const auto& c : count_mask(cnn)) {
        if (c.embedded) ties += c.local;
    }
    // parameters + two mask bytes per entry + one index per tied weight position
    // (bias replicas are bounded by the parameter count and ignored here).
    return params * sizeof(float) + params * 2 + ties * sizeof(std::size_t);
}

EmbeddingMap build_embedding_map(const ModelSpec& cnn, const EmbedOptions& options) {
    const auto chain = shape_chain(cnn);
    const std::uint64_t need = embedding_bytes(cnn);
    if (need > options.max_bytes) {
        throw MemoryBudgetError(need, options.max_bytes,
                                "embedding needs " + std::to_string(need) + " bytes, budget is " +
                                    std::to_string(options.max_bytes) + " bytes");
    }
    ModelSpec fcn = build_fcn_from(cnn);
    const auto cnn_segs = param_layout(cnn);
    const auto fcn_segs = param_layout(fcn);
    std::size_t fcn_total = 0;
    for (const auto& s : fcn_segs) fcn_total += s.length;

    LocalMask mask;
    mask.local.assign(fcn_total, 1);
    mask.weight.assign(fcn_total, 0);
    for (const auto& s : fcn_segs) {
        if (!s.is_bias) std::fill_n(mask.weight.begin() + static_cast<std::ptrdiff_t>(s.offset), s.length, 1);
    }

    std::vector<TiedLayer> tied;
    std::vector<CopiedBlock> copied;
    for (std::size_t i = 0; i < cnn.layers.size(); ++i) {
        const int li = static_cast<int>(i);
        if (const auto* conv = std::get_if<Conv>(&cnn.layers[i])) {
            TiedLayer t;
            t.layer = li;
            t.conv = conv->spec;
            t.in = i == 0 ? cnn.input : *chain[i - 1].image;
            t.out = *chain[i].image;
            t.cnn_weight_offset = segment_offset(cnn_segs, li, false);
            t.cnn_bias_offset = segment_offset(cnn_segs, li, true);
            t.fcn_weight_offset = segment_offset(fcn_segs, li, false);
            t.fcn_bias_offset = segment_offset(fcn_segs, li, true);

            const auto& c = conv->spec;
            const std::size_t in_size = static_cast<std::size_t>(t.in.size());
            const std::size_t ho = static_cast<std::size_t>(t.out.height), wo = static_cast<std::size_t>(t.out.width);
            const std::size_t filter_entries = static_cast<std::size_t>(c.c_out) * c.c_in * c.k * c.k;

            // Dense block starts fully off-local; receptive-field taps flip to local.
            std::fill_n(mask.local.begin() + static_cast<std::ptrdiff_t>(t.fcn_weight_offset),
                        in_size * static_cast<std::size_t>(t.out.size()), 0);

            std::vector<std::size_t> counts(filter_entries, 0);
            auto for_each_tap = [&](auto&& fn) {
                for (int co = 0; co < c.c_out; ++co) {
                    for (std::size_t oi = 0; oi < ho; ++oi) {
                        for (std::size_t oj = 0; oj < wo; ++oj) {
                            const std::size_t row = (static_cast<std::size_t>(co) * ho + oi) * wo + oj;
                            for (int ci = 0; ci < c.c_in; ++ci) {
                                for (int u = 0; u < c.k; ++u) {
                                    const long ii = static_cast<long>(oi) * c.s - c.p + u;
                                    if (ii < 0 || ii >= t.in.height) continue;
                                    for (int v = 0; v < c.k; ++v) {
                                        const long jj = static_cast<long>(oj) * c.s - c.p + v;
                                        if (jj < 0 || jj >= t.in.width) continue;
                                        const std::size_t col =
                                            (static_cast<std::size_t>(ci) * t.in.height + static_cast<std::size_t>(ii)) *
                                                t.in.width +
                                            static_cast<std::size_t>(jj);
                                        const std::size_t filt =
                                            ((static_cast<std::size_t>(co) * c.c_in + ci) * c.k + u) * c.k + v;
                                        fn(filt, t.fcn_weight_offset + row * in_size + col);
                                    }
                                }
                            }
                        }
                    }
                }
            };
            for_each_tap([&](std::size_t filt, std::size_t) { ++counts[filt]; });
            t.weight_start.assign(filter_entries + 1, 0);
            for (std::size_t j = 0; j < filter_entries; ++j) t.weight_start[j + 1] = t.weight_start[j] + counts[j];
            t.weight_positions.resize(t.weight_start.back());
            std::vector<std::size_t> cursor(t.weight_start.begin(), t.weight_start.end() - 1);
            for_each_tap([&](std::size_t filt, std::size_t pos) {
                t.weight_positions[cursor[filt]++] = pos;
                mask.local[pos] = 1;
            });

            const std::size_t per_channel = ho * wo;
            t.bias_start.resize(static_cast<std::size_t>(c.c_out) + 1);
            for (std::size_t co = 0; co <= static_cast<std::size_t>(c.c_out); ++co) t.bias_start[co] = co * per_channel;
            t.bias_positions.resize(static_cast<std::size_t>(c.c_out) * per_channel);
            for (std::size_t q = 0; q < t.bias_positions.size(); ++q) t.bias_positions[q] = t.fcn_bias_offset + q;
            tied.push_back(std::move(t));
        } else if (std::holds_alternative<Dense>(cnn.layers[i])) {
            for (bool bias : {false, true}) {
                const std::size_t co = segment_offset(cnn_segs, li, bias);
                const std::size_t fo = segment_offset(fcn_segs, li, bias);
                std::size_t len = 0;
                for (const auto& s : cnn_segs) {
                    if (s.layer == li && s.is_bias == bias) len = s.length;
                }
                copied.push_back(CopiedBlock{co, fo, len});
            }
        }
    }
    return EmbeddingMap(cnn, std::move(fcn), std::move(tied), std::move(copied), std::move(mask));
}

Embedding embed(const ModelSpec& cnn, const ParamVector& theta_cnn, const EmbedOptions& options) {
    EmbeddingMap map = build_embedding_map(cnn, options);
    ParamVector theta = map.apply(theta_cnn);
    return Embedding{map.fcn_spec(), std::move(theta), std::move(map)};
}

const LocalMask& local_mask(const EmbeddingMap& map) { return map.mask(); }

ParamVector pullback(const EmbeddingMap& map, const ParamVector& g_efcn) { return map.pullback(g_efcn); }

ParamVector mask_apply(const ParamVector& theta, const LocalMask& mask, Keep keep) {
    if (theta.size() != mask.size()) throw ShapeError("mask_apply: mask length does not match theta");
    ParamVector out = theta;
    const std::uint8_t kept = keep == Keep::local ? 1 : 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mask.weight[i] && mask.local[i] != kept) out[i] = 0.0f;
    }
    return out;
}

double delta(const ParamVector& theta, const LocalMask& mask) {
    if (theta.size() != mask.size()) throw ShapeError("delta: mask length does not match theta");
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!mask.weight[i]) continue;
        const double v = static_cast<double>(theta[i]) * theta[i];
        total += v;
        if (!mask.local[i]) off += v;
    }
    if (!(total > 0.0)) throw Error("delta: weights have zero norm");
    return std::sqrt(off / total);
}

}  // namespace efcn
