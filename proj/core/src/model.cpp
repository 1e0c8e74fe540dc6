#include "efcn/model.hpp"

#include "efcn/errors.hpp"
#include "efcn/ops.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

namespace efcn {
namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string at_layer(int layer) { return layer >= 0 ? "layer " + std::to_string(layer) + ": " : ""; }

// Open interval (-bound, bound).
float uniform_open(std::mt19937_64& rng, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (;;) {
        const auto v = static_cast<float>(dist(rng));
        if (v > -bound && v < bound) return v;
    }
}

}  // namespace

std::string layer_name(const Layer& layer) {
    return std::visit(overloaded{[](const Conv&) { return std::string("conv"); },
                                 [](const Dense&) { return std::string("dense"); },
                                 [](const ReLU&) { return std::string("relu"); },
                                 [](const MaxPool&) { return std::string("maxpool"); },
                                 [](const Dropout&) { return std::string("dropout"); },
                                 [](const Flatten&) { return std::string("flatten"); }},
                      layer);
}

int conv_output_dim(int d_in, const ConvSpec& spec, int layer) {
    if (spec.k < 1 || spec.s < 1 || spec.p < 0) {
        throw ShapeError(at_layer(layer) + "convolution needs k >= 1, s >= 1, p >= 0");
    }
    const int span = d_in + 2 * spec.p - spec.k;
    if (span < 0) throw ShapeError(at_layer(layer) + "filter larger than padded input");
    if (span % spec.s != 0) {
        throw ShapeError(at_layer(layer) + "(d_in + 2p - k) = " + std::to_string(span) +
                         " is not divisible by stride " + std::to_string(spec.s));
    }
    return span / spec.s + 1;
}

std::vector<ActShape> shape_chain(const ModelSpec& model) {
    if (model.input.channels < 1 || model.input.height < 1 || model.input.width < 1) {
        throw ShapeError("model input shape must be positive");
    }
    std::vector<ActShape> chain;
    ActShape cur{model.input, 0};
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const int li = static_cast<int>(i);
        std::visit(overloaded{
                       [&](const Conv& c) {
                           if (!cur.image) throw ShapeError(at_layer(li) + "convolution needs an image input");
                           if (cur.image->channels != c.spec.c_in) {
                               throw ShapeError(at_layer(li) + "expected " + std::to_string(c.spec.c_in) +
                                                " input channels, got " + std::to_string(cur.image->channels));
                           }
                           const int h = conv_output_dim(cur.image->height, c.spec, li);
                           const int w = conv_output_dim(cur.image->width, c.spec, li);
                           cur = ActShape{ImageShape{c.spec.c_out, h, w}, 0};
                       },
                       [&](const Dense& d) {
                           if (cur.size() != d.in) {
                               throw ShapeError(at_layer(li) + "dense expects " + std::to_string(d.in) +
                                                " inputs, got " + std::to_string(cur.size()));
                           }
                           if (d.out_shape) {
                               if (d.out_shape->size() != d.out) {
                                   throw ShapeError(at_layer(li) + "dense out_shape does not match out");
                               }
                               cur = ActShape{*d.out_shape, 0};
                           } else {
                               cur = ActShape{std::nullopt, d.out};
                           }
                       },
                       [&](const ReLU&) {},
                       [&](const MaxPool& m) {
                           if (!cur.image) throw ShapeError(at_layer(li) + "maxpool needs an image input");
                           if (m.window < 1 || m.stride < 1 || cur.image->height < m.window ||
                               cur.image->width < m.window) {
                               throw ShapeError(at_layer(li) + "invalid pooling geometry");
                           }
                           cur.image->height = (cur.image->height - m.window) / m.stride + 1;
                           cur.image->width = (cur.image->width - m.window) / m.stride + 1;
                       },
                       [&](const Dropout& d) {
                           if (d.rate < 0.0 || d.rate >= 1.0) throw ShapeError(at_layer(li) + "dropout rate outside [0,1)");
                       },
                       [&](const Flatten&) { cur = ActShape{std::nullopt, cur.size()}; }},
                   model.layers[i]);
        chain.push_back(cur);
    }
    if (chain.empty() || chain.back().image || chain.back().features != model.classes) {
        throw ShapeError("model does not end in a logits vector of length " + std::to_string(model.classes));
    }
    return chain;
}

std::vector<Segment> param_layout(const ModelSpec& model) {
    shape_chain(model);
    std::vector<Segment> segs;
    std::size_t off = 0;
    auto add = [&](std::string name, int layer, Shape shape, bool bias) {
        const auto n = static_cast<std::size_t>(numel(shape));
        segs.push_back(Segment{std::move(name), layer, off, n, std::move(shape), bias});
        off += n;
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const int li = static_cast<int>(i);
        const std::string tag = std::to_string(i);
        if (const auto* c = std::get_if<Conv>(&model.layers[i])) {
            add("conv" + tag + ".weight", li, Shape{c->spec.c_out, c->spec.c_in, c->spec.k, c->spec.k}, false);
            add("conv" + tag + ".bias", li, Shape{c->spec.c_out}, true);
        } else if (const auto* d = std::get_if<Dense>(&model.layers[i])) {
            add("dense" + tag + ".weight", li, Shape{d->out, d->in}, false);
            add("dense" + tag + ".bias", li, Shape{d->out}, true);
        }
    }
    return segs;
}

std::size_t param_count(const ModelSpec& model) {
    std::size_t n = 0;
    for (const auto& s : param_layout(model)) n += s.length;
    return n;
}

ParamVector zero_params(const ModelSpec& model) {
    auto segs = param_layout(model);
    std::size_t n = 0;
    for (const auto& s : segs) n += s.length;
    return ParamVector(std::move(segs), std::vector<float>(n, 0.0f));
}

ParamVector init_params(const ModelSpec& model, std::uint64_t seed) {
    ParamVector theta = zero_params(model);
    std::mt19937_64 rng(seed);
    for (const auto& seg : theta.segments()) {
        const Layer& layer = model.layers[static_cast<std::size_t>(seg.layer)];
        double fan_in = 1.0;
        if (const auto* c = std::get_if<Conv>(&layer)) {
            fan_in = static_cast<double>(c->spec.c_in) * c->spec.k * c->spec.k;
        } else if (const auto* d = std::get_if<Dense>(&layer)) {
            fan_in = d->in;
        }
        const double bound = 1.0 / std::sqrt(fan_in);
        for (auto& v : theta.view(seg)) v = uniform_open(rng, bound);
    }
    return theta;
}

Var forward(Tape& tape, const ModelSpec& model, Var theta, const Tensor& x, const ForwardOptions& options) {
    const auto chain = shape_chain(model);
    const auto& in = model.input;
    if (x.rank() != 4 || x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width) {
        throw ShapeError("forward: expected input (N, " + std::to_string(in.channels) + ", " +
                         std::to_string(in.height) + ", " + std::to_string(in.width) + "), got " +
                         to_string(x.shape()));
    }
    const auto segs = param_layout(model);
    if (tape.value(theta).size() != [&] {
            std::size_t n = 0;
            for (const auto& s : segs) n += s.length;
            return n;
        }()) {
        throw ShapeError("forward: parameter vector length does not match the model");
    }
    const std::int64_t n = x.dim(0);
    Var h = tape.constant(x);
    std::size_t seg = 0;
    auto take = [&]() -> Var {
        const Segment& s = segs[seg++];
        return ops::slice(theta, s.offset, s.shape);
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const Layer& layer = model.layers[i];
        if (const auto* c = std::get_if<Conv>(&layer)) {
            Var w = take();
            Var b = take();
            h = ops::conv2d(h, w, b, c->spec.s, c->spec.p);
        } else if (const auto* d = std::get_if<Dense>(&layer)) {
            Var w = take();
            Var b = take();
            h = ops::dense(h, w, b);
            if (d->out_shape) {
                h = ops::reshape(h, Shape{n, d->out_shape->channels, d->out_shape->height, d->out_shape->width});
            }
        } else if (std::holds_alternative<ReLU>(layer)) {
            h = ops::relu(h);
        } else if (const auto* m = std::get_if<MaxPool>(&layer)) {
            h = ops::maxpool2d(h, m->window, m->stride);
        } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
            if (options.training && dr->rate > 0.0) {
                h = ops::dropout(h, dr->rate, options.dropout_seed * 1000003ULL + i);
            }
        } else if (std::holds_alternative<Flatten>(layer)) {
            h = ops::reshape(h, Shape{n, chain[i].size()});
        }
        if (!tape.value(h).all_finite()) {
            throw NonFiniteError(static_cast<int>(i), "layer " + std::to_string(i) + " (" + layer_name(layer) +
                                                          ") produced a non-finite activation");
        }
    }
    return h;
}

Tensor forward(const ModelSpec& model, const ParamVector& theta, const Tensor& x) {
    Tape tape;
    Var t = tape.constant(Tensor(Shape{static_cast<std::int64_t>(theta.size())}, theta.storage()));
    return tape.value(forward(tape, model, t, x));
}

LossFn model_loss(const ModelSpec& model, ForwardOptions options) {
    return [model, options](Tape& tape, Var theta, const Batch& batch) {
        Var logits = forward(tape, model, theta, batch.images, options);
        return ops::softmax_cross_entropy(logits, batch.labels);
    };
}

double loss(const ModelSpec& model, const ParamVector& theta, const Batch& batch) {
    return loss_value(model_loss(model), theta, batch);
}

ModelSpec build_vanilla_cnn(int channels, ImageShape image, int classes, double dropout) {
    if (channels < 1 || classes < 1) throw ShapeError("vanilla cnn needs positive channels and classes");
    if (image.height % 8 != 0 || image.width % 8 != 0) {
        throw ShapeError("vanilla cnn needs image sides divisible by 8, got " + std::to_string(image.height) + "x" +
                         std::to_string(image.width));
    }
    ModelSpec m;
    m.input = image;
    m.classes = classes;
    int c_in = image.channels;
    for (int block = 0; block < 3; ++block) {
        m.layers.emplace_back(Conv{ConvSpec{c_in, channels, 3, 1, 1}});
        m.layers.emplace_back(ReLU{});
        m.layers.emplace_back(MaxPool{2, 2});
        c_in = channels;
    }
    m.layers.emplace_back(Flatten{});
    if (dropout > 0.0) m.layers.emplace_back(Dropout{dropout});
    m.layers.emplace_back(Dense{channels * (image.height / 8) * (image.width / 8), classes, std::nullopt});
    shape_chain(m);
    return m;
}

ModelSpec build_fcn_from(const ModelSpec& cnn) {
    const auto chain = shape_chain(cnn);
    ModelSpec out = cnn;
    for (std::size_t i = 0; i < cnn.layers.size(); ++i) {
        if (std::holds_alternative<Conv>(cnn.layers[i])) {
            const ActShape in = i == 0 ? ActShape{cnn.input, 0} : chain[i - 1];
            const ImageShape o = *chain[i].image;
            out.layers[i] = Dense{static_cast<int>(in.size()), static_cast<int>(o.size()), o};
        }
    }
    return out;
}

bool has_conv(const ModelSpec& model) {
    for (const auto& l : model.layers) {
        if (std::holds_alternative<Conv>(l)) return true;
    }
    return false;
}

namespace {

nlohmann::json image_json(const ImageShape& s) { return {s.channels, s.height, s.width}; }

ImageShape image_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("shape", "image shape must be [C, H, W]");
    return ImageShape{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSpec& model) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : model.layers) {
        nlohmann::json l;
        l["type"] = layer_name(layer);
        std::visit(overloaded{[&](const Conv& c) {
                                  l["c_in"] = c.spec.c_in;
                                  l["c_out"] = c.spec.c_out;
                                  l["k"] = c.spec.k;
                                  l["s"] = c.spec.s;
                                  l["p"] = c.spec.p;
                              },
                              [&](const Dense& d) {
                                  l["in"] = d.in;
                                  l["out"] = d.out;
                                  if (d.out_shape) l["out_shape"] = image_json(*d.out_shape);
                              },
                              [&](const ReLU&) {},
                              [&](const MaxPool& m) {
                                  l["window"] = m.window;
                                  l["stride"] = m.stride;
                              },
                              [&](const Dropout& d) { l["rate"] = d.rate; },
                              [&](const Flatten&) {}},
                   layer);
        layers.push_back(std::move(l));
    }
    j = nlohmann::json{{"input", image_json(model.input)}, {"classes", model.classes}, {"layers", std::move(layers)}};
}

void from_json(const nlohmann::json& j, ModelSpec& model) {
    model = ModelSpec{};
    model.input = image_from(j.at("input"));
    model.classes = j.at("classes").get<int>();
    for (const auto& l : j.at("layers")) {
        const auto type = l.at("type").get<std::string>();
        if (type == "conv") {
            model.layers.emplace_back(Conv{ConvSpec{l.at("c_in").get<int>(), l.at("c_out").get<int>(),
                                                    l.at("k").get<int>(), l.at("s").get<int>(), l.at("p").get<int>()}});
        } else if (type == "dense") {
            Dense d{l.at("in").get<int>(), l.at("out").get<int>(), std::nullopt};
            if (l.contains("out_shape")) d.out_shape = image_from(l.at("out_shape"));
            model.layers.emplace_back(d);
        } else if (type == "relu") {
            model.layers.emplace_back(ReLU{});
        } else if (type == "maxpool") {
            model.layers.emplace_back(MaxPool{l.at("window").get<int>(), l.at("stride").get<int>()});
        } else if (type == "dropout") {
            model.layers.emplace_back(Dropout{l.at("rate").get<double>()});
        } else if (type == "flatten") {
            model.layers.emplace_back(Flatten{});
        } else {
            throw ConfigError("layers", "unknown layer type '" + type + "'");
        }
    }
    shape_chain(model);
}

}  // namespace efcn
