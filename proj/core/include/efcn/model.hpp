#pragma once

#include "efcn/autodiff.hpp"
#include "efcn/params.hpp"
#include "efcn/tape.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace efcn {

struct ImageShape {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::int64_t size() const noexcept { return std::int64_t{channels} * height * width; }
    bool operator==(const ImageShape&) const = default;
};

/// Square-filter convolution geometry, all in pixels.
struct ConvSpec {
    int c_in = 0;
    int c_out = 0;
    int k = 1;
    int s = 1;
    int p = 0;

    bool operator==(const ConvSpec&) const = default;
};

struct Conv {
    ConvSpec spec;
    bool operator==(const Conv&) const = default;
};

/// Fully-connected layer. Reads its input flattened channel-major. When
/// `out_shape` is set the output is viewed as an image, which is how an
/// embedded convolution hands its activations to a following pool.
struct Dense {
    int in = 0;
    int out = 0;
    std::optional<ImageShape> out_shape;
    bool operator==(const Dense&) const = default;
};

struct ReLU {
    bool operator==(const ReLU&) const = default;
};

struct MaxPool {
    int window = 2;
    int stride = 2;
    bool operator==(const MaxPool&) const = default;
};

struct Dropout {
    double rate = 0.0;
    bool operator==(const Dropout&) const = default;
};

struct Flatten {
    bool operator==(const Flatten&) const = default;
};

using Layer = std::variant<Conv, Dense, ReLU, MaxPool, Dropout, Flatten>;

std::string layer_name(const Layer& layer);

struct ModelSpec {
    ImageShape input;
    std::vector<Layer> layers;
    int classes = 0;

    bool operator==(const ModelSpec&) const = default;
};

/// Activation shape between layers: an image or a flat feature vector.
struct ActShape {
    std::optional<ImageShape> image;
    std::int64_t features = 0;

    std::int64_t size() const noexcept { return image ? image->size() : features; }
};

/// (d_in + 2p - k) / s + 1. Throws ShapeError naming `layer` when the stride
/// does not divide the span.
int conv_output_dim(int d_in, const ConvSpec& spec, int layer = -1);

/// Static shape of every layer output, validating the chain. Element i is the
/// output of layer i; the last one is the logits vector.
std::vector<ActShape> shape_chain(const ModelSpec& model);

/// Segment table: "<kind><i>.weight" then "<kind><i>.bias" per parameterized
/// layer i, in layer order.
std::vector<Segment> param_layout(const ModelSpec& model);
std::size_t param_count(const ModelSpec& model);
ParamVector zero_params(const ModelSpec& model);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias, where
/// fan_in is `in` for dense layers and c_in*k*k for convolutions.
ParamVector init_params(const ModelSpec& model, std::uint64_t seed);

struct ForwardOptions {
    bool training = false;
    std::uint64_t dropout_seed = 0;
};

/// Records the model on `tape`. Each layer output is checked for finiteness.
Var forward(Tape& tape, const ModelSpec& model, Var theta, const Tensor& x, const ForwardOptions& options = {});
Tensor forward(const ModelSpec& model, const ParamVector& theta, const Tensor& x);

/// Mean softmax cross-entropy.
LossFn model_loss(const ModelSpec& model, ForwardOptions options = {});
double loss(const ModelSpec& model, const ParamVector& theta, const Batch& batch);

/// Conv(k=3,s=1,p=1)+ReLU+MaxPool(2,2) three times, Flatten, Dense -> classes.
ModelSpec build_vanilla_cnn(int channels, ImageShape image, int classes, double dropout = 0.0);

/// Replaces each convolution by the dense layer of its ambient space.
ModelSpec build_fcn_from(const ModelSpec& cnn);

bool has_conv(const ModelSpec& model);

void to_json(nlohmann::json& j, const ModelSpec& model);
void from_json(const nlohmann::json& j, ModelSpec& model);

}  // namespace efcn
