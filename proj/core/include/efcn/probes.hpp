#pragma once

#include "efcn/autodiff.hpp"
#include "efcn/dataset.hpp"
#include "efcn/embed.hpp"
#include "efcn/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace efcn {

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;
};

/// Argmax with ties going to the lowest class index.
int argmax_row(std::span<const float> logits);
double accuracy(const Tensor& logits, std::span<const int> labels);

/// Accuracy and mean cross-entropy over the whole set, dropout inactive.
Evaluation evaluate(const ModelSpec& model, const ParamVector& theta, const Dataset& data,
                    std::size_t chunk = 1000);

double grad_norm(const LossFn& loss, const ParamVector& theta, const Batch& probe);
double grad_norm(const ModelSpec& model, const ParamVector& theta, const Batch& probe);

struct PowerIterationConfig {
    int max_iters = 100;
    double tol = 1e-4;
    std::uint64_t seed = 0;
    HvpOptions hvp;
};

struct PowerIterationResult {
    double lambda = 0.0;
    int iterations = 0;
    /// ||Hv - lambda v|| for the final unit iterate.
    double residual = 0.0;
    bool converged = false;
    ParamVector vector;
};

/// Dominant eigenvalue of the loss Hessian by power iteration on hvp. Stops
/// when |lambda_t - lambda_{t-1}| <= tol * max(1, |lambda_t|).
PowerIterationResult lambda_max(const LossFn& loss, const ParamVector& theta, const Batch& probe,
                                const PowerIterationConfig& cfg);
PowerIterationResult lambda_max(const ModelSpec& model, const ParamVector& theta, const Batch& probe,
                                const PowerIterationConfig& cfg);

/// Test accuracy after `mask_apply(theta, mask, keep)`.
double masked_accuracy(const ModelSpec& model, const ParamVector& theta, const LocalMask& mask, Keep keep,
                       const Dataset& test);

/// ln(|w| + floor) of the dense row feeding output (out_channel, i_o, j_o) of
/// an embedded convolution, reshaped to (c_in, d_in, d_in).
struct Heatmap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;  // channel-major, row-major within a channel
    std::vector<float> raw;      // the dense row itself
};

constexpr double kHeatmapFloor = 1e-12;

Heatmap filter_heatmap(const ParamVector& theta_efcn, const EmbeddingMap& map, int layer, int out_channel, int i_o,
                       int j_o);

enum class ProbePhase { at_embedding, after_training };
std::string to_string(ProbePhase phase);

struct ProbeReport {
    std::string model;  // cnn, fcn, efcn
    int t_w = -1;
    ProbePhase phase = ProbePhase::after_training;
    std::optional<double> grad_norm;
    std::optional<double> lambda_max;
    std::optional<int> lambda_iterations;
    std::optional<double> lambda_residual;
    std::optional<double> delta;
    double test_accuracy = 0.0;
    std::optional<double> test_accuracy_local;
    std::optional<double> test_accuracy_offlocal;
};

struct ProbeOptions {
    bool gradient = true;
    bool hessian = true;
    bool deviation = true;
    bool masks = true;
    PowerIterationConfig power;
};

/// Runs the requested probes on one model. `mask` enables delta and masked
/// accuracies (eFCN and FCN-space models only).
ProbeReport probe_model(const std::string& name, int t_w, ProbePhase phase, const ModelSpec& model,
                        const ParamVector& theta, const Batch& probe_set, const Dataset& test,
                        const LocalMask* mask, const ProbeOptions& options);

}  // namespace efcn
