#pragma once

#include "efcn/dataset.hpp"
#include "efcn/embed.hpp"
#include "efcn/model.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace efcn {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
    double lr = 0.1;
    int batch_size = 250;
    /// Absolute epoch count; a resumed run continues up to this epoch.
    int epochs = 30;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double momentum = 0.0;
    double weight_decay = 0.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    bool deterministic = true;
    int eval_every = 1;

    void validate() const;
};

/// Optimizer memory. Plain SGD (no momentum, no decay) leaves it empty.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd;
    std::uint64_t step = 0;
    std::vector<float> m;
    std::vector<float> v;

    bool operator==(const OptimizerState&) const = default;
};

/// theta - eta * grad.
ParamVector sgd_step(const ParamVector& theta, const ParamVector& grad, double eta);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update.
std::pair<ParamVector, OptimizerState> adam_step(const ParamVector& theta, const ParamVector& grad,
                                                 OptimizerState state, double eta, const AdamParams& params = {});

/// One optimizer step in place according to `cfg`.
void apply_update(ParamVector& theta, const ParamVector& grad, OptimizerState& state, const TrainConfig& cfg);

/// {0} U {round(T^(i/(k-2))) : i = 0..k-2}, deduplicated and sorted. k = 2
/// gives the endpoints {0, T}.
std::vector<int> log_spaced_epochs(int epochs, int count);

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
};

struct Curve {
    std::string run_id;
    EpochMetrics initial;
    std::vector<EpochMetrics> points;
};

struct Snapshot {
    int epoch = 0;
    ParamVector theta;
    OptimizerState optimizer;
    std::uint64_t seed = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainState {
    ParamVector theta;
    OptimizerState optimizer;
    int epoch = 0;
};

struct TrainResult {
    TrainState final_state;
    Curve curve;
    std::vector<Snapshot> snapshots;
};

using ProgressFn = std::function<void(const std::string& run_id, const EpochMetrics& metrics)>;

/// Shuffled-minibatch training from `start` up to epoch `cfg.epochs`. Epoch e
/// draws its permutation from (seed, e), so resuming from any snapshot
/// reproduces the uninterrupted run bit for bit.
TrainResult train(const ModelSpec& model, TrainState start, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg, std::span<const int> snapshot_epochs = {}, const std::string& run_id = "run",
                  const ProgressFn& progress = {});

/// Epoch permutation used by `train`; every index appears exactly once.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int epoch);

struct ProtocolConfig {
    int channels = 8;
    double dropout = 0.0;
    TrainConfig cnn{};
    TrainConfig dense{0.01};
    int snapshots = 10;
    std::uint64_t seed = 0;
    int workers = 1;
    EmbedOptions embed;
};

ProtocolConfig default_protocol_config();

struct EfcnRun {
    int t_w = 0;
    Curve curve;
    ParamVector theta_init;
    ParamVector theta_final;
};

struct RunReport {
    ModelSpec cnn_spec;
    ModelSpec fcn_spec;
    Curve cnn;
    Curve fcn;
    std::vector<Snapshot> snapshots;
    std::vector<EfcnRun> efcn;
    ParamVector cnn_final;
    ParamVector fcn_init;
    ParamVector fcn_final;
    std::shared_ptr<const EmbeddingMap> map;
};

/// Train CNN, snapshot at log-spaced epochs, embed each snapshot, train each
/// eFCN, and train a fresh FCN of the same dense architecture.
RunReport relax_protocol(const ProtocolConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                         const ProgressFn& progress = {});

/// Seed used to initialize the from-scratch FCN of a protocol run.
std::uint64_t fcn_init_seed(std::uint64_t protocol_seed);
/// Shuffle seed for the eFCN relaxed at t_w.
std::uint64_t efcn_train_seed(std::uint64_t dense_seed, int t_w);

}  // namespace efcn
