#pragma once

#include "efcn/model.hpp"
#include "efcn/params.hpp"

#include <cstdint>
#include <vector>

namespace efcn {

/// Tie structure of one convolution embedded as a dense layer.
///
/// Positions are flat indices into the eFCN parameter vector. CNN filter entry
/// `j` (flat within the conv weight segment) owns
/// `weight_positions[weight_start[j] .. weight_start[j+1])`; bias channel `c`
/// owns the analogous range of `bias_positions`.
struct TiedLayer {
    int layer = -1;
    ConvSpec conv;
    ImageShape in;
    ImageShape out;
    std::size_t cnn_weight_offset = 0;
    std::size_t cnn_bias_offset = 0;
    std::size_t fcn_weight_offset = 0;
    std::size_t fcn_bias_offset = 0;
    std::vector<std::size_t> weight_start;
    std::vector<std::size_t> weight_positions;
    std::vector<std::size_t> bias_start;
    std::vector<std::size_t> bias_positions;
};

/// A parameter block copied verbatim between the two spaces (non-conv layers).
struct CopiedBlock {
    std::size_t cnn_offset = 0;
    std::size_t fcn_offset = 0;
    std::size_t length = 0;
};

/// Partition of eFCN entries. `local` is true on the image of the conv weight
/// support, on every bias and on non-embedded layers; `weight` marks weight
/// matrix entries (biases excluded).
struct LocalMask {
    std::vector<std::uint8_t> local;
    std::vector<std::uint8_t> weight;

    std::size_t size() const noexcept { return local.size(); }
};

/// The linear map Phi from CNN parameters to eFCN parameters.
class EmbeddingMap {
public:
    EmbeddingMap() = default;
    EmbeddingMap(ModelSpec cnn, ModelSpec fcn, std::vector<TiedLayer> tied, std::vector<CopiedBlock> copied,
                 LocalMask mask);

    const ModelSpec& cnn_spec() const noexcept { return cnn_; }
    const ModelSpec& fcn_spec() const noexcept { return fcn_; }
    const std::vector<TiedLayer>& tied() const noexcept { return tied_; }
    const std::vector<CopiedBlock>& copied() const noexcept { return copied_; }
    const LocalMask& mask() const noexcept { return mask_; }
    const TiedLayer& tied_layer(int layer) const;

    std::size_t cnn_size() const noexcept { return cnn_size_; }
    std::size_t fcn_size() const noexcept { return fcn_size_; }

    /// Phi(theta_cnn).
    ParamVector apply(const ParamVector& theta_cnn) const;
    /// Phi^T(g_efcn): sums each tied group back onto its CNN parameter.
    ParamVector pullback(const ParamVector& g_efcn) const;

private:
    ModelSpec cnn_;
    ModelSpec fcn_;
    std::vector<TiedLayer> tied_;
    std::vector<CopiedBlock> copied_;
    LocalMask mask_;
    std::size_t cnn_size_ = 0;
    std::size_t fcn_size_ = 0;
};

struct EmbedOptions {
    /// Upper bound on bytes for the eFCN parameters, mask and tie tables.
    std::uint64_t max_bytes = std::uint64_t{3} << 30;
};

/// Bytes `build_embedding_map` + one eFCN parameter vector would need.
std::uint64_t embedding_bytes(const ModelSpec& cnn);

EmbeddingMap build_embedding_map(const ModelSpec& cnn, const EmbedOptions& options = {});

struct Embedding {
    ModelSpec fcn_spec;
    ParamVector theta;
    EmbeddingMap map;
};

Embedding embed(const ModelSpec& cnn, const ParamVector& theta_cnn, const EmbedOptions& options = {});

const LocalMask& local_mask(const EmbeddingMap& map);
ParamVector pullback(const EmbeddingMap& map, const ParamVector& g_efcn);

enum class Keep { local, off_local };

/// Zeroes the weight entries outside the kept part. Biases always survive.
ParamVector mask_apply(const ParamVector& theta, const LocalMask& mask, Keep keep);

/// ||theta_off-local|| / ||theta|| over weight entries only.
double delta(const ParamVector& theta, const LocalMask& mask);

/// Analytic entry counts for the eFCN of `cnn`, without materializing it.
struct LayerCounts {
    int layer = -1;
    bool embedded = false;
    std::uint64_t weights = 0;
    std::uint64_t local = 0;
    std::uint64_t fan_in = 0;
};

std::vector<LayerCounts> count_mask(const ModelSpec& cnn);

/// sqrt(M_off / M_w): expected delta when every weight entry is i.i.d. zero-mean.
double iid_delta_expectation(const std::vector<LayerCounts>& counts);

/// Expected squared-norm version for per-layer uniform(+-1/sqrt(fan_in)) draws,
/// i.e. sqrt(sum_l off_l/fan_l / sum_l w_l/fan_l).
double init_delta_expectation(const std::vector<LayerCounts>& counts);

}  // namespace efcn
