#pragma once

#include "efcn/model.hpp"

#include <span>
#include <vector>

namespace efcn {

/// Straight-loop double-precision forward pass (inference mode). Returns
/// row-major (N, classes) logits. Slow; meant for cross-checking.
std::vector<double> reference_forward(const ModelSpec& model, std::span<const double> theta, const Tensor& x);

/// Mean softmax cross-entropy of `reference_forward`.
double reference_loss(const ModelSpec& model, std::span<const double> theta, const Tensor& x,
                      std::span<const int> labels);

/// Distance to the nearest non-smooth point: the smallest |ReLU input| and the
/// smallest gap between the winner and runner-up of a positive max-pool window.
double kink_margin(const ModelSpec& model, std::span<const double> theta, const Tensor& x);

std::vector<double> to_double(const ParamVector& theta);

}  // namespace efcn
