#pragma once

#include "efcn/dataset.hpp"
#include "efcn/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace efcn {

/// Points x_0..x_{n-1} in one parameter space at alphas i/(n-1).
struct Path {
    std::vector<ParamVector> points;
    std::vector<double> alphas;
    bool frozen_endpoints = true;

    std::size_t size() const noexcept { return points.size(); }
    void validate() const;
};

Path linear_path(const ParamVector& theta_a, const ParamVector& theta_b, int n);

/// 1/2 k sum_i ||x_{i+1} - x_i||^2 over the n-1 consecutive segments.
double elastic_loss(const Path& path, double k);

struct StringConfig {
    double stiffness = 1.0;
    int steps = 100;
    double lr = 0.01;
    int batch_size = 250;
    std::uint64_t seed = 0;
    /// When false only the elastic term drives the interior points.
    bool use_train_loss = true;
};

/// Simultaneous (Jacobi) descent of the interior points on
/// L_train(x_i) + elastic term; endpoints are left untouched.
Path string_relax(Path path, const StringConfig& cfg, const ModelSpec& model, const Dataset& train_set);

/// (1 - alpha) softmax(f_a(x)) + alpha softmax(f_b(x)), one row per sample.
Tensor output_interpolation(const ModelSpec& model_a, const ParamVector& theta_a, const ModelSpec& model_b,
                            const ParamVector& theta_b, double alpha, const Tensor& x);

struct ProfileRow {
    std::string method;
    double alpha = 0.0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

/// Full train loss and test accuracy at every point of a weight-space path.
std::vector<ProfileRow> path_profile(const std::string& method, const Path& path, const ModelSpec& model,
                                     const Dataset& train_set, const Dataset& test_set);

/// Same for the output-space mixture at each alpha; loss is the cross-entropy
/// of the mixed probabilities.
std::vector<ProfileRow> output_profile(const std::vector<double>& alphas, const ModelSpec& model_a,
                                       const ParamVector& theta_a, const ModelSpec& model_b,
                                       const ParamVector& theta_b, const Dataset& train_set,
                                       const Dataset& test_set);

std::vector<double> even_alphas(int n);

}  // namespace efcn
