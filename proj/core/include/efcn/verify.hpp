#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace efcn {

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double tolerance = 0.0;
    std::string detail;
};

struct VerifyOptions {
    std::uint64_t seed = 0;
    int instances = 5;
};

/// Self-check suite behind the `verify` command: CNN/eFCN equivalence, gradient
/// pullback, autodiff against a double-precision reference, and the Hessian
/// probe against a dense finite-difference Hessian.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

}  // namespace efcn
