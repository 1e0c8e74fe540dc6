#pragma once

#include "efcn/tape.hpp"

#include <cstdint>
#include <span>

namespace efcn::ops {

// Structural
Var slice(Var flat, std::size_t offset, Shape shape);
Var reshape(Var x, Shape shape);

// Elementwise. Rank-0 operands keep their double-precision value.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);

// Reductions to a double-precision scalar.
Var sum(Var a);
Var weighted_sum(Var a, const Tensor& weights);

/// y[n, o] = sum_i x[n, i] * w[o, i] + b[o]. `x` may have any trailing shape
/// whose element count is `in`; it is read flattened (channel-major).
Var dense(Var x, Var w, Var b);

/// Cross-correlation over (N, C, H, W) with square filters w[c_out, c_in, k, k].
Var conv2d(Var x, Var w, Var b, int stride, int pad);

/// max(x, 0); derivative at exactly 0 is 0.
Var relu(Var x);

/// Max over window x window patches; ties resolve to the lowest flat index.
Var maxpool2d(Var x, int window, int stride);

/// Inverted dropout with a mask drawn from `seed`.
Var dropout(Var x, double rate, std::uint64_t seed);

/// Mean softmax cross-entropy over the batch, computed in double.
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

}  // namespace efcn::ops
