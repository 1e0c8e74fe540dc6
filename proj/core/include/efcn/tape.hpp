#pragma once

#include "efcn/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace efcn {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

/// Records primal operations in execution order and replays them backward.
///
/// Nodes are immutable once recorded. Adjoint buffers are allocated lazily, so a
/// node that never receives a contribution reports a zero gradient. Scalar
/// nodes additionally carry their value in double precision, which is what
/// losses and finite-difference oracles read.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Var leaf(Tensor value);
    Var constant(Tensor value);

    /// Used by op implementations. `inputs` lists the node ids the op reads;
    /// `backward` must add into their adjoints via `accumulate`/`grad_buffer`.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
    Var record_scalar(double value, std::vector<std::size_t> inputs, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    /// Double-precision value of a scalar node (falls back to the float value).
    double scalar(Var v) const;

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Seeds d(root)/d(root) = 1 and visits every recorded node at most once in
    /// reverse recording order.
    void backward(Var root);

    /// Adjoint of `v`; a zero tensor if nothing flowed into it.
    const Tensor& grad(Var v);

    /// Adjoint of node `id`, allocated (zeroed) on first use.
    Tensor& grad_buffer(std::size_t id);
    /// Adjoint of node `id` or nullptr if none was accumulated.
    const Tensor* upstream(std::size_t id) const;

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t backward_visits() const noexcept { return visits_; }

private:
    struct Node {
        Tensor value;
        double scalar = 0.0;
        bool has_scalar = false;
        bool requires_grad = false;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor grad;
        bool has_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::size_t visits_ = 0;
};

}  // namespace efcn
