#include "efcn/tape.hpp"

#include "efcn/errors.hpp"

#include <algorithm>

namespace efcn {

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_.at(i).requires_grad; });
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

Var Tape::record_scalar(double value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Var v = record(Tensor::scalar(static_cast<float>(value)), std::move(inputs), std::move(backward));
    nodes_[v.id].scalar = value;
    nodes_[v.id].has_scalar = true;
    return v;
}

double Tape::scalar(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_scalar) return n.scalar;
    if (n.value.size() != 1) throw ShapeError("scalar() on non-scalar node of shape " + to_string(n.value.shape()));
    return n.value[0];
}

void Tape::backward(Var root) {
    if (root.tape != this) throw Error("backward: variable belongs to another tape");
    if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    grad_buffer(root.id).fill(1.0f);
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.requires_grad) continue;
        ++visits_;
        if (n.backward) n.backward(*this, i);
    }
}

const Tensor& Tape::grad(Var v) { return grad_buffer(v.id); }

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape(), 0.0f);
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor* Tape::upstream(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.has_grad ? &n.grad : nullptr;
}

}  // namespace efcn
