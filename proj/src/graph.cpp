#include "banforge/graph.hpp"

#include <limits>

namespace banforge {

std::uint32_t Graph::push(Node node) {
    if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
        throw ArgumentError("graph node capacity exceeded");
    }
    nodes_.push_back(std::move(node));
    return static_cast<std::uint32_t>(nodes_.size() - 1);
}

Var Graph::param(const std::string& name, Tensor value) {
    if (name.empty()) throw ArgumentError("graph parameter leaf needs a name");
    if (!param_names_.insert(name).second) {
        throw ArgumentError("duplicate parameter leaf on graph: " + name);
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    n.param_name = name;
    return Var{this, push(std::move(n))};
}

Var Graph::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return Var{this, push(std::move(n))};
}

Var Graph::record(Tensor output, std::vector<std::uint32_t> inputs, BackwardFn backward, const char* what) {
    ensure_finite(output, what);
    Node n;
    n.value = std::move(output);
    for (std::uint32_t in : inputs) {
        if (in >= nodes_.size()) throw ArgumentError("op input references a future node");
        n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    }
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return Var{this, push(std::move(n))};
}

Tensor& Graph::grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.grad_touched) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_touched = true;
    }
    return n.grad;
}

ParameterSet Graph::backward(Var root) {
    if (root.graph != this) throw ArgumentError("backward root belongs to a different graph");
    const Tensor& root_value = nodes_[root.id].value;
    if (root_value.numel() != 1) {
        throw ArgumentError("backward root must be a scalar, got shape " + root_value.shape_str());
    }

    grad(root.id)[0] = real(1);

    // Reverse recording order; nodes after the root cannot be its ancestors.
    for (std::uint32_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad_touched || !n.requires_grad || !n.backward) continue;
        n.backward(*this, i);
    }

    ParameterSet grads;
    for (const Node& n : nodes_) {
        if (n.param_name.empty()) continue;
        if (n.grad_touched) {
            grads.add(n.param_name, n.grad);
        } else {
            grads.add(n.param_name, Tensor::zeros(n.value.shape()));
        }
    }
    return grads;
}

} // namespace banforge
