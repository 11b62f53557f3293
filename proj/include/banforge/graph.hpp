#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "banforge/param_set.hpp"
#include "banforge/tensor.hpp"

namespace banforge {

class Graph;

// Lightweight handle to a node on a graph. Valid for the graph's lifetime.
struct Var {
    Graph* graph = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
};

// Reverse-mode tape. Operations append nodes in execution order, which makes
// the recorded sequence a topological order of the DAG; backward() walks it
// in exact reverse, so gradient accumulation order is a fixed function of the
// recording and backward is bit-deterministic for a given graph.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Gradient-tracked leaf. Names must be unique within one graph; backward
    // reports one gradient tensor per named leaf.
    Var param(const std::string& name, Tensor value);

    // Untracked leaf (inputs, labels, frozen teacher outputs).
    Var constant(Tensor value);

    // Appends an op node. `what` names the op in numeric-domain errors.
    Var record(Tensor output, std::vector<std::uint32_t> inputs, BackwardFn backward, const char* what);

    const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
    bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

    // Gradient accumulator for a node, zero-initialized on first access.
    Tensor& grad(std::uint32_t id);
    bool grad_touched(std::uint32_t id) const { return nodes_[id].grad_touched; }

    // Backpropagates from a scalar root and returns dRoot/dLeaf for every
    // named leaf (zeros for leaves the root does not depend on).
    ParameterSet backward(Var root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_touched = false;
        std::string param_name;
        std::vector<std::uint32_t> inputs;
        BackwardFn backward;
    };

    std::uint32_t push(Node node);

    std::vector<Node> nodes_;
    std::unordered_set<std::string> param_names_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

} // namespace banforge
