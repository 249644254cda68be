#pragma once

#include <unordered_map>
#include <vector>

#include "cgl/nn.hpp"
#include "cgl/tensor.hpp"

namespace cgl {

using NodeId = int;

// Reverse-mode autodiff over a per-batch computation. Values are computed
// eagerly when nodes are created (the tape is the forward record); a single
// backward() walk fills gradients for everything reachable from the loss.
//
// Parameters are registered by an opaque key (the address of the parameter
// tensor). Registering the same key twice returns the same node, so when
// several routed paths in one graph share a module, its gradient
// accumulates all contributions automatically.
class Tape {
public:
    NodeId constant(Tensor value);
    NodeId param(const Tensor* key);

    NodeId matmul(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId rowvec); // [B x C] + [1 x C]
    NodeId relu(NodeId a);
    NodeId softmax(NodeId logits, double temperature);
    NodeId cross_entropy_sum(NodeId probs, std::vector<int> labels); // scalar
    NodeId kl_div_sum(NodeId teacher_probs, NodeId student_probs);   // scalar
    NodeId add(NodeId a, NodeId b);                                  // same shape
    NodeId scale(NodeId a, double c);
    NodeId detach(NodeId a); // value passthrough, gradient barrier

    const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }

    // Backward from a scalar loss. Throws UsageError if the node is not
    // scalar or the tape is empty.
    void backward(NodeId loss);

    // Gradient of the loss w.r.t. a node. UsageError before backward().
    const Tensor& grad(NodeId id) const;

    // Gradient for a registered parameter, or nullptr if that parameter
    // never entered the graph or received no gradient.
    const Tensor* param_grad(const Tensor* key) const;

    bool backward_done() const { return backward_done_; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op { constant, param, matmul, add_rowvec, relu, softmax, cross_entropy, kl_div, add, scale, detach };

    struct Node {
        Op op;
        NodeId a = -1, b = -1;
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_live = false; // grad tensor allocated and receiving
        double scalar_arg = 0.0;
        std::vector<int> labels;
    };

    NodeId push(Node n);
    int check(NodeId id) const;
    void accumulate(NodeId id, const Tensor& g);
    void add_grad_at(NodeId id, std::size_t flat_index, double v);

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, NodeId> params_;
    bool backward_done_ = false;
};

} // namespace cgl
