// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_GRAPH_HPP
#define PQKD_GRAPH_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pqkd/tensor.hpp"

namespace pqkd {

// Reverse-mode autodiff. Each forward op appends a node holding its value,
// the input nodes, and a closure that scatters the node's cotangent into the
// inputs' grad buffers. Graphs are rebuilt per batch; parameter nodes live
// across batches and accumulate gradients until zero_grad() is called.
class Node {
  public:
    Tensor value;
    Tensor grad;  // allocated on first accumulation; empty means zero
    bool requires_grad = false;
    std::string name;  // set on parameters, used in diagnostics
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_op;

    bool has_grad() const { return !grad.empty(); }

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor::zeros(value.shape);
        return grad;
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
    }
};

using NodeRef = std::shared_ptr<Node>;

NodeRef make_constant(Tensor value);
NodeRef make_param(Tensor value, std::string name);

// Accumulates d(loss)/d(node) into grad buffers of every node reachable from
// `loss` that requires gradients. `loss` must be scalar (numel == 1).
// Repeated calls without zeroing accumulate.
void backward(const NodeRef& loss);

void zero_grads(const std::vector<NodeRef>& params);

}  // namespace pqkd

#endif
