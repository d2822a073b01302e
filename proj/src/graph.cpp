// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/graph.hpp"

#include <unordered_set>

namespace pqkd {

NodeRef make_constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    return n;
}

NodeRef make_param(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

void backward(const NodeRef& loss) {
    if (!loss) throw UsageError("backward: null node");
    if (loss->value.numel() != 1)
        throw UsageError("backward: loss node must be scalar, got shape " +
                         shape_str(loss->value.shape));

    // Iterative post-order DFS; parents appear before children in `order`
    // reversed, so walking `order` backwards propagates cotangents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Node* child = node->inputs[idx].get();
            ++idx;
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad().data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_op && n->has_grad()) n->backward_op(*n);
    }
}

void zero_grads(const std::vector<NodeRef>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace pqkd
