#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mixseg/common.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

// Define-by-run recording of one forward pass. Nodes are appended in
// execution order, so the record list is already topologically sorted and
// backward() is a single reverse sweep that visits each record once.
// A tape and its tensors belong to one worker at a time.
template <typename T>
class Tape {
public:
    using NodeId = std::uint32_t;

    struct Node {
        Tensor<T> value;
        std::vector<NodeId> parents;
        std::function<void(Tape&, NodeId)> backward;  // empty for leaves
        std::vector<T> grad;                          // allocated during backward
        bool needs_grad = false;
        Tensor<T>* bound = nullptr;  // external tensor to receive the grad
    };

    // Leaf holding a copy of `value`. Participates in gradients iff
    // value.requires_grad.
    NodeId leaf(const Tensor<T>& value) {
        Node n;
        n.value = value;
        n.needs_grad = value.requires_grad;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // Leaf bound to an external tensor: after backward, d(loss)/d(leaf) is
    // written into external.grad. The external tensor must outlive the tape.
    NodeId leaf_bound(Tensor<T>& external) {
        NodeId id = leaf(external);
        nodes_[id].bound = &external;
        return id;
    }

    // Records an op result. `backward` reads grad(self) and accumulates into
    // its parents via grad_buffer(); it runs only when some parent needs a
    // gradient.
    NodeId emplace(Tensor<T> value, std::vector<NodeId> parents,
                   std::function<void(Tape&, NodeId)> backward) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        for (NodeId p : n.parents)
            if (nodes_[p].needs_grad) n.needs_grad = true;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
    bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
    std::span<const T> grad(NodeId id) const { return nodes_[id].grad; }
    std::vector<T>& grad_buffer(NodeId id) {
        auto& n = nodes_[id];
        if (n.grad.size() != n.value.numel()) n.grad.assign(n.value.numel(), T(0));
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    // Reverse accumulation from a scalar loss. Nodes outside the loss's
    // ancestry are left untouched, as are their bound tensors.
    void backward(NodeId loss) {
        if (nodes_[loss].value.numel() != 1)
            throw ConfigError("backward requires a scalar loss, got shape " +
                              shape_str(nodes_[loss].value.shape));
        std::vector<char> reachable(nodes_.size(), 0);
        mark_reachable(loss, reachable);
        grad_buffer(loss)[0] = T(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            NodeId id = static_cast<NodeId>(i);
            Node& n = nodes_[id];
            if (!reachable[i] || !n.needs_grad) continue;
            if (n.backward) n.backward(*this, id);
            if (n.bound && n.bound->requires_grad) n.bound->grad = grad_buffer(id);
        }
    }

private:
    void mark_reachable(NodeId loss, std::vector<char>& reachable) const {
        std::vector<NodeId> stack{loss};
        while (!stack.empty()) {
            NodeId id = stack.back();
            stack.pop_back();
            if (reachable[id]) continue;
            reachable[id] = 1;
            for (NodeId p : nodes_[id].parents)
                if (!reachable[p]) stack.push_back(p);
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace mixseg
