// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epl/tensor.hpp"

namespace epl {

struct NodeId {
    std::size_t index;
};

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Every builder method evaluates its op immediately, so `value()` is valid as soon
/// as a node exists. Nodes are appended in topological order, which lets
/// `gradients()` walk the tape backwards without a sort.
///
/// Layout conventions: images are NCHW, conv kernels are (out, in, kh, kw), dense
/// weights are (in, out). All reductions accumulate in double.
class Graph {
public:
    NodeId constant(Tensor value);
    /// Trainable leaf; `id` names the entry in the map returned by gradients().
    NodeId parameter(std::string id, Tensor value);

    /// (M,K) x (K,N) -> (M,N)
    NodeId matmul(NodeId a, NodeId b);
    /// Elementwise sum of same-shaped tensors.
    NodeId add(NodeId a, NodeId b);
    /// x of dims (N,C,...) plus per-channel bias of dims (C).
    NodeId add_bias(NodeId x, NodeId bias);
    NodeId conv2d(NodeId x, NodeId kernel, Conv2dOptions opts = {});
    NodeId relu(NodeId x);
    NodeId max_pool2(NodeId x);
    NodeId avg_pool2(NodeId x);
    /// (N,C,H,W) -> (N,C)
    NodeId global_avg_pool(NodeId x);
    /// (N,...) -> (N, prod(...))
    NodeId flatten(NodeId x);
    /// Mean softmax cross-entropy over the batch; output dims (1).
    NodeId softmax_cross_entropy(NodeId logits, std::span<const int> labels);

    const Tensor& value(NodeId n) const { return nodes_.at(n.index).value; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of a scalar node with respect to every parameter leaf.
    /// Throws ShapeError if `loss` is not a single-element tensor.
    ParamMap gradients(NodeId loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        std::function<void(Graph&, std::size_t)> backward;
        std::optional<std::string> param_id;
        bool requires_grad = false;
    };

    NodeId push(Tensor value, std::vector<std::size_t> inputs,
                std::function<void(Graph&, std::size_t)> backward);
    const Node& node(NodeId n) const { return nodes_.at(n.index); }
    bool needs_grad(std::size_t i) const { return nodes_[i].requires_grad; }
    Tensor& grad_of(std::size_t i);

    std::vector<Node> nodes_;
};

}  // namespace epl
