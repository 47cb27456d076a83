// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over BasicTensor values.
//
// Nodes are appended in creation order and every op's parents already exist
// when it is recorded, so the tape order is a topological order. backward()
// walks it once in reverse. Gradient buffers are only allocated for nodes that
// require a gradient: trainable leaves and anything computed from one.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hopscotch/tensor.hpp"

namespace hopscotch {

struct Var {
    std::int32_t id = -1;
    bool valid() const noexcept { return id >= 0; }
};

template <typename T>
class Graph {
public:
    using TensorT = BasicTensor<T>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Owned leaf.
    Var leaf(TensorT value, bool requires_grad);
    /// Non-differentiable leaf that refers to caller-owned storage, which must
    /// outlive the graph. Used for frozen weights so they are never copied.
    Var constant(const TensorT& value);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    /// s must be a one-element tensor; returns s * x.
    Var scale(Var x, Var s);
    Var rms_norm(Var x, Var gain, double eps);
    Var silu(Var x);
    Var softmax_rows(Var x);
    /// Gathers rows `ids` of `table`.
    Var embedding(Var table, std::span<const int> ids);
    /// Multi-head causal self-attention over `batch` independent sequences of
    /// length `seq`, laid out as [batch*seq x d] row blocks.
    Var causal_attention(Var q, Var k, Var v, std::size_t batch, std::size_t seq,
                         std::size_t heads);
    /// sum_t weights[t] * (-log softmax(logits_t)[targets_t]); rows with zero
    /// weight are skipped entirely.
    Var weighted_nll(Var logits, std::span<const int> targets, std::span<const double> weights);
    /// Mean over masked-in rows of -log softmax(logits_t)[targets_t].
    Var cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
    /// Mean over masked-in rows of ||h_t - ref_t||^2. `ref` is copied.
    Var masked_sq_dist(Var h, const TensorT& ref, std::span<const std::uint8_t> mask);

    /// Requires a one-element root. Zeroes all gradient buffers first.
    void backward(Var root);

    const TensorT& value(Var v) const;
    /// nullptr when no gradient buffer exists for the node.
    const TensorT* grad(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& op_name(Var v) const { return node(v).op; }

private:
    struct Node {
        std::string op;
        std::vector<std::int32_t> parents;
        TensorT owned;
        const TensorT* external = nullptr;
        TensorT grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::function<void(Graph&, std::int32_t)> backward;

        const TensorT& value() const { return external ? *external : owned; }
    };

    Var push(std::string op, std::vector<std::int32_t> parents, TensorT value,
             std::function<void(Graph&, std::int32_t)> backward);
    Node& node(Var v);
    const Node& node(Var v) const;
    TensorT& grad_buffer(std::int32_t id);
    bool wants(std::int32_t id) const { return nodes_[id].requires_grad; }
    void accumulate(std::int32_t id, const TensorT& g);

    std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hopscotch
