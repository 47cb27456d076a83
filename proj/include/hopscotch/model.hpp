// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm causal transformer with four trainable scalars per layer:
//
//   x1   = attn_gate * Attention(Norm(x_in)) + attn_residual * x_in
//   x_out = mlp_gate * MLP(Norm(x1))         + mlp_residual  * x1
//
// All-ones scales reproduce the plain transformer. A zero attention gate skips
// the attention sub-computation entirely.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hopscotch/autograd.hpp"
#include "hopscotch/tensor.hpp"

namespace hopscotch {

struct ModelConfig {
    int n_layers = 8;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int vocab_size = 48;
    int max_seq_len = 64;
    double norm_eps = 1e-5;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct AttentionWeights {
    BasicTensor<T> norm;  // [d]
    BasicTensor<T> wq, wk, wv, wo;  // [d x d], applied as x * W
};

template <typename T>
struct LayerWeights {
    std::optional<AttentionWeights<T>> attention;  // empty once physically removed
    BasicTensor<T> mlp_norm;  // [d]
    BasicTensor<T> w_up;  // [d x d_ff]
    BasicTensor<T> w_down;  // [d_ff x d]
};

template <typename T>
struct BasicWeights {
    ModelConfig config;
    BasicTensor<T> token_embedding;  // [V x d]
    BasicTensor<T> position_embedding;  // [n x d]
    std::vector<LayerWeights<T>> layers;
    BasicTensor<T> final_norm;  // [d]
    BasicTensor<T> head;  // [d x V]

    /// Visits every tensor with its canonical name, in a fixed order.
    void for_each_tensor(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const;
    void for_each_tensor(const std::function<void(const std::string&, BasicTensor<T>&)>& fn);

    /// Checks every tensor shape against `config`.
    void validate() const;

    template <typename U>
    BasicWeights<U> cast() const;
};

using Weights = BasicWeights<float>;
using Weights64 = BasicWeights<double>;

/// Gaussian init (std 0.02, output projections scaled by 1/sqrt(2L)), unit norm gains.
Weights init_weights(const ModelConfig& config, std::uint64_t seed);

struct ParameterCount {
    std::size_t matrix = 0;  // projection, embedding and head entries
    std::size_t vector = 0;  // norm gains
    std::size_t total() const { return matrix + vector; }
};

template <typename T>
ParameterCount parameter_count(const BasicWeights<T>& w);

/// SHA-256 over config and every tensor's bytes.
std::string content_hash(const Weights& w);

// ---------------------------------------------------------------------------

/// Layers whose attention block is skipped.
struct BlockMask {
    std::set<int> removed;

    bool contains(int layer) const { return removed.count(layer) != 0; }
    std::size_t size() const { return removed.size(); }
    bool empty() const { return removed.empty(); }
    void validate(int n_layers) const;
    friend bool operator==(const BlockMask&, const BlockMask&) = default;
};

enum class ScaleKind : int { attn_gate = 0, attn_residual = 1, mlp_gate = 2, mlp_residual = 3 };

const char* to_string(ScaleKind kind);

/// The trainable scalars, four per layer. Flat index of (layer, kind) is
/// 4 * layer + kind.
struct ScaleSet {
    std::vector<double> attn_gate;
    std::vector<double> attn_residual;
    std::vector<double> mlp_gate;
    std::vector<double> mlp_residual;

    static ScaleSet ones(int n_layers);

    int layers() const { return static_cast<int>(attn_gate.size()); }
    std::size_t param_count() const { return 4 * attn_gate.size(); }
    double& param(std::size_t flat);
    double param(std::size_t flat) const;
    std::string param_name(std::size_t flat) const;
    std::vector<double> flat() const;
    void set_flat(std::span<const double> values);

    friend bool operator==(const ScaleSet&, const ScaleSet&) = default;
};

/// Sets the attention gate of every removed layer to exactly 0.
ScaleSet pin_removed(ScaleSet scales, const BlockMask& mask);

/// One byte per flat scale parameter: 1 where the parameter is pinned.
std::vector<std::uint8_t> pinned_params(const BlockMask& mask, int n_layers);

/// Throws unless the scale set has one entry per layer, pinned gates are zero,
/// and every value is finite.
void check_scales(const ScaleSet& scales, const BlockMask& mask, int n_layers);

/// Drops the attention projections and attention norm of masked layers.
template <typename T>
BasicWeights<T> physically_remove(const BasicWeights<T>& w, const BlockMask& mask);

// ---------------------------------------------------------------------------
// Graph-level forward pass, shared by training and inference.

/// `batch` sequences of length `seq`, row-major; position t of row b is ids[b*seq+t].
struct TokenGrid {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> ids;
};

struct BoundLayer {
    bool has_attention = false;
    Var attn_norm, wq, wk, wv, wo;
    Var mlp_norm, w_up, w_down;
};

struct BoundWeights {
    Var token_embedding, position_embedding, final_norm, head;
    std::vector<BoundLayer> layers;
};

struct BoundScales {
    std::vector<Var> attn_gate, attn_residual, mlp_gate, mlp_residual;
    std::vector<bool> skip_attention;
};

/// Frozen weights become references to `w`; trainable ones are copied into leaves.
template <typename T>
BoundWeights bind_weights(Graph<T>& g, const BasicWeights<T>& w, bool trainable);

/// Pinned gates always bind as constants, whatever `trainable` says.
template <typename T>
BoundScales bind_scales(Graph<T>& g, const ScaleSet& s, const BlockMask& mask, bool trainable);

struct ForwardVars {
    Var logits;  // [batch*seq x V]
    std::vector<Var> layer_outputs;  // x_out of every layer, [batch*seq x d]
};

template <typename T>
ForwardVars forward(Graph<T>& g, const ModelConfig& config, const BoundWeights& w,
                    const BoundScales& s, const TokenGrid& tokens);

/// One scaled block on a single sequence, without gradients.
template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& x_in, int layer, const BasicWeights<T>& w,
                             const ScaleSet& s);

template <typename T>
struct ModelOutput {
    BasicTensor<T> logits;  // [T x V]
    std::vector<std::pair<int, BasicTensor<T>>> hidden;  // requested x_out, ascending layer
};

/// Full forward pass over one sequence. Throws if it exceeds max_seq_len or
/// contains out-of-range tokens.
template <typename T>
ModelOutput<T> model_forward(std::span<const int> tokens, const BasicWeights<T>& w,
                             const ScaleSet& s, const std::set<int>& collect_hidden = {});

}  // namespace hopscotch
