// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/model.hpp"

#include <cmath>
#include <random>

#include "hopscotch/errors.hpp"
#include "hopscotch/hash.hpp"

namespace hopscotch {

void ModelConfig::validate() const {
    if (n_layers <= 0 || d_model <= 0 || n_heads <= 0 || d_ff <= 0 || vocab_size <= 0 ||
        max_seq_len <= 0 || !(norm_eps > 0)) {
        throw ContractError("model config values must all be positive");
    }
    if (d_model % n_heads != 0) {
        throw ContractError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                            std::to_string(n_heads));
    }
}

// ---------------------------------------------------------------------------

template <typename T>
void BasicWeights<T>::for_each_tensor(
    const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const {
    fn("tok_emb", token_embedding);
    fn("pos_emb", position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        if (const auto& a = layers[l].attention) {
            fn(p + "attn.norm", a->norm);
            fn(p + "attn.wq", a->wq);
            fn(p + "attn.wk", a->wk);
            fn(p + "attn.wv", a->wv);
            fn(p + "attn.wo", a->wo);
        }
        fn(p + "mlp.norm", layers[l].mlp_norm);
        fn(p + "mlp.up", layers[l].w_up);
        fn(p + "mlp.down", layers[l].w_down);
    }
    fn("final_norm", final_norm);
    fn("head", head);
}

template <typename T>
void BasicWeights<T>::for_each_tensor(
    const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
    const auto& self = *this;
    self.for_each_tensor([&](const std::string& name, const BasicTensor<T>& t) {
        fn(name, const_cast<BasicTensor<T>&>(t));
    });
}

template <typename T>
void BasicWeights<T>::validate() const {
    config.validate();
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ff);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto n = static_cast<std::size_t>(config.max_seq_len);
    auto expect = [](const BasicTensor<T>& t, Shape shape, const std::string& name) {
        if (t.shape() != shape) {
            throw DimensionError("tensor " + name + " has shape " + shape_string(t.shape()) +
                                 ", expected " + shape_string(shape));
        }
    };
    if (layers.size() != static_cast<std::size_t>(config.n_layers)) {
        throw DimensionError("weights hold " + std::to_string(layers.size()) + " layers, config says " +
                             std::to_string(config.n_layers));
    }
    expect(token_embedding, {v, d}, "tok_emb");
    expect(position_embedding, {n, d}, "pos_emb");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        if (const auto& a = layers[l].attention) {
            expect(a->norm, {d}, p + "attn.norm");
            expect(a->wq, {d, d}, p + "attn.wq");
            expect(a->wk, {d, d}, p + "attn.wk");
            expect(a->wv, {d, d}, p + "attn.wv");
            expect(a->wo, {d, d}, p + "attn.wo");
        }
        expect(layers[l].mlp_norm, {d}, p + "mlp.norm");
        expect(layers[l].w_up, {d, f}, p + "mlp.up");
        expect(layers[l].w_down, {f, d}, p + "mlp.down");
    }
    expect(final_norm, {d}, "final_norm");
    expect(head, {d, v}, "head");
}

template <typename T>
template <typename U>
BasicWeights<U> BasicWeights<T>::cast() const {
    BasicWeights<U> out;
    out.config = config;
    out.token_embedding = token_embedding.template cast<U>();
    out.position_embedding = position_embedding.template cast<U>();
    for (const auto& layer : layers) {
        LayerWeights<U> nl;
        if (layer.attention) {
            nl.attention = AttentionWeights<U>{
                layer.attention->norm.template cast<U>(), layer.attention->wq.template cast<U>(),
                layer.attention->wk.template cast<U>(), layer.attention->wv.template cast<U>(),
                layer.attention->wo.template cast<U>()};
        }
        nl.mlp_norm = layer.mlp_norm.template cast<U>();
        nl.w_up = layer.w_up.template cast<U>();
        nl.w_down = layer.w_down.template cast<U>();
        out.layers.push_back(std::move(nl));
    }
    out.final_norm = final_norm.template cast<U>();
    out.head = head.template cast<U>();
    return out;
}

template struct BasicWeights<float>;
template struct BasicWeights<double>;
template BasicWeights<double> BasicWeights<float>::cast<double>() const;
template BasicWeights<float> BasicWeights<double>::cast<float>() const;

Weights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto f = static_cast<std::size_t>(config.d_ff);
    const auto v = static_cast<std::size_t>(config.vocab_size);
    const auto n = static_cast<std::size_t>(config.max_seq_len);
    const float out_std = 0.02f / std::sqrt(2.0f * static_cast<float>(config.n_layers));
    auto gaussian = [&](Shape shape, float stddev) {
        std::normal_distribution<float> dist(0.0f, stddev);
        Tensor t(std::move(shape));
        for (auto& x : t.values()) x = dist(rng);
        return t;
    };
    Weights w;
    w.config = config;
    w.token_embedding = gaussian({v, d}, 0.02f);
    w.position_embedding = gaussian({n, d}, 0.02f);
    for (int l = 0; l < config.n_layers; ++l) {
        LayerWeights<float> layer;
        AttentionWeights<float> a;
        a.norm = Tensor({d}, 1.0f);
        a.wq = gaussian({d, d}, 0.02f);
        a.wk = gaussian({d, d}, 0.02f);
        a.wv = gaussian({d, d}, 0.02f);
        a.wo = gaussian({d, d}, out_std);
        layer.attention = std::move(a);
        layer.mlp_norm = Tensor({d}, 1.0f);
        layer.w_up = gaussian({d, f}, 0.02f);
        layer.w_down = gaussian({f, d}, out_std);
        w.layers.push_back(std::move(layer));
    }
    w.final_norm = Tensor({d}, 1.0f);
    w.head = gaussian({d, v}, 0.02f);
    return w;
}

template <typename T>
ParameterCount parameter_count(const BasicWeights<T>& w) {
    ParameterCount count;
    w.for_each_tensor([&](const std::string&, const BasicTensor<T>& t) {
        (t.rank() == 2 ? count.matrix : count.vector) += t.size();
    });
    return count;
}

template ParameterCount parameter_count(const BasicWeights<float>&);
template ParameterCount parameter_count(const BasicWeights<double>&);

std::string content_hash(const Weights& w) {
    Sha256 h;
    const auto& c = w.config;
    const std::string header = std::to_string(c.n_layers) + "," + std::to_string(c.d_model) + "," +
                               std::to_string(c.n_heads) + "," + std::to_string(c.d_ff) + "," +
                               std::to_string(c.vocab_size) + "," + std::to_string(c.max_seq_len);
    h.update(header);
    h.update(&c.norm_eps, sizeof(c.norm_eps));
    w.for_each_tensor([&](const std::string& name, const Tensor& t) {
        h.update(name);
        h.update_values(t.values());
    });
    return h.hex();
}

// ---------------------------------------------------------------------------

void BlockMask::validate(int n_layers) const {
    for (int l : removed) {
        if (l < 0 || l >= n_layers) {
            throw IndexError("masked layer " + std::to_string(l) + " outside [0," +
                             std::to_string(n_layers) + ")");
        }
    }
}

const char* to_string(ScaleKind kind) {
    switch (kind) {
        case ScaleKind::attn_gate: return "attn_gate";
        case ScaleKind::attn_residual: return "attn_residual";
        case ScaleKind::mlp_gate: return "mlp_gate";
        case ScaleKind::mlp_residual: return "mlp_residual";
    }
    return "?";
}

ScaleSet ScaleSet::ones(int n_layers) {
    const auto n = static_cast<std::size_t>(n_layers);
    return ScaleSet{std::vector<double>(n, 1.0), std::vector<double>(n, 1.0),
                    std::vector<double>(n, 1.0), std::vector<double>(n, 1.0)};
}

double& ScaleSet::param(std::size_t flat) {
    const std::size_t layer = flat / 4;
    if (layer >= attn_gate.size()) throw IndexError("scale index " + std::to_string(flat));
    switch (flat % 4) {
        case 0: return attn_gate[layer];
        case 1: return attn_residual[layer];
        case 2: return mlp_gate[layer];
        default: return mlp_residual[layer];
    }
}

double ScaleSet::param(std::size_t flat) const {
    return const_cast<ScaleSet&>(*this).param(flat);
}

std::string ScaleSet::param_name(std::size_t flat) const {
    return std::string(to_string(static_cast<ScaleKind>(flat % 4))) + "[" +
           std::to_string(flat / 4) + "]";
}

std::vector<double> ScaleSet::flat() const {
    std::vector<double> out(param_count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = param(i);
    return out;
}

void ScaleSet::set_flat(std::span<const double> values) {
    if (values.size() != param_count()) {
        throw DimensionError("scale vector of " + std::to_string(values.size()) + " values for " +
                             std::to_string(param_count()) + " parameters");
    }
    for (std::size_t i = 0; i < values.size(); ++i) param(i) = values[i];
}

ScaleSet pin_removed(ScaleSet scales, const BlockMask& mask) {
    mask.validate(scales.layers());
    for (int l : mask.removed) scales.attn_gate[static_cast<std::size_t>(l)] = 0.0;
    return scales;
}

std::vector<std::uint8_t> pinned_params(const BlockMask& mask, int n_layers) {
    mask.validate(n_layers);
    std::vector<std::uint8_t> pinned(4 * static_cast<std::size_t>(n_layers), 0);
    for (int l : mask.removed) pinned[4 * static_cast<std::size_t>(l)] = 1;
    return pinned;
}

void check_scales(const ScaleSet& scales, const BlockMask& mask, int n_layers) {
    const auto n = static_cast<std::size_t>(n_layers);
    if (scales.attn_gate.size() != n || scales.attn_residual.size() != n ||
        scales.mlp_gate.size() != n || scales.mlp_residual.size() != n) {
        throw DimensionError("scale set does not have " + std::to_string(n_layers) + " layers");
    }
    mask.validate(n_layers);
    for (int l : mask.removed) {
        if (scales.attn_gate[static_cast<std::size_t>(l)] != 0.0) {
            throw ContractError("removed layer " + std::to_string(l) + " has a nonzero attention gate");
        }
    }
    for (std::size_t i = 0; i < scales.param_count(); ++i) {
        if (!std::isfinite(scales.param(i))) {
            throw NumericError("non-finite scale " + scales.param_name(i));
        }
    }
}

template <typename T>
BasicWeights<T> physically_remove(const BasicWeights<T>& w, const BlockMask& mask) {
    mask.validate(w.config.n_layers);
    BasicWeights<T> out = w;
    for (int l : mask.removed) out.layers[static_cast<std::size_t>(l)].attention.reset();
    return out;
}

template BasicWeights<float> physically_remove(const BasicWeights<float>&, const BlockMask&);
template BasicWeights<double> physically_remove(const BasicWeights<double>&, const BlockMask&);

// ---------------------------------------------------------------------------

template <typename T>
BoundWeights bind_weights(Graph<T>& g, const BasicWeights<T>& w, bool trainable) {
    auto bind = [&](const BasicTensor<T>& t) { return trainable ? g.leaf(t, true) : g.constant(t); };
    BoundWeights b;
    b.token_embedding = bind(w.token_embedding);
    b.position_embedding = bind(w.position_embedding);
    for (const auto& layer : w.layers) {
        BoundLayer bl;
        if (layer.attention) {
            bl.has_attention = true;
            bl.attn_norm = bind(layer.attention->norm);
            bl.wq = bind(layer.attention->wq);
            bl.wk = bind(layer.attention->wk);
            bl.wv = bind(layer.attention->wv);
            bl.wo = bind(layer.attention->wo);
        }
        bl.mlp_norm = bind(layer.mlp_norm);
        bl.w_up = bind(layer.w_up);
        bl.w_down = bind(layer.w_down);
        b.layers.push_back(bl);
    }
    b.final_norm = bind(w.final_norm);
    b.head = bind(w.head);
    return b;
}

template <typename T>
BoundScales bind_scales(Graph<T>& g, const ScaleSet& s, const BlockMask& mask, bool trainable) {
    check_scales(s, mask, s.layers());
    BoundScales b;
    auto bind = [&](double v, bool free) {
        return g.leaf(BasicTensor<T>::scalar(static_cast<T>(v)), trainable && free);
    };
    for (int l = 0; l < s.layers(); ++l) {
        const auto i = static_cast<std::size_t>(l);
        b.attn_gate.push_back(bind(s.attn_gate[i], !mask.contains(l)));
        b.attn_residual.push_back(bind(s.attn_residual[i], true));
        b.mlp_gate.push_back(bind(s.mlp_gate[i], true));
        b.mlp_residual.push_back(bind(s.mlp_residual[i], true));
        b.skip_attention.push_back(s.attn_gate[i] == 0.0 && !(trainable && !mask.contains(l)));
    }
    return b;
}

template <typename T>
ForwardVars forward(Graph<T>& g, const ModelConfig& config, const BoundWeights& w,
                    const BoundScales& s, const TokenGrid& tokens) {
    if (tokens.ids.size() != tokens.batch * tokens.seq) {
        throw DimensionError("token grid holds " + std::to_string(tokens.ids.size()) + " ids for " +
                             std::to_string(tokens.batch) + "x" + std::to_string(tokens.seq));
    }
    if (tokens.seq == 0 || tokens.batch == 0) throw ContractError("empty token grid");
    if (tokens.seq > static_cast<std::size_t>(config.max_seq_len)) {
        throw IndexError("sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
    }
    if (w.layers.size() != static_cast<std::size_t>(config.n_layers) ||
        s.attn_gate.size() != w.layers.size()) {
        throw DimensionError("layer count mismatch between config, weights and scales");
    }
    std::vector<int> positions(tokens.ids.size());
    for (std::size_t b = 0; b < tokens.batch; ++b)
        for (std::size_t t = 0; t < tokens.seq; ++t) positions[b * tokens.seq + t] = static_cast<int>(t);

    Var x = g.add(g.embedding(w.token_embedding, tokens.ids),
                  g.embedding(w.position_embedding, positions));
    ForwardVars out;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const BoundLayer& layer = w.layers[l];
        Var x1;
        if (s.skip_attention[l] || !layer.has_attention) {
            if (!s.skip_attention[l]) {
                throw ContractError("layer " + std::to_string(l) +
                                    " has no attention weights but a nonzero attention gate");
            }
            x1 = g.scale(x, s.attn_residual[l]);
        } else {
            Var h = g.rms_norm(x, layer.attn_norm, config.norm_eps);
            Var q = g.matmul(h, layer.wq);
            Var k = g.matmul(h, layer.wk);
            Var v = g.matmul(h, layer.wv);
            Var att = g.causal_attention(q, k, v, tokens.batch, tokens.seq,
                                         static_cast<std::size_t>(config.n_heads));
            Var o = g.matmul(att, layer.wo);
            x1 = g.add(g.scale(o, s.attn_gate[l]), g.scale(x, s.attn_residual[l]));
        }
        Var h2 = g.rms_norm(x1, layer.mlp_norm, config.norm_eps);
        Var m = g.matmul(g.silu(g.matmul(h2, layer.w_up)), layer.w_down);
        x = g.add(g.scale(m, s.mlp_gate[l]), g.scale(x1, s.mlp_residual[l]));
        out.layer_outputs.push_back(x);
    }
    out.logits = g.matmul(g.rms_norm(x, w.final_norm, config.norm_eps), w.head);
    return out;
}

template <typename T>
BasicTensor<T> block_forward(const BasicTensor<T>& x_in, int layer, const BasicWeights<T>& w,
                             const ScaleSet& s) {
    if (layer < 0 || layer >= w.config.n_layers) {
        throw IndexError("layer " + std::to_string(layer) + " outside [0," +
                         std::to_string(w.config.n_layers) + ")");
    }
    if (x_in.rank() != 2 || x_in.cols() != static_cast<std::size_t>(w.config.d_model)) {
        throw DimensionError("block input " + shape_string(x_in.shape()) + " for d_model " +
                             std::to_string(w.config.d_model));
    }
    Graph<T> g;
    const BoundWeights bw = bind_weights(g, w, false);
    const auto i = static_cast<std::size_t>(layer);
    auto scalar = [&](double v) { return g.leaf(BasicTensor<T>::scalar(static_cast<T>(v)), false); };
    const BoundLayer& bl = bw.layers[i];
    const auto& cfg = w.config;
    Var x = g.leaf(x_in, false);
    Var x1;
    if (s.attn_gate[i] == 0.0 || !bl.has_attention) {
        if (s.attn_gate[i] != 0.0) throw ContractError("attention weights missing for layer " + std::to_string(layer));
        x1 = g.scale(x, scalar(s.attn_residual[i]));
    } else {
        Var h = g.rms_norm(x, bl.attn_norm, cfg.norm_eps);
        Var att = g.causal_attention(g.matmul(h, bl.wq), g.matmul(h, bl.wk), g.matmul(h, bl.wv), 1,
                                     x_in.rows(), static_cast<std::size_t>(cfg.n_heads));
        x1 = g.add(g.scale(g.matmul(att, bl.wo), scalar(s.attn_gate[i])),
                   g.scale(x, scalar(s.attn_residual[i])));
    }
    Var m = g.matmul(g.silu(g.matmul(g.rms_norm(x1, bl.mlp_norm, cfg.norm_eps), bl.w_up)), bl.w_down);
    return g.value(g.add(g.scale(m, scalar(s.mlp_gate[i])), g.scale(x1, scalar(s.mlp_residual[i]))));
}

template <typename T>
ModelOutput<T> model_forward(std::span<const int> tokens, const BasicWeights<T>& w,
                             const ScaleSet& s, const std::set<int>& collect_hidden) {
    for (int l : collect_hidden) {
        if (l < 0 || l >= w.config.n_layers) throw IndexError("hidden layer " + std::to_string(l));
    }
    BlockMask pinned;
    for (int l = 0; l < s.layers(); ++l)
        if (s.attn_gate[static_cast<std::size_t>(l)] == 0.0) pinned.removed.insert(l);
    Graph<T> g;
    const BoundWeights bw = bind_weights(g, w, false);
    const BoundScales bs = bind_scales(g, s, pinned, false);
    TokenGrid grid{1, tokens.size(), std::vector<int>(tokens.begin(), tokens.end())};
    const ForwardVars fv = forward(g, w.config, bw, bs, grid);
    ModelOutput<T> out;
    out.logits = g.value(fv.logits);
    for (int l : collect_hidden) out.hidden.emplace_back(l, g.value(fv.layer_outputs[static_cast<std::size_t>(l)]));
    return out;
}

#define HOPSCOTCH_INSTANTIATE(T)                                                                    \
    template BoundWeights bind_weights(Graph<T>&, const BasicWeights<T>&, bool);                   \
    template BoundScales bind_scales(Graph<T>&, const ScaleSet&, const BlockMask&, bool);          \
    template ForwardVars forward(Graph<T>&, const ModelConfig&, const BoundWeights&,               \
                                 const BoundScales&, const TokenGrid&);                            \
    template BasicTensor<T> block_forward(const BasicTensor<T>&, int, const BasicWeights<T>&,      \
                                          const ScaleSet&);                                        \
    template ModelOutput<T> model_forward(std::span<const int>, const BasicWeights<T>&,            \
                                          const ScaleSet&, const std::set<int>&);

HOPSCOTCH_INSTANTIATE(float)
HOPSCOTCH_INSTANTIATE(double)

#undef HOPSCOTCH_INSTANTIATE

}  // namespace hopscotch
