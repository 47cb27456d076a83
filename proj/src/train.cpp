// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hopscotch/errors.hpp"

namespace hopscotch {

TrainConfig TrainConfig::probe() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.epochs = 1;
    return cfg;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ContractError("learning rate must be positive");
    if (epochs < 1) throw ContractError("epochs must be at least 1");
    if (batch_size == 0) throw ContractError("batch size must be positive");
    if (patience < 1) throw ContractError("patience must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ContractError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ContractError("Adam eps must be positive");
    if (min_delta < 0.0) throw ContractError("min_delta must be nonnegative");
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr,
               const AdamOptions& options, std::span<const std::uint8_t> pinned,
               const std::function<std::string(std::size_t)>& name_of) {
    const std::size_t n = params.size();
    if (grads.size() != n || state.m.size() != n || state.v.size() != n || (!pinned.empty() && pinned.size() != n)) {
        throw DimensionError("adam_step: " + std::to_string(n) + " params, " + std::to_string(grads.size()) +
                             " grads, " + std::to_string(state.m.size()) + " moments");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(grads[i])) && (pinned.empty() || !pinned[i])) {
            const std::string name = name_of ? name_of(i) : "parameter " + std::to_string(i);
            throw NumericError("non-finite gradient for " + name);
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        if (!pinned.empty() && pinned[i]) continue;
        const double g = static_cast<double>(grads[i]);
        state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
        state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * mhat / (std::sqrt(vhat) + options.eps));
    }
}

template void adam_step<float>(std::span<float>, std::span<const float>, AdamState&, double, const AdamOptions&,
                               std::span<const std::uint8_t>, const std::function<std::string(std::size_t)>&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState&, double, const AdamOptions&,
                                std::span<const std::uint8_t>, const std::function<std::string(std::size_t)>&);

// ---------------------------------------------------------------------------

namespace {

template <typename T>
std::vector<double> collect_scale_grads(const Graph<T>& g, const BoundScales& bs) {
    std::vector<double> grad(4 * bs.attn_gate.size(), 0.0);
    const std::vector<Var>* groups[4] = {&bs.attn_gate, &bs.attn_residual, &bs.mlp_gate, &bs.mlp_residual};
    for (std::size_t l = 0; l < bs.attn_gate.size(); ++l) {
        for (std::size_t k = 0; k < 4; ++k) {
            if (const auto* gr = g.grad((*groups[k])[l])) grad[4 * l + k] = static_cast<double>((*gr)[0]);
        }
    }
    return grad;
}

void require_scored(const PackedBatch& batch) {
    if (batch.scored() == 0) throw ContractError("batch has no scored position");
}

template <typename T>
ScaleGradient nll_impl(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                       const PackedBatch& batch, bool with_grad) {
    require_scored(batch);
    Graph<T> g;
    const BoundWeights bw = bind_weights(g, w, false);
    const BoundScales bs = bind_scales(g, s, mask, with_grad);
    const ForwardVars fv = forward(g, w.config, bw, bs, batch.grid());
    const auto weights = batch.per_sample_weights();
    const Var loss = g.weighted_nll(fv.logits, batch.targets, weights);
    ScaleGradient out;
    out.loss = static_cast<double>(g.value(loss)[0]);
    if (with_grad) {
        g.backward(loss);
        out.grad = collect_scale_grads(g, bs);
    }
    return out;
}

template <typename T>
ScaleGradient hidden_impl(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                          const PackedBatch& batch, const BasicTensor<T>& reference, bool with_grad) {
    require_scored(batch);
    Graph<T> g;
    const BoundWeights bw = bind_weights(g, w, false);
    const BoundScales bs = bind_scales(g, s, mask, with_grad);
    const ForwardVars fv = forward(g, w.config, bw, bs, batch.grid());
    const Var loss = g.masked_sq_dist(fv.layer_outputs.back(), reference, batch.mask);
    ScaleGradient out;
    out.loss = static_cast<double>(g.value(loss)[0]);
    if (with_grad) {
        g.backward(loss);
        out.grad = collect_scale_grads(g, bs);
    }
    return out;
}

}  // namespace

template <typename T>
double scale_loss(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask, const PackedBatch& batch) {
    return nll_impl(w, s, mask, batch, false).loss;
}

template <typename T>
ScaleGradient scale_loss_grad(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                              const PackedBatch& batch) {
    return nll_impl(w, s, mask, batch, true);
}

template <typename T>
BasicTensor<T> reference_hidden(const BasicWeights<T>& w, const PackedBatch& batch) {
    Graph<T> g;
    const BoundWeights bw = bind_weights(g, w, false);
    const BoundScales bs = bind_scales(g, ScaleSet::ones(w.config.n_layers), BlockMask{}, false);
    const ForwardVars fv = forward(g, w.config, bw, bs, batch.grid());
    return g.value(fv.layer_outputs.back());
}

template <typename T>
double hidden_state_loss(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                         const PackedBatch& batch, const BasicTensor<T>& reference) {
    return hidden_impl(w, s, mask, batch, reference, false).loss;
}

template <typename T>
ScaleGradient hidden_state_loss_grad(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                                     const PackedBatch& batch, const BasicTensor<T>& reference) {
    return hidden_impl(w, s, mask, batch, reference, true);
}

#define HOPSCOTCH_INSTANTIATE(T)                                                                              \
    template double scale_loss(const BasicWeights<T>&, const ScaleSet&, const BlockMask&, const PackedBatch&); \
    template ScaleGradient scale_loss_grad(const BasicWeights<T>&, const ScaleSet&, const BlockMask&,         \
                                           const PackedBatch&);                                               \
    template BasicTensor<T> reference_hidden(const BasicWeights<T>&, const PackedBatch&);                    \
    template double hidden_state_loss(const BasicWeights<T>&, const ScaleSet&, const BlockMask&,              \
                                      const PackedBatch&, const BasicTensor<T>&);                             \
    template ScaleGradient hidden_state_loss_grad(const BasicWeights<T>&, const ScaleSet&, const BlockMask&,  \
                                                  const PackedBatch&, const BasicTensor<T>&);
HOPSCOTCH_INSTANTIATE(float)
HOPSCOTCH_INSTANTIATE(double)
#undef HOPSCOTCH_INSTANTIATE

// ---------------------------------------------------------------------------

namespace {

PackOptions pack_options(const TrainConfig& cfg, std::optional<std::uint64_t> seed) {
    PackOptions opt;
    opt.batch_size = cfg.batch_size;
    opt.max_len = cfg.max_len;
    opt.shuffle_seed = seed;
    return opt;
}

}  // namespace

double dataset_loss(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                    const TrainConfig& cfg) {
    if (data.empty()) throw ContractError("dataset_loss needs data");
    double total = 0.0;
    for (const auto& batch : pack_batches(data, pack_options(cfg, std::nullopt))) {
        total += scale_loss(w, s, mask, batch) * static_cast<double>(batch.batch);
    }
    return total / static_cast<double>(data.size());
}

EpochResult train_epoch(const Weights& w, ScaleSet& s, const BlockMask& mask, const std::vector<PackedBatch>& batches,
                        AdamState& state, const TrainConfig& cfg, Objective objective) {
    if (batches.empty()) throw ContractError("train_epoch needs at least one batch");
    const auto pinned = pinned_params(mask, s.layers());
    const AdamOptions opts{cfg.beta1, cfg.beta2, cfg.adam_eps};
    double sum = 0.0;
    for (const auto& batch : batches) {
        ScaleGradient sg;
        if (objective == Objective::nll) {
            sg = scale_loss_grad(w, s, mask, batch);
        } else {
            sg = hidden_state_loss_grad(w, s, mask, batch, reference_hidden(w, batch));
        }
        if (!std::isfinite(sg.loss)) throw NumericError("non-finite training loss");
        sum += sg.loss;
        std::vector<double> flat = s.flat();
        adam_step<double>(flat, sg.grad, state, cfg.learning_rate, opts, pinned,
                          [&](std::size_t i) { return s.param_name(i); });
        s.set_flat(flat);
    }
    return {sum / static_cast<double>(batches.size())};
}

TrainResult train_scales(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                         const TrainConfig& cfg, Objective objective) {
    cfg.validate();
    if (data.empty()) throw ContractError("train_scales needs data");
    check_scales(s, mask, w.config.n_layers);

    const auto eval_batches = pack_batches(data, pack_options(cfg, std::nullopt));
    std::vector<Tensor> references;
    if (objective == Objective::hidden_state) {
        for (const auto& b : eval_batches) references.push_back(reference_hidden(w, b));
    }
    auto full_loss = [&](const ScaleSet& cur) {
        double total = 0.0;
        for (std::size_t i = 0; i < eval_batches.size(); ++i) {
            const double l = objective == Objective::nll
                                 ? scale_loss(w, cur, mask, eval_batches[i])
                                 : hidden_state_loss(w, cur, mask, eval_batches[i], references[i]);
            total += l * static_cast<double>(eval_batches[i].batch);
        }
        return total / static_cast<double>(data.size());
    };

    TrainResult result;
    ScaleSet cur = s;
    result.scales = s;
    double best = full_loss(cur);
    double anchor = best;  // best value that counted as an improvement
    result.epoch_losses.push_back(best);
    AdamState state = AdamState::zeros(cur.param_count());
    int stale = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto batches = pack_batches(data, pack_options(cfg, cfg.shuffle_seed + static_cast<std::uint64_t>(epoch)));
        result.batch_means.push_back(train_epoch(w, cur, mask, batches, state, cfg, objective).mean_batch_loss);
        const double loss = full_loss(cur);
        if (!std::isfinite(loss)) throw NumericError("non-finite loss after epoch " + std::to_string(epoch));
        result.epoch_losses.push_back(loss);
        if (loss < best) {
            best = loss;
            result.scales = cur;
            result.best_epoch = epoch;
        }
        if (loss < anchor - cfg.min_delta) {
            anchor = loss;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            result.early_stopped = epoch < cfg.epochs;
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

const char* to_string(Metric metric) {
    return metric == Metric::strict ? "strict" : "flexible";
}

Metric parse_metric(std::string_view name) {
    if (name == "strict") return Metric::strict;
    if (name == "flexible") return Metric::flexible;
    throw ContractError("unknown metric '" + std::string(name) + "'");
}

bool answer_matches(std::string_view generated, std::string_view reference, Metric metric) {
    if (metric == Metric::strict) return generated == reference;
    const auto want = last_integer(reference);
    if (!want) return generated == reference;
    const auto got = last_integer(generated);
    return got && *got == *want;
}

std::vector<std::string> generate_responses(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& items) {
    constexpr std::size_t kChunk = 64;
    const auto& vocab = Vocabulary::standard();
    std::vector<std::string> out;
    out.reserve(items.size());
    for (std::size_t start = 0; start < items.size(); start += kChunk) {
        const std::size_t end = std::min(items.size(), start + kChunk);
        std::vector<std::vector<int>> prompts;
        for (std::size_t i = start; i < end; ++i) prompts.push_back(make_sample(items[i].prompt, "").prompt);
        const auto gens = generate_greedy_batch(w, s, prompts, static_cast<std::size_t>(w.config.max_seq_len));
        for (const auto& g : gens) out.push_back(vocab.decode(g));
    }
    return out;
}

EvalPair evaluate_both(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& eval_set) {
    if (eval_set.empty()) throw ContractError("evaluate needs a nonempty eval set");
    const auto responses = generate_responses(w, s, eval_set);
    EvalPair r;
    r.strict.total = r.flexible.total = eval_set.size();
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        r.strict.correct += answer_matches(responses[i], eval_set[i].response, Metric::strict);
        r.flexible.correct += answer_matches(responses[i], eval_set[i].response, Metric::flexible);
    }
    return r;
}

EvalResult evaluate(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& eval_set, Metric metric) {
    const auto both = evaluate_both(w, s, eval_set);
    return metric == Metric::strict ? both.strict : both.flexible;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Var> weight_vars(const BoundWeights& bw) {
    std::vector<Var> vars{bw.token_embedding, bw.position_embedding};
    for (const auto& l : bw.layers) {
        if (l.has_attention) vars.insert(vars.end(), {l.attn_norm, l.wq, l.wk, l.wv, l.wo});
        vars.insert(vars.end(), {l.mlp_norm, l.w_up, l.w_down});
    }
    vars.push_back(bw.final_norm);
    vars.push_back(bw.head);
    return vars;
}

}  // namespace

PretrainResult pretrain(const ModelConfig& config, const TaskSpec& task, const PretrainOptions& options) {
    config.validate();
    task.validate();
    if (options.steps < 0) throw ContractError("pretrain steps must be nonnegative");
    if (!(options.learning_rate > 0.0)) throw ContractError("learning rate must be positive");

    PretrainResult result;
    result.weights = init_weights(config, options.seed);
    Weights& w = result.weights;

    std::vector<Tensor*> tensors;
    w.for_each_tensor([&](const std::string&, Tensor& t) { tensors.push_back(&t); });
    std::vector<std::string> names;
    w.for_each_tensor([&](const std::string& name, const Tensor&) { names.push_back(name); });
    std::vector<AdamState> states;
    for (auto* t : tensors) states.push_back(AdamState::zeros(t->size()));

    TaskSpec eval_spec = task;
    eval_spec.split = Split::eval;
    eval_spec.seed = derive_seed(options.seed, 0xe7a1);
    const auto eval_items = gen_task_items(eval_spec, options.eval_count);
    const ScaleSet ones = ScaleSet::ones(config.n_layers);

    PackOptions pack;
    pack.batch_size = options.batch_size;
    pack.max_len = static_cast<std::size_t>(config.max_seq_len);

    for (int step = 0; step < options.steps; ++step) {
        TaskSpec spec = task;
        spec.split = Split::train;
        spec.seed = derive_seed(options.seed, static_cast<std::uint64_t>(step) + 1);
        const auto batch = pack_batches(gen_task(spec, options.batch_size), pack).front();

        Graph<float> g;
        const BoundWeights bw = bind_weights(g, w, true);
        const BoundScales bs = bind_scales(g, ones, BlockMask{}, false);
        const ForwardVars fv = forward(g, config, bw, bs, batch.grid());
        const auto weights = batch.per_sample_weights();
        const Var loss = g.weighted_nll(fv.logits, batch.targets, weights);
        const double lv = static_cast<double>(g.value(loss)[0]);
        if (!std::isfinite(lv)) throw NumericError("pretraining diverged at step " + std::to_string(step));
        g.backward(loss);

        const auto vars = weight_vars(bw);
        double sq = 0.0;
        for (const Var v : vars) {
            for (float x : g.grad(v)->values()) sq += static_cast<double>(x) * x;
        }
        const double norm = std::sqrt(sq);
        const double clip = options.clip_norm > 0.0 && norm > options.clip_norm ? options.clip_norm / norm : 1.0;
        double lr = options.learning_rate;
        if (options.warmup > 0 && step < options.warmup) lr *= static_cast<double>(step + 1) / options.warmup;

        for (std::size_t i = 0; i < vars.size(); ++i) {
            const auto gv = g.grad(vars[i])->values();
            std::vector<float> grad(gv.begin(), gv.end());
            if (clip != 1.0)
                for (float& x : grad) x = static_cast<float>(x * clip);
            std::span<float> params(tensors[i]->data(), tensors[i]->size());
            adam_step<float>(params, grad, states[i], lr, AdamOptions{}, {},
                             [&](std::size_t j) { return names[i] + "[" + std::to_string(j) + "]"; });
        }
        result.losses.push_back(lv);
        result.steps_run = step + 1;
        if (options.on_step) options.on_step(step, lv);

        const bool last = step + 1 == options.steps;
        if (last || (options.eval_every > 0 && (step + 1) % options.eval_every == 0)) {
            result.final_accuracy = evaluate(w, ones, eval_items, Metric::flexible).accuracy();
            if (result.final_accuracy >= options.target_accuracy) break;
        }
    }
    if (result.steps_run == 0 && options.eval_count > 0) {
        result.final_accuracy = evaluate(w, ones, eval_items, Metric::flexible).accuracy();
    }
    return result;
}

}  // namespace hopscotch
