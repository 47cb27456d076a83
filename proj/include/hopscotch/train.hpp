// SPDX-License-Identifier: Apache-2.0
//
// Scale training over frozen weights, toy pretraining, and accuracy metrics.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hopscotch/data.hpp"
#include "hopscotch/model.hpp"

namespace hopscotch {

struct TrainConfig {
    double learning_rate = 3e-3;
    std::size_t batch_size = 32;
    int epochs = 10;  // upper bound; early stopping usually ends sooner
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t shuffle_seed = 0;
    int patience = 2;
    double min_delta = 1e-4;
    std::size_t max_len = 64;

    static TrainConfig rescale() { return {}; }
    /// One epoch at the large learning rate.
    static TrainConfig probe();

    void validate() const;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    static AdamState zeros(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0}; }
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update. Entries with pinned[i] != 0 keep their
/// value and moments. A non-finite gradient throws NumericError naming the
/// parameter through `name_of` (or its index when `name_of` is empty).
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state, double lr,
               const AdamOptions& options = {}, std::span<const std::uint8_t> pinned = {},
               const std::function<std::string(std::size_t)>& name_of = {});

// ---------------------------------------------------------------------------

/// Loss value plus its gradient with respect to the flat scale vector
/// (ScaleSet::flat order). Pinned entries always carry a zero gradient.
struct ScaleGradient {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Mean over rows of each row's mean masked NLL. Throws ContractError when the
/// batch has no scored position.
template <typename T>
double scale_loss(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask, const PackedBatch& batch);

template <typename T>
ScaleGradient scale_loss_grad(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                              const PackedBatch& batch);

/// Last-layer hidden states of the all-ones model on `batch`, [batch*seq x d].
template <typename T>
BasicTensor<T> reference_hidden(const BasicWeights<T>& w, const PackedBatch& batch);

/// Mean over scored positions of ||h - reference||^2, h the last layer output.
template <typename T>
double hidden_state_loss(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                         const PackedBatch& batch, const BasicTensor<T>& reference);

template <typename T>
ScaleGradient hidden_state_loss_grad(const BasicWeights<T>& w, const ScaleSet& s, const BlockMask& mask,
                                     const PackedBatch& batch, const BasicTensor<T>& reference);

enum class Objective { nll, hidden_state };

/// Sample-weighted mean of scale_loss over fixed-order batches of `data`.
double dataset_loss(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                    const TrainConfig& cfg);

struct EpochResult {
    double mean_batch_loss = 0.0;  // average of per-batch training losses
};

/// One pass over `batches`, updating `s` and `state` in place.
EpochResult train_epoch(const Weights& w, ScaleSet& s, const BlockMask& mask, const std::vector<PackedBatch>& batches,
                        AdamState& state, const TrainConfig& cfg, Objective objective = Objective::nll);

struct TrainResult {
    ScaleSet scales;  // best full-data loss seen, including the starting point
    std::vector<double> epoch_losses;  // [0] is the initial full-data loss
    std::vector<double> batch_means;  // mean training batch loss per epoch
    int best_epoch = 0;
    bool early_stopped = false;
};

/// Shuffles with cfg.shuffle_seed + epoch. Stops after `patience` epochs
/// without an improvement of at least min_delta over the best loss.
TrainResult train_scales(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                         const TrainConfig& cfg, Objective objective = Objective::nll);

// ---------------------------------------------------------------------------

enum class Metric { strict, flexible };

const char* to_string(Metric metric);
Metric parse_metric(std::string_view name);

/// Exact string equality, or equality of the last integers (falling back to
/// full strings when the reference has none).
bool answer_matches(std::string_view generated, std::string_view reference, Metric metric);

struct EvalResult {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Greedy-decodes every prompt and scores it against its reference response.
EvalResult evaluate(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& eval_set, Metric metric);

/// Both metrics from one decoding pass.
struct EvalPair {
    EvalResult strict;
    EvalResult flexible;
};
EvalPair evaluate_both(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& eval_set);

/// Decoded responses, one per item, in order.
std::vector<std::string> generate_responses(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& items);

// ---------------------------------------------------------------------------

struct PretrainOptions {
    int steps = 2000;
    double learning_rate = 3e-3;
    int warmup = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    int eval_every = 250;  // 0 disables periodic evaluation
    std::size_t eval_count = 200;
    double target_accuracy = 0.9;  // flexible accuracy that ends training early
    double clip_norm = 1.0;
    std::function<void(int step, double loss)> on_step;  // optional progress hook
};

struct PretrainResult {
    Weights weights;
    int steps_run = 0;
    double final_accuracy = 0.0;  // flexible, on the eval split
    std::vector<double> losses;
};

/// Full-weight Adam on freshly drawn training-split batches of `task`.
PretrainResult pretrain(const ModelConfig& config, const TaskSpec& task, const PretrainOptions& options);

}  // namespace hopscotch
