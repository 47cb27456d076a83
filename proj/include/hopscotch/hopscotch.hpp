// SPDX-License-Identifier: Apache-2.0
//
// Greedy selection of attention blocks to skip, with rescaling of the rest.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hopscotch/data.hpp"
#include "hopscotch/model.hpp"
#include "hopscotch/train.hpp"

namespace hopscotch {

enum class Strategy { iterative, full_greedy, random };

const char* to_string(Strategy strategy);
Strategy parse_strategy(std::string_view name);

struct HopscotchConfig {
    std::optional<int> target_removals;  // exactly one of these two is set
    std::optional<double> loss_threshold;  // absolute post-rescale loss
    TrainConfig probe = TrainConfig::probe();
    TrainConfig rescale = TrainConfig::rescale();
    std::optional<std::set<int>> candidates;  // default: every layer not yet removed
    std::uint64_t seed = 0;  // probe and rescale shuffles derive from it
    int probe_parallel = 1;  // worker threads for the candidate probes of one step
    std::vector<TaskItem> eval_set;  // when nonempty, every step is evaluated on it

    void validate(int n_layers) const;
};

struct ProbeScore {
    int layer = 0;
    double score = 0.0;
    friend bool operator==(const ProbeScore&, const ProbeScore&) = default;
};

struct StepEval {
    double strict = 0.0;
    double flexible = 0.0;
    std::size_t count = 0;
    friend bool operator==(const StepEval&, const StepEval&) = default;
};

struct RemovalStep {
    std::vector<ProbeScore> scores;  // ascending layer
    std::vector<int> chosen;  // one layer per iterative step; K for full greedy
    std::vector<double> rescale_losses;  // full-data loss per rescale epoch, [0] before training
    double final_loss = 0.0;  // loss of the scales kept after rescaling
    bool accepted = true;  // false when the step crossed the loss threshold and was undone
    std::uint64_t probe_seed = 0;
    std::uint64_t rescale_seed = 0;
    std::optional<StepEval> eval;
    friend bool operator==(const RemovalStep&, const RemovalStep&) = default;
};

struct StageResult {
    std::string stage;  // e.g. "baseline", "noscale", "scaled"
    StepEval eval;
    friend bool operator==(const StageResult&, const StageResult&) = default;
};

struct RemovalTrace {
    Strategy strategy = Strategy::iterative;
    int n_layers = 0;
    std::uint64_t seed = 0;
    std::vector<RemovalStep> steps;
    std::string stop_reason;
    std::vector<StageResult> stages;

    /// Layers removed by accepted steps, in removal order.
    std::vector<int> removed_layers() const;
    friend bool operator==(const RemovalTrace&, const RemovalTrace&) = default;
};

struct HopscotchResult {
    ScaleSet scales;
    BlockMask mask;
    RemovalTrace trace;
};

/// Mean per-batch training loss of one probe epoch with layer `l` pinned off.
/// Works on copies: `s` is untouched and the optimizer state starts fresh.
double score_block(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                   int l, const TrainConfig& probe);

/// Probes every candidate; results in ascending layer order whatever `parallel` is.
std::vector<ProbeScore> score_blocks(const Weights& w, const ScaleSet& s, const BlockMask& mask,
                                     const std::vector<Sample>& data, const std::set<int>& candidates,
                                     const TrainConfig& probe, int parallel = 1);

/// Argmin, ties to the lowest layer. Throws ContractError on empty input.
int select_block(const std::map<int, double>& scores);
int select_block(const std::vector<ProbeScore>& scores);

HopscotchResult run_hopscotch(const Weights& w, const std::vector<Sample>& data, const HopscotchConfig& cfg);

/// Scores every block once on the intact model, removes the K best together,
/// then rescales once.
HopscotchResult full_greedy(const Weights& w, const std::vector<Sample>& data, int k, const HopscotchConfig& cfg);

/// K distinct layers drawn from 1..L-2.
BlockMask random_blocks(int n_layers, int k, std::uint64_t seed);

/// Random removal followed by one rescale (skipped when `rescale` is false).
HopscotchResult random_removal(const Weights& w, const std::vector<Sample>& data, int k, const HopscotchConfig& cfg,
                               bool rescale = true);

/// Seeds used by step `index` of a run seeded with `seed`.
std::uint64_t probe_seed(std::uint64_t seed, std::size_t index);
std::uint64_t rescale_seed(std::uint64_t seed, std::size_t index);

struct Elbow {
    int index = 1;
    double second_difference = 0.0;
    bool found = false;  // false when every second difference is below 1e-6
};

/// k in [1, n-2] maximizing losses[k+1] - 2 losses[k] + losses[k-1]; ties to
/// the smallest k. Needs at least three points.
Elbow detect_elbow(const std::vector<double>& losses);

}  // namespace hopscotch
