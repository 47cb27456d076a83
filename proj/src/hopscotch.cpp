// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/hopscotch.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "hopscotch/errors.hpp"

namespace hopscotch {

const char* to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::iterative: return "iterative";
        case Strategy::full_greedy: return "full-greedy";
        case Strategy::random: return "random";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "iterative") return Strategy::iterative;
    if (name == "full-greedy") return Strategy::full_greedy;
    if (name == "random") return Strategy::random;
    throw ContractError("unknown strategy '" + std::string(name) + "'");
}

void HopscotchConfig::validate(int n_layers) const {
    if (target_removals.has_value() == loss_threshold.has_value()) {
        throw ContractError("exactly one of target_removals and loss_threshold must be set");
    }
    if (target_removals && (*target_removals < 0 || *target_removals >= n_layers)) {
        throw ContractError("target_removals must lie in [0, " + std::to_string(n_layers) + ")");
    }
    if (loss_threshold && !std::isfinite(*loss_threshold)) throw ContractError("loss_threshold must be finite");
    if (candidates) {
        for (int l : *candidates)
            if (l < 0 || l >= n_layers) throw IndexError("candidate layer " + std::to_string(l) + " out of range");
    }
    if (probe_parallel < 1) throw ContractError("probe_parallel must be at least 1");
    probe.validate();
    rescale.validate();
}

std::vector<int> RemovalTrace::removed_layers() const {
    std::vector<int> out;
    for (const auto& s : steps)
        if (s.accepted) out.insert(out.end(), s.chosen.begin(), s.chosen.end());
    return out;
}

std::uint64_t probe_seed(std::uint64_t seed, std::size_t index) {
    return derive_seed(seed, 2 * index + 1);
}

std::uint64_t rescale_seed(std::uint64_t seed, std::size_t index) {
    return derive_seed(seed, 2 * index + 2);
}

// ---------------------------------------------------------------------------

double score_block(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                   int l, const TrainConfig& probe) {
    if (l < 0 || l >= w.config.n_layers) throw IndexError("layer " + std::to_string(l) + " out of range");
    if (mask.contains(l)) throw ContractError("layer " + std::to_string(l) + " is already removed");
    if (data.empty()) throw ContractError("score_block needs data");
    probe.validate();
    BlockMask pinned = mask;
    pinned.removed.insert(l);
    ScaleSet trial = pin_removed(s, pinned);
    AdamState state = AdamState::zeros(trial.param_count());
    PackOptions pack;
    pack.batch_size = probe.batch_size;
    pack.max_len = probe.max_len;
    double total = 0.0;
    std::size_t count = 0;
    for (int epoch = 0; epoch < probe.epochs; ++epoch) {
        pack.shuffle_seed = probe.shuffle_seed + static_cast<std::uint64_t>(epoch);
        const auto batches = pack_batches(data, pack);
        total += train_epoch(w, trial, pinned, batches, state, probe).mean_batch_loss * static_cast<double>(batches.size());
        count += batches.size();
    }
    return total / static_cast<double>(count);
}

std::vector<ProbeScore> score_blocks(const Weights& w, const ScaleSet& s, const BlockMask& mask,
                                     const std::vector<Sample>& data, const std::set<int>& candidates,
                                     const TrainConfig& probe, int parallel) {
    const std::vector<int> layers(candidates.begin(), candidates.end());
    std::vector<ProbeScore> out(layers.size());
    const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(parallel, static_cast<int>(layers.size()))));
    if (workers <= 1) {
        for (std::size_t i = 0; i < layers.size(); ++i) out[i] = {layers[i], score_block(w, s, mask, data, layers[i], probe)};
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < layers.size();) {
            try {
                out[i] = {layers[i], score_block(w, s, mask, data, layers[i], probe)};
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

int select_block(const std::map<int, double>& scores) {
    if (scores.empty()) throw ContractError("select_block needs at least one score");
    auto best = scores.begin();
    for (auto it = scores.begin(); it != scores.end(); ++it)
        if (it->second < best->second) best = it;  // map order makes ties resolve low
    return best->first;
}

int select_block(const std::vector<ProbeScore>& scores) {
    std::map<int, double> m;
    for (const auto& s : scores) {
        if (!m.emplace(s.layer, s.score).second) throw ContractError("duplicate layer in scores");
    }
    return select_block(m);
}

// ---------------------------------------------------------------------------

namespace {

StepEval eval_step(const Weights& w, const ScaleSet& s, const std::vector<TaskItem>& items) {
    const auto both = evaluate_both(w, s, items);
    return {both.strict.accuracy(), both.flexible.accuracy(), items.size()};
}

TrainResult rescale_now(const Weights& w, const ScaleSet& s, const BlockMask& mask, const std::vector<Sample>& data,
                        const HopscotchConfig& cfg, std::uint64_t seed) {
    TrainConfig rc = cfg.rescale;
    rc.shuffle_seed = seed;
    return train_scales(w, pin_removed(s, mask), mask, data, rc);
}

double best_loss(const TrainResult& r) {
    return r.epoch_losses.at(static_cast<std::size_t>(r.best_epoch));
}

}  // namespace

HopscotchResult run_hopscotch(const Weights& w, const std::vector<Sample>& data, const HopscotchConfig& cfg) {
    const int L = w.config.n_layers;
    cfg.validate(L);
    if (data.empty()) throw ContractError("run_hopscotch needs data");

    HopscotchResult res;
    res.scales = ScaleSet::ones(L);
    res.trace.strategy = Strategy::iterative;
    res.trace.n_layers = L;
    res.trace.seed = cfg.seed;
    const int limit = cfg.target_removals ? *cfg.target_removals : L - 1;

    for (std::size_t index = 0;; ++index) {
        if (static_cast<int>(res.mask.size()) >= limit) {
            res.trace.stop_reason = cfg.target_removals ? "target reached" : "all but one block removed";
            break;
        }
        std::set<int> candidates;
        for (int l = 0; l < L; ++l)
            if (!res.mask.contains(l) && (!cfg.candidates || cfg.candidates->count(l))) candidates.insert(l);
        if (candidates.empty()) {
            res.trace.stop_reason = "no candidates left";
            break;
        }
        RemovalStep step;
        step.probe_seed = probe_seed(cfg.seed, index);
        step.rescale_seed = rescale_seed(cfg.seed, index);
        TrainConfig pc = cfg.probe;
        pc.shuffle_seed = step.probe_seed;
        step.scores = score_blocks(w, res.scales, res.mask, data, candidates, pc, cfg.probe_parallel);
        const int chosen = select_block(step.scores);
        step.chosen = {chosen};

        BlockMask next = res.mask;
        next.removed.insert(chosen);
        const TrainResult tr = rescale_now(w, res.scales, next, data, cfg, step.rescale_seed);
        step.rescale_losses = tr.epoch_losses;
        step.final_loss = best_loss(tr);

        if (cfg.loss_threshold && step.final_loss > *cfg.loss_threshold) {
            step.accepted = false;
            res.trace.steps.push_back(std::move(step));
            res.trace.stop_reason = "loss threshold exceeded";
            break;
        }
        res.mask = next;
        res.scales = tr.scales;
        if (!cfg.eval_set.empty()) step.eval = eval_step(w, res.scales, cfg.eval_set);
        res.trace.steps.push_back(std::move(step));
    }
    if (res.trace.stop_reason.empty()) res.trace.stop_reason = "target reached";
    return res;
}

HopscotchResult full_greedy(const Weights& w, const std::vector<Sample>& data, int k, const HopscotchConfig& cfg) {
    const int L = w.config.n_layers;
    if (k < 0 || k >= L) throw ContractError("full_greedy needs 0 <= K < L");
    if (data.empty()) throw ContractError("full_greedy needs data");
    HopscotchConfig c = cfg;
    c.target_removals = k;
    c.loss_threshold.reset();
    c.validate(L);

    HopscotchResult res;
    res.scales = ScaleSet::ones(L);
    res.trace.strategy = Strategy::full_greedy;
    res.trace.n_layers = L;
    res.trace.seed = cfg.seed;
    res.trace.stop_reason = "target reached";
    if (k == 0) return res;

    std::set<int> candidates;
    for (int l = 0; l < L; ++l)
        if (!cfg.candidates || cfg.candidates->count(l)) candidates.insert(l);
    if (static_cast<int>(candidates.size()) < k) throw ContractError("fewer candidates than requested removals");

    RemovalStep step;
    step.probe_seed = probe_seed(cfg.seed, 0);
    step.rescale_seed = rescale_seed(cfg.seed, 0);
    TrainConfig pc = cfg.probe;
    pc.shuffle_seed = step.probe_seed;
    step.scores = score_blocks(w, res.scales, res.mask, data, candidates, pc, cfg.probe_parallel);
    std::vector<ProbeScore> ranked = step.scores;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const ProbeScore& a, const ProbeScore& b) { return a.score < b.score; });
    for (int i = 0; i < k; ++i) {
        step.chosen.push_back(ranked[static_cast<std::size_t>(i)].layer);
        res.mask.removed.insert(ranked[static_cast<std::size_t>(i)].layer);
    }
    const TrainResult tr = rescale_now(w, res.scales, res.mask, data, cfg, step.rescale_seed);
    step.rescale_losses = tr.epoch_losses;
    step.final_loss = best_loss(tr);
    res.scales = tr.scales;
    if (!cfg.eval_set.empty()) step.eval = eval_step(w, res.scales, cfg.eval_set);
    res.trace.steps.push_back(std::move(step));
    return res;
}

BlockMask random_blocks(int n_layers, int k, std::uint64_t seed) {
    const int pool_size = n_layers - 2;
    if (k < 0 || k > std::max(0, pool_size)) {
        throw ContractError("cannot draw " + std::to_string(k) + " layers from 1.." + std::to_string(n_layers - 2));
    }
    std::vector<int> pool(static_cast<std::size_t>(std::max(0, pool_size)));
    std::iota(pool.begin(), pool.end(), 1);
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    BlockMask mask;
    mask.removed.insert(pool.begin(), pool.begin() + k);
    return mask;
}

HopscotchResult random_removal(const Weights& w, const std::vector<Sample>& data, int k, const HopscotchConfig& cfg,
                               bool rescale) {
    const int L = w.config.n_layers;
    HopscotchResult res;
    res.trace.strategy = Strategy::random;
    res.trace.n_layers = L;
    res.trace.seed = cfg.seed;
    res.trace.stop_reason = "target reached";
    res.mask = random_blocks(L, k, derive_seed(cfg.seed, 0x7a4d));
    res.scales = pin_removed(ScaleSet::ones(L), res.mask);
    if (k == 0) return res;

    RemovalStep step;
    step.chosen.assign(res.mask.removed.begin(), res.mask.removed.end());
    step.rescale_seed = rescale_seed(cfg.seed, 0);
    if (rescale) {
        if (data.empty()) throw ContractError("random_removal needs data to rescale");
        const TrainResult tr = rescale_now(w, res.scales, res.mask, data, cfg, step.rescale_seed);
        step.rescale_losses = tr.epoch_losses;
        step.final_loss = best_loss(tr);
        res.scales = tr.scales;
    } else if (!data.empty()) {
        step.final_loss = dataset_loss(w, res.scales, res.mask, data, cfg.rescale);
        step.rescale_losses = {step.final_loss};
    }
    if (!cfg.eval_set.empty()) step.eval = eval_step(w, res.scales, cfg.eval_set);
    res.trace.steps.push_back(std::move(step));
    return res;
}

// ---------------------------------------------------------------------------

Elbow detect_elbow(const std::vector<double>& losses) {
    if (losses.size() < 3) throw ContractError("detect_elbow needs at least three points");
    Elbow e;
    e.second_difference = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k + 1 < losses.size(); ++k) {
        const double d2 = losses[k + 1] - 2.0 * losses[k] + losses[k - 1];
        if (d2 > e.second_difference) {
            e.second_difference = d2;
            e.index = static_cast<int>(k);
        }
    }
    e.found = e.second_difference >= 1e-6;
    return e;
}

}  // namespace hopscotch
