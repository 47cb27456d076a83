// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "hopscotch/errors.hpp"
#include "hopscotch/train.hpp"
#include "oracles.hpp"

using namespace hopscotch;

namespace {

std::vector<Sample> small_set(std::uint64_t seed, std::size_t n) {
    TaskSpec spec;
    spec.seed = seed;
    return gen_task(spec, n);
}

/// Mean over samples of each sample's mean NLL over its target tokens, by the oracle forward.
double oracle_loss(const Weights& w, const ScaleSet& s, const std::vector<Sample>& data) {
    const Weights64 w64 = w.cast<double>();
    double total = 0;
    for (const auto& smp : data) {
        std::vector<int> full = smp.prompt;
        full.insert(full.end(), smp.target.begin(), smp.target.end());
        const std::vector<int> input(full.begin(), full.end() - 1);
        const auto logits = oracle::forward(w64, s, input);
        double sum = 0;
        for (std::size_t j = 0; j < smp.target.size(); ++j) {
            const std::size_t pos = smp.prompt.size() - 1 + j;
            sum += oracle::nll(logits[pos], full[pos + 1]);
        }
        total += sum / static_cast<double>(smp.target.size());
    }
    return total / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("first Adam step moves each parameter by lr against its gradient sign") {
    std::vector<double> p{1.0, -2.0, 0.5};
    const std::vector<double> g{0.3, -4.0, 0.0};
    auto st = AdamState::zeros(3);
    adam_step<double>(p, g, st, 0.1);
    // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(p[2] == 0.5);
    CHECK(st.step == 1);
}

TEST_CASE("second Adam step matches the closed form") {
    std::vector<double> p{0.0};
    auto st = AdamState::zeros(1);
    const double lr = 0.01, g1 = 2.0, g2 = -1.0;
    adam_step<double>(p, std::vector<double>{g1}, st, lr);
    adam_step<double>(p, std::vector<double>{g2}, st, lr);
    const double m = 0.9 * (0.1 * g1) + 0.1 * g2;
    const double v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    const double want = -lr * g1 / (std::abs(g1) + 1e-8) - lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("Adam leaves pinned parameters and their moments untouched") {
    std::vector<double> p{1.0, 1.0};
    const std::vector<double> g{1.0, 1.0};
    const std::vector<std::uint8_t> pinned{1, 0};
    auto st = AdamState::zeros(2);
    for (int i = 0; i < 5; ++i) adam_step<double>(p, g, st, 0.1, {}, pinned);
    CHECK(p[0] == 1.0);
    CHECK(st.m[0] == 0.0);
    CHECK(st.v[0] == 0.0);
    CHECK(p[1] < 1.0);
}

TEST_CASE("a NaN gradient raises a numeric error naming the parameter") {
    std::vector<double> p{1.0, 1.0};
    const std::vector<double> g{0.0, std::nan("")};
    auto st = AdamState::zeros(2);
    try {
        adam_step<double>(p, g, st, 0.1, {}, {}, [](std::size_t i) { return "scale" + std::to_string(i); });
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("scale1") != std::string::npos);
    }
}

TEST_CASE("scale gradients match central differences for every scale") {
    for (int L = 2; L <= 4; ++L) {
        const auto cfg = oracle::tiny_config(L, 16, 2, 32);
        const Weights64 w = oracle::random_weights(cfg, 100 + L, 0.3f).cast<double>();
        BlockMask mask;
        if (L == 4) mask.removed = {2};
        const auto s = pin_removed(oracle::random_scales(L, L), mask);
        const auto batch = pack_batches(small_set(L, 3), PackOptions{3, 64, std::nullopt, false})[0];
        const auto sg = scale_loss_grad(w, s, mask, batch);
        CHECK(sg.loss == doctest::Approx(scale_loss(w, s, mask, batch)).epsilon(1e-12));
        const double h = 1e-5;
        for (std::size_t i = 0; i < s.param_count(); ++i) {
            if (mask.contains(static_cast<int>(i / 4)) && i % 4 == 0) {
                CHECK(sg.grad[i] == 0.0);
                continue;
            }
            auto up = s, down = s;
            up.param(i) += h;
            down.param(i) -= h;
            const double fd = (scale_loss(w, up, mask, batch) - scale_loss(w, down, mask, batch)) / (2 * h);
            const double rel = std::abs(fd - sg.grad[i]) / std::max(1e-8, std::abs(fd));
            CHECK_MESSAGE(rel <= 1e-4, s.param_name(i), " fd=", fd, " tape=", sg.grad[i]);
        }
    }
}

TEST_CASE("hidden-state objective gradients match central differences") {
    const auto cfg = oracle::tiny_config(3, 16, 2, 32);
    const Weights64 w = oracle::random_weights(cfg, 7, 0.3f).cast<double>();
    BlockMask mask;
    mask.removed = {1};
    const auto s = pin_removed(oracle::random_scales(3, 7), mask);
    const auto batch = pack_batches(small_set(7, 2), PackOptions{2, 64, std::nullopt, false})[0];
    const auto ref = reference_hidden(w, batch);
    const auto sg = hidden_state_loss_grad(w, s, mask, batch, ref);
    const double h = 1e-5;
    for (std::size_t i = 0; i < s.param_count(); ++i) {
        if (i == 4) continue;
        auto up = s, down = s;
        up.param(i) += h;
        down.param(i) -= h;
        const double fd =
            (hidden_state_loss(w, up, mask, batch, ref) - hidden_state_loss(w, down, mask, batch, ref)) / (2 * h);
        CHECK(std::abs(fd - sg.grad[i]) <= 1e-4 * std::max(1e-8, std::abs(fd)));
    }
    CHECK(hidden_state_loss(w, ScaleSet::ones(3), BlockMask{}, batch, ref) == doctest::Approx(0.0));
}

TEST_CASE("packed batch loss equals the mean of per-sample losses") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 3, 0.3f);
    const auto s = oracle::random_scales(2, 3);
    TaskSpec spec;
    spec.max_chain = 3;
    spec.seed = 4;
    const auto data = gen_task(spec, 6);  // varied lengths, so padding is exercised
    const auto batch = pack_batches(data, PackOptions{6, 64, std::nullopt, false})[0];
    double single = 0;
    for (const auto& smp : data) {
        single += scale_loss(w, s, BlockMask{}, pack_batches({smp}, PackOptions{1, 64, std::nullopt, false})[0]);
    }
    CHECK(scale_loss(w, s, BlockMask{}, batch) == doctest::Approx(single / 6).epsilon(1e-5));
    CHECK(scale_loss(w, s, BlockMask{}, batch) == doctest::Approx(oracle_loss(w, s, data)).epsilon(1e-4));
}

TEST_CASE("dataset loss is the per-sample mean whatever the batch size") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 5, 0.3f);
    const auto s = oracle::random_scales(2, 5);
    const auto data = small_set(5, 7);
    TrainConfig a, b;
    a.batch_size = 3;  // batches of 3, 3, 1
    b.batch_size = 7;
    CHECK(dataset_loss(w, s, BlockMask{}, data, a) == doctest::Approx(dataset_loss(w, s, BlockMask{}, data, b)).epsilon(1e-5));
    CHECK(dataset_loss(w, s, BlockMask{}, data, a) == doctest::Approx(oracle_loss(w, s, data)).epsilon(1e-4));
}

TEST_CASE("scale training never returns scales worse than its starting point") {
    const auto cfg = oracle::tiny_config(3, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 6, 0.3f);
    BlockMask mask;
    mask.removed = {1};
    const auto start = pin_removed(ScaleSet::ones(3), mask);
    const auto data = small_set(6, 24);
    TrainConfig cfg_t;
    cfg_t.batch_size = 8;
    cfg_t.epochs = 4;
    cfg_t.learning_rate = 1e-2;
    const auto r = train_scales(w, start, mask, data, cfg_t);
    CHECK(r.epoch_losses.front() == doctest::Approx(dataset_loss(w, start, mask, data, cfg_t)).epsilon(1e-12));
    const double kept = dataset_loss(w, r.scales, mask, data, cfg_t);
    CHECK(kept <= r.epoch_losses.front());
    CHECK(kept == doctest::Approx(*std::min_element(r.epoch_losses.begin(), r.epoch_losses.end())).epsilon(1e-12));
    CHECK(r.scales.attn_gate[1] == 0.0);
    CHECK(r.epoch_losses.size() == r.batch_means.size() + 1);
    CHECK(static_cast<int>(r.batch_means.size()) <= cfg_t.epochs);

    const auto again = train_scales(w, start, mask, data, cfg_t);
    CHECK(again.scales == r.scales);
    CHECK(again.epoch_losses == r.epoch_losses);
}

TEST_CASE("early stopping ends after patience epochs without improvement") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 8, 0.3f);
    const auto data = small_set(8, 8);
    TrainConfig t;
    t.batch_size = 8;
    t.epochs = 10;
    t.min_delta = 1e9;  // no epoch counts as an improvement
    t.patience = 2;
    const auto r = train_scales(w, ScaleSet::ones(2), BlockMask{}, data, t);
    CHECK(r.batch_means.size() == 2);
    CHECK(r.early_stopped);
    CHECK(r.epoch_losses.size() == 3);
}

TEST_CASE("strict and flexible matching") {
    CHECK(answer_matches("1+2=3 ANS 3", "1+2=3 ANS 3", Metric::strict));
    CHECK_FALSE(answer_matches("1+2=4 ANS 3", "1+2=3 ANS 3", Metric::strict));
    CHECK(answer_matches("1+2=4 ANS 3", "1+2=3 ANS 3", Metric::flexible));
    CHECK_FALSE(answer_matches("1+2=3 ANS 4", "1+2=3 ANS 3", Metric::flexible));
    CHECK_FALSE(answer_matches("ANS", "1+2=3 ANS 3", Metric::flexible));
    CHECK(answer_matches("BA", "BA", Metric::flexible));  // no integer: whole string
    CHECK_FALSE(answer_matches("AB", "BA", Metric::flexible));
    CHECK(parse_metric("strict") == Metric::strict);
    CHECK_THROWS(parse_metric("fuzzy"));
}

TEST_CASE("evaluation scores the decoded responses") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 9, 0.5f);
    TaskSpec spec;
    spec.split = Split::eval;
    auto items = gen_task_items(spec, 10);
    const auto gen = generate_responses(w, ScaleSet::ones(2), items);
    // Make three references equal to what the model says.
    for (std::size_t i = 0; i < 3; ++i) items[i].response = gen[i];
    const auto r = evaluate_both(w, ScaleSet::ones(2), items);
    CHECK(r.strict.total == 10);
    CHECK(r.strict.correct >= 3);
    std::size_t strict = 0, flexible = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        strict += answer_matches(gen[i], items[i].response, Metric::strict);
        flexible += answer_matches(gen[i], items[i].response, Metric::flexible);
    }
    CHECK(r.strict.correct == strict);
    CHECK(r.flexible.correct == flexible);
    CHECK(evaluate(w, ScaleSet::ones(2), items, Metric::flexible).correct == flexible);
}

TEST_CASE("training config validation") {
    TrainConfig t;
    t.batch_size = 0;
    CHECK_THROWS(t.validate());
    t = TrainConfig::probe();
    CHECK(t.epochs == 1);
    CHECK(t.learning_rate == 1e-2);
    CHECK(TrainConfig::rescale().learning_rate == 3e-3);
}

TEST_CASE("zero gradients leave parameters alone but advance the step") {
    std::vector<double> p{0.25, -1.5};
    auto st = AdamState::zeros(2);
    adam_step<double>(p, std::vector<double>{0.0, 0.0}, st, 0.1);
    CHECK(p == std::vector<double>{0.25, -1.5});
    CHECK(st.step == 1);
}

TEST_CASE("a constant gradient moves the parameter monotonically downhill") {
    std::vector<double> p{3.0};
    auto st = AdamState::zeros(1);
    double last = p[0];
    for (int i = 0; i < 100; ++i) {
        adam_step<double>(p, std::vector<double>{0.7}, st, 1e-2);
        CHECK(p[0] < last);
        last = p[0];
    }
}

TEST_CASE("uniform logits give ln V whatever the scales, and training leaves them put") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    Weights w = oracle::random_weights(cfg, 12, 0.3f);
    w.head.fill(0.0f);
    const auto batch = pack_batches(small_set(12, 4), PackOptions{4, 64, std::nullopt, false})[0];
    for (std::uint64_t seed : {1u, 2u, 3u})
        CHECK(scale_loss(w, oracle::random_scales(2, seed), BlockMask{}, batch) ==
              doctest::Approx(std::log(48.0)).epsilon(1e-6));
    TrainConfig t;
    t.batch_size = 4;
    t.epochs = 3;
    const auto r = train_scales(w, ScaleSet::ones(2), BlockMask{}, small_set(12, 8), t);
    CHECK(r.scales == ScaleSet::ones(2));
    for (double l : r.epoch_losses) CHECK(l == doctest::Approx(r.epoch_losses.front()).epsilon(1e-12));
}

TEST_CASE("hidden-state loss against a zero reference is the mean squared norm") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights64 w = oracle::random_weights(cfg, 13, 0.3f).cast<double>();
    const auto batch = pack_batches(small_set(13, 3), PackOptions{3, 64, std::nullopt, false})[0];
    const auto h = reference_hidden(w, batch);
    Tensor64 zero(h.shape());
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < h.rows(); ++r) {
        if (!batch.mask[r]) continue;
        for (std::size_t c = 0; c < h.cols(); ++c) sum += h.at(r, c) * h.at(r, c);
        ++n;
    }
    CHECK(hidden_state_loss(w, ScaleSet::ones(2), BlockMask{}, batch, zero) == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("pinning a block with a zero output projection costs nothing") {
    const auto cfg = oracle::tiny_config(3, 16, 2, 32);
    Weights w = oracle::random_weights(cfg, 14, 0.3f);
    w.layers[1].attention->wo.fill(0.0f);
    const auto data = small_set(14, 16);
    TrainConfig t;
    t.batch_size = 8;
    t.epochs = 3;
    const double before = dataset_loss(w, ScaleSet::ones(3), BlockMask{}, data, t);
    BlockMask mask;
    mask.removed = {1};
    const auto r = train_scales(w, pin_removed(ScaleSet::ones(3), mask), mask, data, t);
    CHECK(std::abs(r.epoch_losses.front() - before) <= 1e-6);
    CHECK(dataset_loss(w, r.scales, mask, data, t) <= before + 1e-6);
}

TEST_CASE("rescaling a two-layer model with one block pinned lowers the loss") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cfg = oracle::tiny_config(2, 16, 2, 32);
        const Weights w = oracle::random_weights(cfg, 20 + seed, 0.3f);
        BlockMask mask;
        mask.removed = {static_cast<int>(seed % 2)};
        TrainConfig t;
        t.batch_size = 8;
        t.learning_rate = 1e-2;
        t.shuffle_seed = seed;
        const auto r = train_scales(w, pin_removed(ScaleSet::ones(2), mask), mask, small_set(seed, 24), t);
        CHECK(*std::min_element(r.epoch_losses.begin(), r.epoch_losses.end()) < r.epoch_losses.front());
    }
}

TEST_CASE("pretraining moves the weights and is reproducible") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    PretrainOptions o;
    o.steps = 1;
    o.eval_every = 0;
    o.eval_count = 8;
    o.batch_size = 4;
    o.seed = 3;
    const auto one = pretrain(cfg, TaskSpec{}, o);
    CHECK(content_hash(one.weights) != content_hash(init_weights(cfg, o.seed)));
    o.steps = 5;
    const auto a = pretrain(cfg, TaskSpec{}, o), b = pretrain(cfg, TaskSpec{}, o);
    CHECK(a.final_accuracy == b.final_accuracy);
    CHECK(content_hash(a.weights) == content_hash(b.weights));
}

TEST_CASE("references the model reproduces verbatim score 1.0 on both metrics") {
    const auto cfg = oracle::tiny_config(2, 16, 2, 32);
    const Weights w = oracle::random_weights(cfg, 15, 0.5f);
    TaskSpec spec;
    auto items = gen_task_items(spec, 6);
    const auto gen = generate_responses(w, ScaleSet::ones(2), items);
    for (std::size_t i = 0; i < items.size(); ++i) items[i].response = gen[i];
    const auto r = evaluate_both(w, ScaleSet::ones(2), items);
    CHECK(r.strict.accuracy() == 1.0);
    CHECK(r.flexible.accuracy() == 1.0);
    CHECK(answer_matches("X=12 ANS 7", "7", Metric::flexible));
    CHECK_FALSE(answer_matches("X=12 ANS 7", "7", Metric::strict));
}
