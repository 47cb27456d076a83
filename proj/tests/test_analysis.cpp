// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>

#include "doctest.h"
#include "hopscotch/analysis.hpp"
#include "hopscotch/errors.hpp"
#include "oracles.hpp"

using namespace hopscotch;

namespace {

Tensor64 randn(std::mt19937_64& rng, std::size_t r, std::size_t c, double mean = 0.0) {
    std::normal_distribution<double> n(mean, 1.0);
    Tensor64 t({r, c});
    for (auto& v : t.values()) v = n(rng);
    return t;
}

oracle::Mat pooled(const Tensor64& x, const Tensor64& y) {
    auto z = oracle::to_mat(x);
    const auto b = oracle::to_mat(y);
    z.insert(z.end(), b.begin(), b.end());
    return z;
}

Tensor64 permute_rows(const Tensor64& x, std::uint64_t seed) {
    std::vector<std::size_t> order(x.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    Tensor64 out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(order[r], c);
    return out;
}

}  // namespace

TEST_CASE("MMD matches the double-loop oracle") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = randn(rng, 30 + trial, 6), y = randn(rng, 25, 6, 0.3 * trial);
        const double sigma = oracle::median_distance(pooled(x, y));
        CHECK(median_pairwise_distance(Tensor64({55 + static_cast<std::size_t>(trial), 6}, [&] {
                  auto z = pooled(x, y);
                  std::vector<double> flat;
                  for (auto& row : z) flat.insert(flat.end(), row.begin(), row.end());
                  return flat;
              }())) == doctest::Approx(sigma).epsilon(1e-14));
        const double want = oracle::mmd2(oracle::to_mat(x), oracle::to_mat(y), sigma);
        CHECK(std::abs(mmd2(x, y) - want) <= 1e-10);
    }
}

TEST_CASE("MMD is zero for identical samples and grows with a mean shift") {
    std::mt19937_64 rng(2);
    const auto x = randn(rng, 40, 4);
    CHECK(mmd2(x, x) == doctest::Approx(0.0).epsilon(1e-12));
    double last = -1;
    for (double shift : {0.0, 1.0, 2.0, 4.0}) {
        std::mt19937_64 r2(3);
        const double m = mmd2(x, randn(r2, 40, 4, shift));
        CHECK(m >= 0.0);
        CHECK(m > last);
        last = m;
    }
}

TEST_CASE("a large shift is far from two independent draws") {
    std::mt19937_64 rng(8);
    const auto x = randn(rng, 500, 8), z = randn(rng, 500, 8);
    Tensor64 y = x;
    for (auto& v : y.values()) v += 5.0;
    const double sigma = oracle::median_distance(pooled(x, y));
    const double shifted = mmd2(x, y);
    CHECK(std::abs(shifted - oracle::mmd2(oracle::to_mat(x), oracle::to_mat(y), sigma)) <= 1e-10);
    CHECK(shifted > mmd2(x, z));
}

TEST_CASE("MMD is exactly symmetric and invariant to row order") {
    std::mt19937_64 rng(4);
    const auto x = randn(rng, 33, 5), y = randn(rng, 21, 5, 0.4);
    const double base = mmd2(x, y);
    CHECK(mmd2(y, x) == base);
    CHECK(mmd2(permute_rows(x, 1), permute_rows(y, 2)) == base);
}

TEST_CASE("MMD subsampling is deterministic in its seed") {
    std::mt19937_64 rng(5);
    const auto x = randn(rng, 120, 3), y = randn(rng, 90, 3, 0.2);
    const MmdOptions opts{50, 7};
    CHECK(mmd2(x, y, opts) == mmd2(x, y, opts));
    CHECK(mmd2(x, y, MmdOptions{50, 8}) != mmd2(x, y, opts));
    CHECK_THROWS(mmd2(x, randn(rng, 10, 4)));
}

TEST_CASE("a zero median bandwidth falls back to one") {
    CHECK(median_pairwise_distance(Tensor64({4, 3}, 2.0)) == 0.0);
    // Pooled: four rows at 0 and one at 1, so six of ten distances are 0.
    const Tensor64 x({4, 1}, 0.0), y({1, 1}, 1.0);
    CHECK(mmd2(x, y) == doctest::Approx(oracle::mmd2(oracle::to_mat(x), oracle::to_mat(y), 1.0)).epsilon(1e-14));
    // Distances 1, 2, 3 with three points on a line: median 2.
    CHECK(median_pairwise_distance(Tensor64({3, 1}, std::vector<double>{0.0, 1.0, 3.0})) == 2.0);
}

TEST_CASE("largest singular value agrees with a Jacobi eigen oracle") {
    std::mt19937_64 rng(6);
    for (auto [r, c] : {std::pair{8, 8}, {12, 12}, {12, 5}, {5, 12}, {16, 32}}) {
        const auto w = randn(rng, r, c);
        const double want = oracle::sigma_max_jacobi(oracle::to_mat(w));
        CHECK(sigma_max(w) == doctest::Approx(want).epsilon(1e-6));
    }
    // Diagonal matrix: the answer is the largest absolute diagonal entry.
    Tensor64 d({4, 4});
    d.at(0, 0) = 1;
    d.at(1, 1) = -7;
    d.at(2, 2) = 3;
    d.at(3, 3) = 0.5;
    CHECK(sigma_max(d) == doctest::Approx(7.0).epsilon(1e-9));
    CHECK(sigma_max(Tensor64({6, 6})) == 0.0);
}

TEST_CASE("no unit vector is stretched beyond the largest singular value") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    const auto w = randn(rng, 10, 14);
    const double top = sigma_max(w);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(14);
        double norm = 0;
        for (auto& v : x) norm += (v = n(rng)) * v;
        norm = std::sqrt(norm);
        double out = 0;
        for (std::size_t r = 0; r < 10; ++r) {
            double acc = 0;
            for (std::size_t c = 0; c < 14; ++c) acc += w.at(r, c) * x[c] / norm;
            out += acc * acc;
        }
        CHECK(std::sqrt(out) <= top * (1 + 1e-4));
    }
}

TEST_CASE("singular report covers every present matrix and skips removed ones") {
    const auto cfg = oracle::tiny_config(3, 8, 2, 16);
    auto w = oracle::random_weights(cfg, 1);
    w.layers[1].attention->wo.fill(0.0f);
    BlockMask mask;
    mask.removed = {2};
    const auto rep = max_singular_values(physically_remove(w, mask));
    CHECK(rep.entries.size() == 3 * 2 + 2 * 4);
    CHECK(rep.get(1, "wo") == 0.0);
    CHECK(rep.get(0, "wo") > 0.0);
    CHECK_THROWS(rep.get(2, "wq"));
}

TEST_CASE("spearman matches the brute-force oracle, ties included") {
    CHECK(spearman({1, 2, 3}, {1, 3, 2}) == doctest::Approx(0.5));
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> small(0, 5);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t len = 3 + static_cast<std::size_t>(trial % 17);
        std::vector<double> x(len), y(len);
        for (std::size_t i = 0; i < len; ++i) {
            x[i] = trial % 2 ? small(rng) : n(rng);  // odd trials have ties
            y[i] = trial % 3 ? n(rng) : small(rng);
        }
        if (std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end()) x[0] += 1;
        if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) y[0] += 1;
        CHECK(spearman(x, y) == doctest::Approx(oracle::spearman(x, y)).epsilon(1e-12));
    }
    CHECK(average_ranks({3, 1, 3, 2}) == std::vector<double>{3.5, 1, 3.5, 2});
    CHECK_THROWS(spearman({1}, {1}));
    CHECK_THROWS(spearman({1, 1, 1}, {1, 2, 3}));
    CHECK_THROWS(spearman({1, 2}, {1, 2, 3}));
}

TEST_CASE("efficiency accounting for an 8B, 32-layer model") {
    struct Row {
        int removed;
        double time, params, gb;
    };
    for (const auto& r : {Row{1, 2.06, 1.04, 0.17}, Row{4, 8.25, 4.16, 0.67}, Row{7, 14.44, 7.28, 1.16}}) {
        const auto e = efficiency_report({8e9, 32, 0.66, 2, r.removed});
        CHECK(std::abs(e.time_reduction_pct - r.time) <= 0.05);
        CHECK(std::abs(e.param_reduction_pct - r.params) <= 0.05);
        CHECK(std::abs(e.memory_reduction_gb() - r.gb) <= 0.01);
    }
    const auto e = efficiency_report({8e9, 32, 0.66, 2, 4});
    CHECK(e.time_reduction_pct == doctest::Approx(100.0 * 4 * 0.66 / 32));
    CHECK(e.params_removed == doctest::Approx(4 * 8e9 / 32 / 3));
    CHECK_THROWS(efficiency_report({8e9, 32, 0.66, 2, 33}));
}

TEST_CASE("int8 quantization per output channel") {
    Tensor w({3, 3}, std::vector<float>{1.0f, 0.0f, -0.5f,  //
                                        -2.0f, 0.0f, 0.25f,  //
                                        0.5f, 0.0f, 0.1f});
    const auto q = quantize_matrix(w);
    CHECK(q.scales[0] == doctest::Approx(2.0 / 127));
    CHECK(q.scales[1] == 0.0f);
    CHECK(q.codes[1 * 3 + 0] == -127);  // column max maps to the code limit
    CHECK(q.codes[0 * 3 + 2] == -127);
    for (std::size_t r = 0; r < 3; ++r) CHECK(q.codes[r * 3 + 1] == 0);
    const auto back = dequantize_matrix(q);
    for (std::size_t i = 0; i < 9; ++i) {
        const float step = q.scales[i % 3];
        CHECK(std::abs(back[i] - w[i]) <= step / 2 + 1e-7f);
    }
    // Round half away from zero is not used: 0.5 steps go to the even neighbour.
    Tensor h({2, 1}, std::vector<float>{127.0f, 0.5f});
    CHECK(quantize_matrix(h).codes[1] == 0);
}

TEST_CASE("quantized weights keep embeddings and norms in float") {
    const auto cfg = oracle::tiny_config(2, 8, 2, 16);
    const auto w = oracle::random_weights(cfg, 2);
    const auto q = quantize_int8(w);
    CHECK(q.matrices.count("head") == 1);
    CHECK(q.matrices.count("layers.0.attn.wq") == 1);
    CHECK(q.matrices.count("tok_emb") == 0);
    const auto d = dequantize(q);
    CHECK(d.token_embedding == w.token_embedding);
    CHECK(d.layers[1].mlp_norm == w.layers[1].mlp_norm);
    CHECK_FALSE(d.head == w.head);
    double worst = 0;
    for (std::size_t i = 0; i < w.head.size(); ++i) worst = std::max(worst, double(std::abs(d.head[i] - w.head[i])));
    CHECK(worst < 0.05);
}

TEST_CASE("hidden states are collected at every scored position") {
    const auto cfg = oracle::tiny_config(3, 8, 2, 16);
    const auto w = oracle::random_weights(cfg, 3);
    TaskSpec spec;
    spec.seed = 1;
    const auto data = gen_task(spec, 5);
    std::size_t scored = 0;
    for (const auto& s : data) scored += s.target.size();
    const auto h = collect_hidden_states(w, ScaleSet::ones(3), BlockMask{}, data, {0, 2});
    REQUIRE(h.size() == 2);
    CHECK(h.at(2).rows() == scored);
    CHECK(h.at(2).cols() == 8);

    const auto rows = mmd_report(w, data, ScaleSet::ones(3), BlockMask{}, {0, 1, 2});
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) CHECK(r.noscale == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("identity and diagonal singular values, and report rows follow the requested order") {
    Tensor64 eye({16, 16});
    for (std::size_t i = 0; i < 16; ++i) eye.at(i, i) = 1.0;
    CHECK(sigma_max(eye) == doctest::Approx(1.0).epsilon(1e-9));
    Tensor64 d({3, 3});
    d.at(0, 0) = 3.0;
    d.at(1, 1) = 1.0;
    d.at(2, 2) = 0.5;
    CHECK(sigma_max(d) == doctest::Approx(3.0).epsilon(1e-9));

    const auto cfg = oracle::tiny_config(3, 8, 2, 16);
    const auto w = oracle::random_weights(cfg, 4);
    TaskSpec spec;
    spec.seed = 2;
    BlockMask mask;
    mask.removed = {1};
    const auto rows = mmd_report(w, gen_task(spec, 4), pin_removed(ScaleSet::ones(3), mask), mask, {2, 0, 1});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].layer == 2);
    CHECK(rows[1].layer == 0);
    CHECK(rows[2].layer == 1);
}
