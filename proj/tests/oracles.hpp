// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference implementations. Written with nested vectors and plain
// loops so they share no code with the library kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hopscotch/model.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

template <typename T>
Mat to_mat(const hopscotch::BasicTensor<T>& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = static_cast<double>(t.at(r, c));
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    const std::size_t m = a.size(), k = b.size(), n = b.empty() ? 0 : b[0].size();
    Mat out(m, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a[i][p]) * b[p][j];
            out[i][j] = static_cast<double>(acc);
        }
    return out;
}

inline std::vector<double> softmax(std::vector<double> x) {
    const double mx = *std::max_element(x.begin(), x.end());
    double sum = 0;
    for (double& v : x) sum += (v = std::exp(v - mx));
    for (double& v : x) v /= sum;
    return x;
}

inline std::vector<double> rms_norm(const std::vector<double>& x, const std::vector<double>& gain, double eps) {
    double ms = 0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / std::sqrt(ms + eps) * gain[i];
    return y;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline double nll(const std::vector<double>& logits, int target) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    for (double v : logits) sum += std::exp(v - mx);
    return -(logits[static_cast<std::size_t>(target)] - mx - std::log(sum));
}

template <typename T>
std::vector<double> vec(const hopscotch::BasicTensor<T>& t) {
    return std::vector<double>(t.values().begin(), t.values().end());
}

/// Straight-line forward of the scaled transformer on one sequence. Returns
/// logits [T x V]; `hidden` (if given) receives every layer output.
template <typename T>
Mat forward(const hopscotch::BasicWeights<T>& w, const hopscotch::ScaleSet& s, const std::vector<int>& tokens,
            std::vector<Mat>* hidden = nullptr) {
    const auto& c = w.config;
    const std::size_t n = tokens.size(), d = static_cast<std::size_t>(c.d_model);
    const std::size_t heads = static_cast<std::size_t>(c.n_heads), hd = d / heads;
    const Mat tok = to_mat(w.token_embedding), pos = to_mat(w.position_embedding);
    Mat x(n, std::vector<double>(d));
    for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < d; ++j) x[t][j] = tok[static_cast<std::size_t>(tokens[t])][j] + pos[t][j];

    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& L = w.layers[l];
        Mat x1(n, std::vector<double>(d));
        const double ag = s.attn_gate[l], ar = s.attn_residual[l];
        if (ag == 0.0) {
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t j = 0; j < d; ++j) x1[t][j] = ar * x[t][j];
        } else {
            const auto& A = *L.attention;
            Mat h(n);
            for (std::size_t t = 0; t < n; ++t) h[t] = rms_norm(x[t], vec(A.norm), c.norm_eps);
            const Mat q = matmul(h, to_mat(A.wq)), k = matmul(h, to_mat(A.wk)), v = matmul(h, to_mat(A.wv));
            Mat att(n, std::vector<double>(d, 0.0));
            for (std::size_t hh = 0; hh < heads; ++hh)
                for (std::size_t t = 0; t < n; ++t) {
                    std::vector<double> sc(t + 1);
                    for (std::size_t u = 0; u <= t; ++u) {
                        double dot = 0;
                        for (std::size_t j = 0; j < hd; ++j) dot += q[t][hh * hd + j] * k[u][hh * hd + j];
                        sc[u] = dot / std::sqrt(static_cast<double>(hd));
                    }
                    const auto p = softmax(sc);
                    for (std::size_t u = 0; u <= t; ++u)
                        for (std::size_t j = 0; j < hd; ++j) att[t][hh * hd + j] += p[u] * v[u][hh * hd + j];
                }
            const Mat o = matmul(att, to_mat(A.wo));
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t j = 0; j < d; ++j) x1[t][j] = ag * o[t][j] + ar * x[t][j];
        }
        Mat h2(n);
        for (std::size_t t = 0; t < n; ++t) h2[t] = rms_norm(x1[t], vec(L.mlp_norm), c.norm_eps);
        Mat up = matmul(h2, to_mat(L.w_up));
        for (auto& row : up)
            for (double& v : row) v = silu(v);
        const Mat m = matmul(up, to_mat(L.w_down));
        for (std::size_t t = 0; t < n; ++t)
            for (std::size_t j = 0; j < d; ++j) x[t][j] = s.mlp_gate[l] * m[t][j] + s.mlp_residual[l] * x1[t][j];
        if (hidden) hidden->push_back(x);
    }
    Mat hf(n);
    for (std::size_t t = 0; t < n; ++t) hf[t] = rms_norm(x[t], vec(w.final_norm), c.norm_eps);
    return matmul(hf, to_mat(w.head));
}

/// Largest singular value as sqrt of the top eigenvalue of W^T W, by cyclic Jacobi.
inline double sigma_max_jacobi(const Mat& w) {
    const std::size_t n = w.empty() ? 0 : w[0].size();
    Mat a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (const auto& row : w) a[i][j] += row[i] * row[j];
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double cs = 1 / std::sqrt(t * t + 1), sn = t * cs;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
    }
    double top = 0;
    for (std::size_t i = 0; i < n; ++i) top = std::max(top, a[i][i]);
    return std::sqrt(std::max(0.0, top));
}

/// Biased squared MMD by double loops, with an explicit bandwidth.
inline double mmd2(const Mat& x, const Mat& y, double sigma) {
    auto k = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double d2 = 0;
        for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
        return std::exp(-d2 / (2 * sigma * sigma));
    };
    double kxx = 0, kyy = 0, kxy = 0;
    for (const auto& a : x)
        for (const auto& b : x) kxx += k(a, b);
    for (const auto& a : y)
        for (const auto& b : y) kyy += k(a, b);
    for (const auto& a : x)
        for (const auto& b : y) kxy += k(a, b);
    const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
    return std::max(0.0, kxx / (m * m) + kyy / (n * n) - 2 * kxy / (m * n));
}

inline double median_distance(const Mat& z) {
    std::vector<double> d;
    for (std::size_t i = 0; i < z.size(); ++i)
        for (std::size_t j = i + 1; j < z.size(); ++j) {
            double s = 0;
            for (std::size_t c = 0; c < z[i].size(); ++c) s += (z[i][c] - z[j][c]) * (z[i][c] - z[j][c]);
            d.push_back(std::sqrt(s));
        }
    std::sort(d.begin(), d.end());
    if (d.empty()) return 1.0;
    const std::size_t h = d.size() / 2;
    const double med = d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
    return med > 0 ? med : 1.0;
}

/// Spearman by brute force: rank by counting, ties averaged, then Pearson.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double u : v) {
                if (u < v[i]) less += 1;
                if (u == v[i]) equal += 1;
            }
            r[i] = less + (equal + 1) / 2;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline std::vector<int> random_tokens(std::mt19937_64& rng, std::size_t n, int vocab) {
    std::uniform_int_distribution<int> pick(0, vocab - 1);
    std::vector<int> t(n);
    for (int& v : t) v = pick(rng);
    return t;
}

inline hopscotch::ModelConfig tiny_config(int layers = 2, int d = 16, int heads = 2, int ff = 32) {
    hopscotch::ModelConfig c;
    c.n_layers = layers;
    c.d_model = d;
    c.n_heads = heads;
    c.d_ff = ff;
    c.max_seq_len = 64;
    c.vocab_size = 48;
    return c;
}

/// Scale set with every entry perturbed away from 1, so no term is an identity.
inline hopscotch::ScaleSet random_scales(int layers, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.6, 1.4);
    auto s = hopscotch::ScaleSet::ones(layers);
    for (std::size_t i = 0; i < s.param_count(); ++i) s.param(i) = u(rng);
    return s;
}

/// Gaussian-perturbed copy of init weights with norm gains away from 1.
inline hopscotch::Weights random_weights(const hopscotch::ModelConfig& c, std::uint64_t seed, float std = 0.2f) {
    auto w = hopscotch::init_weights(c, seed);
    std::mt19937_64 rng(seed ^ 0x9e37);
    std::normal_distribution<float> n(0.0f, std);
    w.for_each_tensor([&](const std::string&, hopscotch::Tensor& t) {
        for (auto& v : t.values()) v += n(rng);
    });
    return w;
}

}  // namespace oracle
