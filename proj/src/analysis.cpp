// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hopscotch/errors.hpp"

namespace hopscotch {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

Tensor64 subsample(const Tensor64& x, const MmdOptions& options) {
    if (x.rows() <= options.max_rows) return x;
    std::vector<std::size_t> idx(x.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(options.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(options.max_rows);
    std::sort(idx.begin(), idx.end());
    Tensor64 out({options.max_rows, x.cols()});
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(x.row(idx[r]).data(), x.cols(), out.row(r).data());
    return out;
}

// Mean of k(a_i, b_j) over all pairs, summed in ascending order.
double mean_kernel(const Tensor64& a, const Tensor64& b, double inv_two_sigma2) {
    std::vector<double> values;
    values.reserve(a.rows() * b.rows());
    const std::size_t d = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j)
            values.push_back(std::exp(-sq_dist(a.row(i).data(), b.row(j).data(), d) * inv_two_sigma2));
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

}  // namespace

double median_pairwise_distance(const Tensor64& z) {
    if (z.rank() != 2 || z.rows() < 2) return 0.0;
    const std::size_t n = z.rows();
    std::vector<double> dist;
    dist.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist.push_back(std::sqrt(sq_dist(z.row(i).data(), z.row(j).data(), z.cols())));
    const std::size_t mid = dist.size() / 2;
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
    const double upper = dist[mid];
    if (dist.size() % 2 == 1) return upper;
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double mmd2(const Tensor64& x_in, const Tensor64& y_in, const MmdOptions& options) {
    if (x_in.rank() != 2 || y_in.rank() != 2) throw DimensionError("mmd2 expects matrices");
    if (x_in.cols() != y_in.cols()) {
        throw DimensionError("mmd2 dimension mismatch: " + shape_string(x_in.shape()) + " vs " + shape_string(y_in.shape()));
    }
    if (x_in.rows() == 0 || y_in.rows() == 0) throw ContractError("mmd2 needs nonempty samples");
    if (options.max_rows == 0) throw ContractError("mmd2 max_rows must be positive");
    const Tensor64 x = subsample(x_in, options);
    const Tensor64 y = subsample(y_in, options);

    Tensor64 pooled({x.rows() + y.rows(), x.cols()});
    std::copy(x.values().begin(), x.values().end(), pooled.data());
    std::copy(y.values().begin(), y.values().end(), pooled.data() + x.size());
    double sigma = median_pairwise_distance(pooled);
    if (!(sigma > 0.0)) sigma = 1.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);

    const double kxx = mean_kernel(x, x, inv);
    const double kyy = mean_kernel(y, y, inv);
    const double kxy = mean_kernel(x, y, inv);
    return std::max(0.0, kxx + kyy - 2.0 * kxy);
}

std::map<int, Tensor64> collect_hidden_states(const Weights& w, const ScaleSet& s, const BlockMask& mask,
                                              const std::vector<Sample>& data, const std::vector<int>& layers,
                                              std::size_t max_len) {
    for (int l : layers)
        if (l < 0 || l >= w.config.n_layers) throw IndexError("layer " + std::to_string(l) + " out of range");
    if (data.empty()) throw ContractError("collect_hidden_states needs data");
    const auto d = static_cast<std::size_t>(w.config.d_model);
    std::map<int, std::vector<double>> rows;
    PackOptions pack;
    pack.max_len = max_len;
    for (const auto& batch : pack_batches(data, pack)) {
        Graph<float> g;
        const BoundWeights bw = bind_weights(g, w, false);
        const BoundScales bs = bind_scales(g, s, mask, false);
        const ForwardVars fv = forward(g, w.config, bw, bs, batch.grid());
        for (int l : layers) {
            const Tensor& h = g.value(fv.layer_outputs[static_cast<std::size_t>(l)]);
            auto& dst = rows[l];
            for (std::size_t r = 0; r < batch.mask.size(); ++r) {
                if (!batch.mask[r]) continue;
                const auto row = h.row(r);
                dst.insert(dst.end(), row.begin(), row.end());
            }
        }
    }
    std::map<int, Tensor64> out;
    for (auto& [l, v] : rows) {
        const std::size_t n = v.size() / d;
        out.emplace(l, Tensor64({n, d}, std::move(v)));
    }
    return out;
}

std::vector<MmdRow> mmd_report(const Weights& w, const std::vector<Sample>& data, const ScaleSet& scales,
                               const BlockMask& mask, const std::vector<int>& layers, const MmdOptions& options) {
    const int L = w.config.n_layers;
    const auto original = collect_hidden_states(w, ScaleSet::ones(L), BlockMask{}, data, layers);
    const auto noscale = collect_hidden_states(w, pin_removed(ScaleSet::ones(L), mask), mask, data, layers);
    const auto trained = collect_hidden_states(w, pin_removed(scales, mask), mask, data, layers);
    std::vector<MmdRow> out;
    for (int l : layers) {
        MmdRow row;
        row.layer = l;
        row.noscale = mmd2(original.at(l), noscale.at(l), options);
        row.hopscotch = mmd2(original.at(l), trained.at(l), options);
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------

double sigma_max(const Tensor64& w, const PowerOptions& options) {
    if (w.rank() != 2) throw DimensionError("sigma_max expects a matrix");
    const std::size_t m = w.rows();
    const std::size_t n = w.cols();
    if (m == 0 || n == 0) return 0.0;
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(n), wv(m), u(n);
    for (double& x : v) x = normal(rng);
    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        if (s > 0.0)
            for (double& e : x) e /= s;
        return s;
    };
    normalize(v);
    double lambda = 0.0;
    for (int it = 0; it < options.max_iterations; ++it) {
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += w[i * n + j] * v[j];
            wv[i] = acc;
        }
        double rayleigh = 0.0;  // |W v|^2 with v unit
        for (double e : wv) rayleigh += e * e;
        std::fill(u.begin(), u.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) u[j] += w[i * n + j] * wv[i];
        const double prev = lambda;
        lambda = rayleigh;
        if (normalize(u) == 0.0) return 0.0;
        v.swap(u);
        if (it > 0 && std::abs(lambda - prev) <= options.tolerance * std::max(lambda, 1e-300)) break;
    }
    return std::sqrt(lambda);
}

double SingularReport::get(int layer, const std::string& matrix) const {
    for (const auto& e : entries)
        if (e.layer == layer && e.matrix == matrix) return e.sigma;
    throw IndexError("no singular value for layer " + std::to_string(layer) + " " + matrix);
}

SingularReport max_singular_values(const Weights& w, const PowerOptions& options) {
    SingularReport r;
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& layer = w.layers[l];
        auto add = [&](const char* name, const Tensor& t) {
            r.entries.push_back({static_cast<int>(l), name, sigma_max(t.cast<double>(), options)});
        };
        if (layer.attention) {
            add("wq", layer.attention->wq);
            add("wk", layer.attention->wk);
            add("wv", layer.attention->wv);
            add("wo", layer.attention->wo);
        }
        add("up", layer.w_up);
        add("down", layer.w_down);
    }
    return r;
}

// ---------------------------------------------------------------------------

std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw DimensionError("spearman inputs differ in length");
    if (xs.size() < 2) throw ContractError("spearman needs at least two points");
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw NumericError("spearman inputs must be finite");
    const auto rx = average_ranks(xs);
    const auto ry = average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    const double mean = (n + 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mean) * (ry[i] - mean);
        sxx += (rx[i] - mean) * (rx[i] - mean);
        syy += (ry[i] - mean) * (ry[i] - mean);
    }
    if (sxx == 0.0 || syy == 0.0) throw ContractError("spearman is undefined for constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------

EfficiencyReport efficiency_report(const EfficiencyInput& in) {
    if (in.n_layers <= 0) throw ContractError("n_layers must be positive");
    if (!(in.total_params >= 0.0)) throw ContractError("total_params must be nonnegative");
    if (!(in.attn_time_fraction > 0.0 && in.attn_time_fraction <= 1.0)) {
        throw ContractError("attn_time_fraction must lie in (0, 1]");
    }
    if (in.bytes_per_param <= 0) throw ContractError("bytes_per_param must be positive");
    if (in.removed < 0 || in.removed > in.n_layers) {
        throw ContractError("removed must lie in [0, n_layers], got " + std::to_string(in.removed));
    }
    EfficiencyReport r;
    const double removed = in.removed;
    r.time_reduction_pct = 100.0 * removed * in.attn_time_fraction / in.n_layers;
    const double per_block = in.total_params / in.n_layers / 3.0;
    r.params_removed = removed * per_block;
    r.param_reduction_pct = in.total_params > 0.0 ? 100.0 * r.params_removed / in.total_params : 0.0;
    r.memory_reduction_bytes = r.params_removed * in.bytes_per_param;
    return r;
}

// ---------------------------------------------------------------------------

QuantizedMatrix quantize_matrix(const Tensor& w) {
    if (w.rank() != 2) throw DimensionError("quantize_matrix expects a matrix");
    QuantizedMatrix q;
    q.rows = w.rows();
    q.cols = w.cols();
    q.codes.assign(w.size(), 0);
    q.scales.assign(q.cols, 0.0f);
    for (std::size_t c = 0; c < q.cols; ++c) {
        float mx = 0.0f;
        for (std::size_t r = 0; r < q.rows; ++r) mx = std::max(mx, std::abs(w[r * q.cols + c]));
        if (mx == 0.0f) continue;
        const float scale = mx / 127.0f;
        q.scales[c] = scale;
        for (std::size_t r = 0; r < q.rows; ++r) {
            const float code = std::nearbyint(w[r * q.cols + c] / scale);
            q.codes[r * q.cols + c] = static_cast<std::int8_t>(std::clamp(code, -127.0f, 127.0f));
        }
    }
    return q;
}

Tensor dequantize_matrix(const QuantizedMatrix& q) {
    Tensor out({q.rows, q.cols});
    for (std::size_t r = 0; r < q.rows; ++r)
        for (std::size_t c = 0; c < q.cols; ++c) out[r * q.cols + c] = static_cast<float>(q.codes[r * q.cols + c]) * q.scales[c];
    return out;
}

namespace {

bool is_quantized_name(const std::string& name) {
    static const char* kSuffixes[] = {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo", ".mlp.up", ".mlp.down"};
    if (name == "head") return true;
    for (const char* s : kSuffixes) {
        const std::string suffix(s);
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) return true;
    }
    return false;
}

}  // namespace

QuantizedWeights quantize_int8(const Weights& w) {
    QuantizedWeights q;
    q.unquantized = w;
    w.for_each_tensor([&](const std::string& name, const Tensor& t) {
        if (is_quantized_name(name)) q.matrices.emplace(name, quantize_matrix(t));
    });
    return q;
}

Weights dequantize(const QuantizedWeights& q) {
    Weights out = q.unquantized;
    out.for_each_tensor([&](const std::string& name, Tensor& t) {
        const auto it = q.matrices.find(name);
        if (it != q.matrices.end()) t = dequantize_matrix(it->second);
    });
    return out;
}

}  // namespace hopscotch
