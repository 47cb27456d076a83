// SPDX-License-Identifier: Apache-2.0
//
// Diagnostics: hidden-state MMD, largest singular values, rank correlation,
// parameter/time/memory accounting, int8 weight quantization.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hopscotch/data.hpp"
#include "hopscotch/model.hpp"

namespace hopscotch {

struct MmdOptions {
    std::size_t max_rows = 2000;  // larger samples are subsampled to this many rows
    std::uint64_t seed = 0;
};

/// Biased squared MMD with an RBF kernel exp(-|x-y|^2 / (2 sigma^2)), sigma
/// the median pairwise distance of the pooled sample (1 if that median is 0).
/// Kernel sums are accumulated over sorted values, so the result is exactly
/// invariant to row order and to swapping X and Y. Clamped at 0.
double mmd2(const Tensor64& x, const Tensor64& y, const MmdOptions& options = {});

/// Median of the pairwise Euclidean distances among all rows of `z`
/// (mean of the two middle values for an even count).
double median_pairwise_distance(const Tensor64& z);

/// x_out of the requested layers at every scored position of `data`, rows in
/// batch order. Keys are the requested layers.
std::map<int, Tensor64> collect_hidden_states(const Weights& w, const ScaleSet& s, const BlockMask& mask,
                                              const std::vector<Sample>& data, const std::vector<int>& layers,
                                              std::size_t max_len = 64);

struct MmdRow {
    int layer = 0;
    double noscale = 0.0;  // removed blocks, every other scale at 1
    double hopscotch = 0.0;  // removed blocks with the trained scales
};

/// One row per requested layer, in the requested order.
std::vector<MmdRow> mmd_report(const Weights& w, const std::vector<Sample>& data, const ScaleSet& scales,
                               const BlockMask& mask, const std::vector<int>& layers, const MmdOptions& options = {});

// ---------------------------------------------------------------------------

struct PowerOptions {
    int max_iterations = 200;
    double tolerance = 1e-10;  // relative change of the eigenvalue estimate
    std::uint64_t seed = 0;
};

/// Largest singular value via power iteration on W^T W, in double precision.
double sigma_max(const Tensor64& w, const PowerOptions& options = {});

struct SingularEntry {
    int layer = 0;
    std::string matrix;  // wq, wk, wv, wo, up, down
    double sigma = 0.0;
};

struct SingularReport {
    std::vector<SingularEntry> entries;  // layer-major, removed attention matrices omitted
    double get(int layer, const std::string& matrix) const;
};

SingularReport max_singular_values(const Weights& w, const PowerOptions& options = {});

// ---------------------------------------------------------------------------

/// Ranks starting at 1, tied values sharing their average rank.
std::vector<double> average_ranks(const std::vector<double>& xs);

/// Pearson correlation of average ranks. Throws for n < 2, mismatched sizes,
/// or a constant input.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------------------

struct EfficiencyInput {
    double total_params = 0.0;
    int n_layers = 0;
    double attn_time_fraction = 0.66;
    int bytes_per_param = 2;
    int removed = 0;
};

struct EfficiencyReport {
    double time_reduction_pct = 0.0;
    double param_reduction_pct = 0.0;
    double params_removed = 0.0;
    double memory_reduction_bytes = 0.0;
    double memory_reduction_gb() const { return memory_reduction_bytes / 1e9; }
};

/// Approximate accounting: each removed block saves attn_time_fraction / L of
/// the forward time and a third of one layer's parameters.
EfficiencyReport efficiency_report(const EfficiencyInput& in);

// ---------------------------------------------------------------------------

/// Symmetric int8 codes with one scale per output channel (column of a
/// [in x out] matrix). A zero column gets scale 0 and all-zero codes.
struct QuantizedMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> codes;  // row-major
    std::vector<float> scales;  // one per column
};

QuantizedMatrix quantize_matrix(const Tensor& w);
Tensor dequantize_matrix(const QuantizedMatrix& q);

/// Projection and head matrices quantized; embeddings and norm gains stay float.
struct QuantizedWeights {
    Weights unquantized;  // carries config, embeddings and norms
    std::map<std::string, QuantizedMatrix> matrices;  // by canonical tensor name
};

QuantizedWeights quantize_int8(const Weights& w);
/// Float weights with every quantized matrix replaced by its dequantized value.
Weights dequantize(const QuantizedWeights& q);

}  // namespace hopscotch
