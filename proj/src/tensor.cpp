// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hopscotch/errors.hpp"

namespace hopscotch {

const char* to_string(FormatErrc code) {
    switch (code) {
        case FormatErrc::bad_magic: return "bad magic";
        case FormatErrc::truncated: return "truncated payload";
        case FormatErrc::length_mismatch: return "manifest/payload length mismatch";
        case FormatErrc::unknown_version: return "unknown format_version";
        case FormatErrc::schema: return "schema violation";
        case FormatErrc::io: return "i/o error";
    }
    return "format error";
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(data));
}

template <typename T>
T BasicTensor<T>::item() const {
    if (data_.size() != 1) {
        throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
    }
    return data_[0];
}

template <typename T>
void BasicTensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

namespace {

template <typename T>
void require_matrix(const BasicTensor<T>& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
    }
}

// c[m x n] = a[m x k] * b[k x n]. Each output element accumulates over k in
// ascending order; the four-row path performs exactly the same per-element
// operations as the single-row tail, so a row's result is independent of m.
template <typename T>
void gemm(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
          std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, T(0));
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        T* __restrict c0 = c + (i + 0) * n;
        T* __restrict c1 = c + (i + 1) * n;
        T* __restrict c2 = c + (i + 2) * n;
        T* __restrict c3 = c + (i + 3) * n;
        const T* a0 = a + (i + 0) * k;
        const T* a1 = a + (i + 1) * k;
        const T* a2 = a + (i + 2) * k;
        const T* a3 = a + (i + 3) * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* __restrict br = b + p * n;
            const T x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
            for (std::size_t j = 0; j < n; ++j) {
                const T bj = br[j];
                c0[j] += x0 * bj;
                c1[j] += x1 * bj;
                c2[j] += x2 * bj;
                c3[j] += x3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        T* __restrict c0 = c + i * n;
        const T* a0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T* __restrict br = b + p * n;
            const T x0 = a0[p];
            for (std::size_t j = 0; j < n; ++j) c0[j] += x0 * br[j];
        }
    }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    BasicTensor<T> c({a.rows(), b.cols()});
    gemm(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
    return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
    require_matrix(a, "transpose");
    const std::size_t r = a.rows(), c = a.cols();
    BasicTensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
    return out;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_matrix(b, "matmul_nt");
    if (a.rank() == 2 && a.cols() != b.cols()) {
        throw DimensionError("matmul_nt shapes differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()) + "^T");
    }
    return matmul(a, transpose(b));
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_matrix(a, "matmul_tn");
    if (b.rank() == 2 && a.rows() != b.rows()) {
        throw DimensionError("matmul_tn shapes differ: " + shape_string(a.shape()) + "^T x " +
                             shape_string(b.shape()));
    }
    return matmul(transpose(a), b);
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
    require_matrix(x, "softmax_rows");
    BasicTensor<T> y(x.shape());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* in = x.data() + r * n;
        T* out = y.data() + r * n;
        T mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
    }
    return y;
}

template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, double eps) {
    require_matrix(x, "rms_norm");
    if (gain.size() != x.cols()) {
        throw DimensionError("rms_norm gain " + shape_string(gain.shape()) + " vs input " +
                             shape_string(x.shape()));
    }
    if (!(eps > 0)) throw ContractError("rms_norm requires eps > 0");
    BasicTensor<T> y(x.shape());
    const std::size_t d = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* in = x.data() + r * d;
        T* out = y.data() + r * d;
        T ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += in[j] * in[j];
        const T inv = T(1) / std::sqrt(ss / T(d) + T(eps));
        for (std::size_t j = 0; j < d; ++j) out[j] = in[j] * inv * gain[j];
    }
    return y;
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
    BasicTensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
    return y;
}

template <typename T>
CrossEntropyResult cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets,
                                 std::span<const std::uint8_t> mask) {
    require_matrix(logits, "cross_entropy");
    const std::size_t rows = logits.rows(), vocab = logits.cols();
    if (targets.size() != rows || mask.size() != rows) {
        throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                             std::to_string(targets.size()) + " targets and " +
                             std::to_string(mask.size()) + " mask bits");
    }
    CrossEntropyResult res;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
            throw IndexError("cross_entropy target " + std::to_string(t) + " outside [0," +
                             std::to_string(vocab) + ")");
        }
        const T* in = logits.data() + r * vocab;
        T mx = in[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < vocab; ++j) sum += std::exp(in[j] - mx);
        total += static_cast<double>(std::log(sum) + mx - in[t]);
        ++res.scored;
    }
    res.loss = res.scored ? total / static_cast<double>(res.scored) : 0.0;
    return res;
}

#define HOPSCOTCH_INSTANTIATE(T)                                                               \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);              \
    template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);           \
    template BasicTensor<T> transpose(const BasicTensor<T>&);                                  \
    template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                               \
    template BasicTensor<T> rms_norm(const BasicTensor<T>&, const BasicTensor<T>&, double);    \
    template BasicTensor<T> silu(const BasicTensor<T>&);                                       \
    template CrossEntropyResult cross_entropy(const BasicTensor<T>&, std::span<const int>,     \
                                              std::span<const std::uint8_t>);

HOPSCOTCH_INSTANTIATE(float)
HOPSCOTCH_INSTANTIATE(double)

#undef HOPSCOTCH_INSTANTIATE

}  // namespace hopscotch
