// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the numeric kernels the transformer is built
// from. Every reduction runs sequentially in index order, so results are
// bit-reproducible and a row's output never depends on what other rows share
// the same call.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace hopscotch {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> data);

    static BasicTensor scalar(T value) { return BasicTensor({1}, std::vector<T>{value}); }
    static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    T item() const;
    void fill(T value);
    bool all_finite() const noexcept;

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// ---------------------------------------------------------------------------
// Kernels. All operate on rank-2 tensors unless noted.

/// [m x k] * [k x n] -> [m x n]. Throws DimensionError naming both shapes.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a * b^T, with a [m x k] and b [n x k].
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a^T * b, with a [k x m] and b [k x n].
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// Row-wise softmax with per-row max subtraction.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

/// y_i = x_i / sqrt(mean(x_i^2) + eps) * gain
template <typename T>
BasicTensor<T> rms_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, double eps);

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x);

struct CrossEntropyResult {
    double loss = 0.0;
    std::size_t scored = 0;
    bool empty() const noexcept { return scored == 0; }
};

/// Mean over masked-in rows of -log softmax(logits_t)[target_t]. An all-zero
/// mask returns loss 0 with `scored == 0`. Masked-out targets are not read.
template <typename T>
CrossEntropyResult cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets,
                                 std::span<const std::uint8_t> mask);

}  // namespace hopscotch
