#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cardioseg {

/// Extents of a tensor of rank 1..5. For rank-5 feature maps the axis
/// order is (N, C, D, H, W) with W varying fastest in memory.
class Shape {
public:
    static constexpr std::size_t kMaxRank = 5;

    Shape() = default;
    Shape(std::initializer_list<std::size_t> extents);
    explicit Shape(std::span<const std::size_t> extents);

    std::size_t rank() const { return rank_; }
    std::size_t operator[](std::size_t axis) const { return extents_.at(axis); }
    std::size_t numel() const;
    bool empty() const { return rank_ == 0; }

    std::span<const std::size_t> extents() const { return {extents_.data(), rank_}; }
    std::string str() const;

    friend bool operator==(const Shape& a, const Shape& b) {
        return a.rank_ == b.rank_ &&
               std::equal(a.extents_.begin(), a.extents_.begin() + a.rank_, b.extents_.begin());
    }

private:
    std::array<std::size_t, kMaxRank> extents_{};
    std::size_t rank_ = 0;
};

/// Unpacked (N, C, D, H, W) extents of a rank-5 shape.
struct Dims5 {
    std::size_t n, c, d, h, w;
    std::size_t spatial() const { return d * h * w; }
};

Dims5 dims5(const Shape& shape);

/// Spatial triple in tensor axis order (depth, height, width).
struct Triple {
    std::size_t d = 1, h = 1, w = 1;
    friend bool operator==(const Triple&, const Triple&) = default;
};

/// Dense row-major tensor. A default-constructed tensor is empty (rank 0)
/// and is rejected by every layer.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// Rank-5 element access (n, c, d, h, w).
    T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w);
    const T& at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const;

    void fill(T value);
    void set_zero() { fill(T{0}); }

    /// Reinterprets the extents; element count must not change.
    Tensor reshaped(Shape shape) const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Inner product of two equally shaped tensors, accumulated in double.
template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b);

/// Concatenates two rank-5 tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits a rank-5 tensor into channels [0, first) and [first, C).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first);

/// Throws std::invalid_argument unless `t` is a non-empty rank-5 tensor.
template <typename T>
void require_rank5(const Tensor<T>& t, const char* what);

}  // namespace cardioseg
