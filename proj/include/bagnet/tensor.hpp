#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bagnet/error.hpp"

namespace bagnet {

// Accumulator for reductions: at least double, wider when T is.
template <typename T>
using accum_t = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;

// 64-byte aligned storage. The vectorised kernels pick their summation order from the data
// address, so every buffer starts on the same boundary to keep results reproducible in-process.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

// (batch, channels, rows, cols). All dimensions are >= 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    bool operator==(const Shape&) const = default;

    std::string str() const;
};

// Throws ShapeError unless every dimension is >= 1.
void validate_shape(const Shape& shape);

// Dense rank-4 array in row-major (n, c, h, w) order.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : data_(1, T{0}) {}
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t offset(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

    void fill(T value);

    // Same shape and bitwise-equal values (NaN never compares equal).
    bool operator==(const Tensor&) const = default;

    // Copy of batch entry `index` as a (1, c, h, w) tensor.
    Tensor<T> batch_item(int index) const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

private:
    Shape shape_;
    std::vector<T, AlignedAllocator<T>> data_;
};

// Stacks (1, c, h, w) tensors of identical shape into one (n, c, h, w) batch.
template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tensor<long double>;

}  // namespace bagnet
