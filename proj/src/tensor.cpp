#include "bagnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace bagnet {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

void validate_shape(const Shape& shape) {
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
        throw ShapeError("tensor dimensions must be >= 1, got " + shape.str());
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
    validate_shape(shape_);
    data_.assign(shape_.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(data.begin(), data.end()) {
    validate_shape(shape_);
    if (data_.size() != shape_.numel()) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_.str());
    }
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::batch_item(int index) const {
    if (index < 0 || index >= shape_.n) {
        throw ShapeError("batch index " + std::to_string(index) + " out of range for " + shape_.str());
    }
    Shape s = shape_;
    s.n = 1;
    const std::size_t count = s.numel();
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(count * index);
    return Tensor<T>(s, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(count)));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
    if (items.empty()) {
        throw ShapeError("cannot stack an empty batch");
    }
    Shape s = items.front().shape();
    if (s.n != 1) {
        throw ShapeError("stack_batch expects (1,c,h,w) items, got " + s.str());
    }
    std::vector<T> data;
    data.reserve(s.numel() * items.size());
    for (const auto& item : items) {
        if (item.shape() != s) {
            throw ShapeError("stack_batch shape mismatch: " + s.str() + " vs " + item.shape().str());
        }
        data.insert(data.end(), item.data().begin(), item.data().end());
    }
    s.n = static_cast<int>(items.size());
    return Tensor<T>(s, std::move(data));
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);
template Tensor<long double> stack_batch(std::span<const Tensor<long double>>);

}  // namespace bagnet
