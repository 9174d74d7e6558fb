#include "bagnet/tape.hpp"

#include <algorithm>

namespace bagnet {

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (!owns(v)) {
        throw UsageError("value is not recorded on this tape");
    }
    return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
    if (!owns(v)) {
        throw UsageError("value is not recorded on this tape");
    }
    return nodes_[v.id];
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1, this};
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.is_leaf = false;
    for (const Var& in : inputs) {
        n.requires_grad = n.requires_grad || node(in).requires_grad;
    }
    if (n.requires_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1, this};
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var> vars) const {
    return std::any_of(vars.begin(), vars.end(), [&](Var v) { return node(v).requires_grad; });
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var v) const {
    const Node& n = node(v);
    return n.grad ? &*n.grad : nullptr;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.grad) {
        n.grad.emplace(n.value.shape(), T{0});
    }
    return *n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var v, const Tensor<T>& delta) {
    Node& n = node(v);
    if (!n.requires_grad) {
        return;
    }
    if (delta.shape() != n.value.shape()) {
        throw ShapeError("gradient shape " + delta.shape().str() + " does not match value shape " +
                         n.value.shape().str());
    }
    if (!n.grad) {
        n.grad = delta;
        return;
    }
    T* g = n.grad->ptr();
    const T* d = delta.ptr();
    const std::size_t count = delta.size();
    for (std::size_t i = 0; i < count; ++i) {
        g[i] += d[i];
    }
}

template <typename T>
void Tape<T>::backward(Var loss, BackwardOptions options) {
    if (!owns(loss)) {
        throw UsageError("backward called on a value that is not recorded on this tape");
    }
    if (nodes_[loss.id].value.shape() != Shape{1, 1, 1, 1}) {
        throw UsageError("backward requires a scalar (1,1,1,1) loss, got " +
                         nodes_[loss.id].value.shape().str());
    }
    for (auto& n : nodes_) {
        n.grad.reset();
    }
    last_visits_ = 0;
    if (!nodes_[loss.id].requires_grad) {
        return;
    }
    nodes_[loss.id].grad.emplace(Shape{1, 1, 1, 1}, T{1});

    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.is_leaf || !n.grad || !n.backward) {
            continue;
        }
        // The node's own grad stays alive while its adjoint runs; inputs always precede it.
        const Tensor<T>& g = *n.grad;
        n.backward(*this, g);
        ++last_visits_;
        if (!options.retain_intermediate_grads && i != loss.id) {
            n.grad.reset();
        }
    }
}

template class Tape<float>;
template class Tape<double>;
template class Tape<long double>;

}  // namespace bagnet
