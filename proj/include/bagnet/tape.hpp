#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "bagnet/tensor.hpp"

namespace bagnet {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Only meaningful for the tape that issued it.
struct Var {
    std::size_t id = 0;
    const void* owner = nullptr;
};

struct BackwardOptions {
    // Keep gradients of intermediate (non-leaf) values after they have been propagated.
    // Training turns this off to bound peak memory.
    bool retain_intermediate_grads = true;
};

// Ordered record of executed operations. Values are appended in execution order, so
// reverse iteration is a valid topological order for adjoint propagation.
template <typename T>
class Tape {
public:
    // Receives the gradient of the loss w.r.t. the node output and accumulates into inputs.
    using BackwardFn = std::function<void(Tape<T>&, const Tensor<T>& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor<T> value, bool requires_grad = false);
    Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor<T>& value(Var v) const { return node(v).value; }
    const Shape& shape(Var v) const { return node(v).value.shape(); }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    bool any_requires_grad(std::initializer_list<Var> vars) const;

    // Gradient of the last backward pass, or nullptr if none reached this value.
    const Tensor<T>* grad(Var v) const;

    // Adds `delta` into the gradient buffer of `v`. No-op for values that do not require grad.
    void accumulate(Var v, const Tensor<T>& delta);
    // Mutable gradient buffer of `v`, zero-initialised on first access.
    Tensor<T>& grad_buffer(Var v);

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Clears gradients of any
    // previous pass first, so repeated calls from the same state give identical results.
    void backward(Var loss, BackwardOptions options = {});

    // Number of recorded operations whose adjoint ran during the last backward pass.
    std::size_t last_backward_visits() const { return last_visits_; }
    std::size_t size() const { return nodes_.size(); }
    bool owns(Var v) const { return v.owner == this && v.id < nodes_.size(); }

private:
    struct Node {
        Tensor<T> value;
        std::optional<Tensor<T>> grad;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        bool is_leaf = true;
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::vector<Node> nodes_;
    std::size_t last_visits_ = 0;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bagnet
