#include "bagnet/optim.hpp"

#include <cmath>

#include "bagnet/error.hpp"

namespace bagnet {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<Tensor<T>* const> params) {
    AdamState s;
    for (const Tensor<T>* p : params) {
        s.m.emplace_back(p->shape());
        s.v.emplace_back(p->shape());
    }
    return s;
}

template <typename T>
bool AdamState<T>::operator==(const AdamState& other) const {
    return step == other.step && m == other.m && v == other.v;
}

template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const AdamHyper& hyper) {
    if (grads.size() != params.size()) {
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    if (state.m.empty() && state.v.empty() && state.step == 0) {
        state = AdamState<T>::zeros_like(params);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state does not match the parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Shape& s = params[i]->shape();
        if (grads[i].shape() != s || state.m[i].shape() != s || state.v[i].shape() != s) {
            throw ShapeError("adam_step: tensor " + std::to_string(i) + " has parameter shape " + s.str() +
                             ", gradient " + grads[i].shape().str() + ", moments " + state.m[i].shape().str() +
                             "/" + state.v[i].shape().str());
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double b1 = hyper.beta1;
    const double b2 = hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = grads[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = static_cast<double>(g[j]);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = hyper.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + hyper.eps);
            p[j] = static_cast<T>(static_cast<double>(p[j]) - update);
        }
    }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Tensor<float>* const>, std::span<const Tensor<float>>, AdamState<float>&,
                        const AdamHyper&);
template void adam_step(std::span<Tensor<double>* const>, std::span<const Tensor<double>>, AdamState<double>&,
                        const AdamHyper&);

}  // namespace bagnet
