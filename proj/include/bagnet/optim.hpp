#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bagnet/tensor.hpp"

namespace bagnet {

struct AdamHyper {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moments, one tensor per learnable in ModelParams::learnables() order.
template <typename T>
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;

    static AdamState zeros_like(std::span<Tensor<T>* const> params);
    bool operator==(const AdamState&) const;
};

// One bias-corrected Adam update. Moments are allocated on first use if the state is empty.
// Throws ShapeError when grads or moments do not mirror params.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               const AdamHyper& hyper);

}  // namespace bagnet
