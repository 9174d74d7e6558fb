#pragma once

#include "bagnet/tape.hpp"
#include "bagnet/tensor.hpp"

namespace bagnet {

enum class Mode { train, infer };

// Weights of one convolution layer and its optional batch normalisation.
// Kernel size is 1 (pad 0) or 3 (pad 1); stride is always 1 so h and w are preserved.
template <typename T>
struct ConvParams {
    Tensor<T> weight;  // (c_out, c_in, k, k)
    Tensor<T> bias;    // (c_out, 1, 1, 1)
    bool has_bn = false;
    Tensor<T> bn_gamma;         // (c_out, 1, 1, 1)
    Tensor<T> bn_beta;          // (c_out, 1, 1, 1)
    Tensor<T> bn_running_mean;  // (c_out, 1, 1, 1)
    Tensor<T> bn_running_var;   // (c_out, 1, 1, 1)
    T bn_eps = T(1e-5);
    T bn_momentum = T(0.1);

    // Zero weights and bias; BN gamma 1, beta 0, running mean 0, running var 1.
    static ConvParams make(int in_channels, int out_channels, int kernel, bool with_bn);

    int in_channels() const { return weight.shape().c; }
    int out_channels() const { return weight.shape().n; }
    int kernel() const { return weight.shape().h; }
};

// Cross-correlation plus bias. Output is (n, c_out, h, w).
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias);

// Per-channel normalisation over (n, h, w). Train mode uses batch statistics and updates
// the running statistics in `params` (unless `update_running_stats` is false); infer mode
// uses the running statistics.
template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, ConvParams<T>& params, Mode mode,
               bool update_running_stats = true);

// Elementwise max(0, x).
template <typename T>
Var relu(Tape<T>& tape, Var input);

// Elementwise logistic function. Saturates inside the open interval (0, 1).
template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

// log2(factor) rounds of 2x2 stride-2 max pooling. factor must be a power of two.
template <typename T>
Var downsample2(Tape<T>& tape, Var input, int factor);

// Nearest-neighbour replication into factor x factor blocks.
template <typename T>
Var upsample2(Tape<T>& tape, Var input, int factor);

// Channels of `a` followed by channels of `b`.
template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

// features[n,c,h,w] * alpha[n,0,h,w].
template <typename T>
Var broadcast_mul(Tape<T>& tape, Var features, Var alpha);

// Mean binary cross-entropy. Predictions are clamped to [clamp_eps, 1 - clamp_eps] before the
// log; the backward pass evaluates (p - y) / (p (1 - p)) at the clamped p.
template <typename T>
Var bce_loss(Tape<T>& tape, Var prediction, const Tensor<T>& target, T clamp_eps = T(1e-7));

// Sum of squared entries, as a (1,1,1,1) scalar.
template <typename T>
Var sum_squares(Tape<T>& tape, Var input);

// Sum of entries, as a (1,1,1,1) scalar.
template <typename T>
Var sum_all(Tape<T>& tape, Var input);

// Forward values only, for callers that do not need a tape.
template <typename T>
T sigmoid_value(T x);

bool is_power_of_two(int v);

}  // namespace bagnet
