#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bagnet/ops.hpp"
#include "bagnet/tape.hpp"
#include "bagnet/tensor.hpp"

namespace bagnet {

// Architecture constants. The depth/count fields are fixed by the network design and are
// checked by validate(); widths and input size are free.
struct BagnetConfig {
    int full_scale_depth = 8;
    int multi_scale_depth = 9;
    int full_scale_channels = 32;
    int multi_scale_channels = 64;
    int n_bgb = 8;
    int n_down = 4;
    int n_up = 4;
    int input_channels = 1;
    int input_height = 64;
    int input_width = 64;

    bool operator==(const BagnetConfig&) const = default;

    void validate() const;

    // Resolution exponent of each multi-scale stage: (0,1,2,3,4,3,2,1,0).
    std::vector<int> scale_schedule() const;

    // Channels 4/8 at 16x16, for gradient checks.
    static BagnetConfig tiny();
};

// Throws ConfigError unless h and w are positive multiples of 2^n_down.
void require_divisible_input(const BagnetConfig& config, int height, int width);

struct LayerSpec {
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    bool batch_norm = true;
};

// Every convolution of the network in declaration order.
std::vector<LayerSpec> layer_table(const BagnetConfig& config);

// Learnable scalars: conv weights + biases + BN gamma/beta.
std::size_t param_count(const BagnetConfig& config);

// One bidirectional guidance block.
template <typename T>
struct BgbParams {
    ConvParams<T> fuse_m;  // 3x3, (ms + fs) -> ms, with BN
    ConvParams<T> fuse_g;  // 3x3, (fs + ms) -> fs, with BN
    ConvParams<T> proj_g;  // 1x1, fs -> 1, no BN
    ConvParams<T> proj_m;  // 1x1, ms -> 1, no BN

    static BgbParams make(int full_channels, int multi_channels);
};

template <typename T>
struct ModelParams {
    BagnetConfig config;
    ConvParams<T> stem_g;
    ConvParams<T> stem_m;
    std::vector<ConvParams<T>> full_layers;
    std::vector<ConvParams<T>> ms_layers;
    std::vector<BgbParams<T>> bgbs;
    ConvParams<T> head;

    // Layers in declaration order: stems, full-scale, multi-scale, BGBs, head.
    std::vector<ConvParams<T>*> layers();
    std::vector<const ConvParams<T>*> layers() const;
    std::vector<std::string> layer_names() const;

    // weight, bias, [gamma, beta] per layer, declaration order.
    std::vector<Tensor<T>*> learnables();
    // learnables interleaved with BN running statistics, declaration order.
    std::vector<Tensor<T>*> state_tensors();
    std::vector<const Tensor<T>*> state_tensors() const;

    template <typename U>
    ModelParams<U> cast() const;
};

// Zero-initialised parameters with the shapes implied by `config`.
template <typename T>
ModelParams<T> make_params(const BagnetConfig& config);

// Fan-in scaled uniform weights, zero biases, BN gamma 1 / beta 0; deterministic per seed.
template <typename T>
ModelParams<T> init_params(const BagnetConfig& config, std::uint64_t seed);

// A ConvParams whose learnable tensors have been placed on a tape.
template <typename T>
struct BoundConv {
    ConvParams<T>* params = nullptr;
    Var weight;
    Var bias;
    Var gamma;
    Var beta;
};

template <typename T>
struct BoundBgb {
    BoundConv<T> fuse_m;
    BoundConv<T> fuse_g;
    BoundConv<T> proj_g;
    BoundConv<T> proj_m;
};

template <typename T>
struct BoundModel {
    BoundConv<T> stem_g;
    BoundConv<T> stem_m;
    std::vector<BoundConv<T>> full_layers;
    std::vector<BoundConv<T>> ms_layers;
    std::vector<BoundBgb<T>> bgbs;
    BoundConv<T> head;
    // Same order as ModelParams::learnables().
    std::vector<Var> learnable_vars;
};

template <typename T>
BoundConv<T> bind_conv(Tape<T>& tape, ConvParams<T>& params, bool requires_grad);
template <typename T>
BoundBgb<T> bind_bgb(Tape<T>& tape, BgbParams<T>& params, bool requires_grad);
template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, ModelParams<T>& params, bool requires_grad);

struct ForwardOptions {
    Mode mode = Mode::infer;
    bool update_running_stats = true;
    // Test hook: replace both attention maps with ones before calibration.
    bool force_unit_attention = false;
};

// Intermediates of one BGB, kept on the tape for inspection.
struct BgbTrace {
    int index = 0;
    int scale_gap = 0;
    Var global_down;    // F_g resampled to the multi-scale resolution
    Var fused_multi;    // conv of concat(F_m, global_down)
    Var alpha_global;   // sigmoid(proj_g(global_down)), one channel
    Var multi_out;      // fused_multi calibrated by alpha_global
    Var multi_up;       // F_m resampled to full resolution
    Var fused_global;   // conv of concat(F_g, multi_up)
    Var alpha_multi;    // sigmoid(proj_m(multi_up)), one channel
    Var global_out;     // fused_global calibrated by alpha_multi
};

// Convolution, then BN and ReLU when the layer has BN.
template <typename T>
Var conv_bn_relu(Tape<T>& tape, Var input, const BoundConv<T>& layer, const ForwardOptions& options);

// Couples a full-resolution map (n, fs, H, W) with a multi-scale map (n, ms, H/2^d, W/2^d).
template <typename T>
BgbTrace bgb_forward(Tape<T>& tape, Var global, Var multi, const BoundBgb<T>& block, int scale_gap,
                     const ForwardOptions& options, int index = 0);

struct ForwardResult {
    Var probabilities;  // (n, 1, H, W), values in (0, 1)
    std::vector<BgbTrace> bgbs;
};

template <typename T>
ForwardResult bagnet_forward(Tape<T>& tape, Var image, const BoundModel<T>& model, const BagnetConfig& config,
                             const ForwardOptions& options);

// Infer-mode forward without gradient tracking.
template <typename T>
Tensor<T> predict(ModelParams<T>& params, const Tensor<T>& image);

}  // namespace bagnet
