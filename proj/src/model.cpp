#include "bagnet/model.hpp"

#include <cmath>
#include <random>

namespace bagnet {

void BagnetConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid BagnetConfig: " + msg); };
    if (n_down != 4 || n_up != 4) {
        fail("n_down and n_up must both be 4");
    }
    if (multi_scale_depth != n_down + 1 + n_up) {
        fail("multi_scale_depth must equal n_down + 1 + n_up");
    }
    if (n_bgb != full_scale_depth || n_bgb != multi_scale_depth - 1) {
        fail("n_bgb must equal full_scale_depth and multi_scale_depth - 1");
    }
    if (full_scale_channels < 1 || multi_scale_channels < 1 || input_channels < 1) {
        fail("channel counts must be positive");
    }
    require_divisible_input(*this, input_height, input_width);
}

std::vector<int> BagnetConfig::scale_schedule() const {
    std::vector<int> d;
    for (int i = 0; i <= n_down; ++i) {
        d.push_back(i);
    }
    for (int i = n_down - 1; i >= n_down - n_up && i >= 0; --i) {
        d.push_back(i);
    }
    return d;
}

BagnetConfig BagnetConfig::tiny() {
    BagnetConfig c;
    c.full_scale_channels = 4;
    c.multi_scale_channels = 8;
    c.input_height = 16;
    c.input_width = 16;
    return c;
}

void require_divisible_input(const BagnetConfig& config, int height, int width) {
    const int unit = 1 << config.n_down;
    if (height < unit || width < unit || height % unit != 0 || width % unit != 0) {
        throw ConfigError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                          " must be a positive multiple of " + std::to_string(unit));
    }
}

std::vector<LayerSpec> layer_table(const BagnetConfig& config) {
    const int fs = config.full_scale_channels;
    const int ms = config.multi_scale_channels;
    std::vector<LayerSpec> t;
    t.push_back({"stem_g", config.input_channels, fs, 3, true});
    t.push_back({"stem_m", config.input_channels, ms, 3, true});
    for (int i = 0; i < config.full_scale_depth; ++i) {
        t.push_back({"full." + std::to_string(i), fs, fs, 3, true});
    }
    for (int i = 0; i < config.multi_scale_depth; ++i) {
        t.push_back({"multi." + std::to_string(i), ms, ms, 3, true});
    }
    for (int i = 0; i < config.n_bgb; ++i) {
        const std::string p = "bgb." + std::to_string(i) + ".";
        t.push_back({p + "fuse_m", ms + fs, ms, 3, true});
        t.push_back({p + "fuse_g", fs + ms, fs, 3, true});
        t.push_back({p + "proj_g", fs, 1, 1, false});
        t.push_back({p + "proj_m", ms, 1, 1, false});
    }
    t.push_back({"head", fs + ms, 1, 1, false});
    return t;
}

std::size_t param_count(const BagnetConfig& config) {
    std::size_t total = 0;
    for (const LayerSpec& l : layer_table(config)) {
        total += static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel;
        total += static_cast<std::size_t>(l.out_channels) * (l.batch_norm ? 3 : 1);
    }
    return total;
}

template <typename T>
BgbParams<T> BgbParams<T>::make(int full_channels, int multi_channels) {
    BgbParams p;
    p.fuse_m = ConvParams<T>::make(multi_channels + full_channels, multi_channels, 3, true);
    p.fuse_g = ConvParams<T>::make(full_channels + multi_channels, full_channels, 3, true);
    p.proj_g = ConvParams<T>::make(full_channels, 1, 1, false);
    p.proj_m = ConvParams<T>::make(multi_channels, 1, 1, false);
    return p;
}

template <typename T>
std::vector<ConvParams<T>*> ModelParams<T>::layers() {
    std::vector<ConvParams<T>*> out{&stem_g, &stem_m};
    for (auto& l : full_layers) {
        out.push_back(&l);
    }
    for (auto& l : ms_layers) {
        out.push_back(&l);
    }
    for (auto& b : bgbs) {
        out.insert(out.end(), {&b.fuse_m, &b.fuse_g, &b.proj_g, &b.proj_m});
    }
    out.push_back(&head);
    return out;
}

template <typename T>
std::vector<const ConvParams<T>*> ModelParams<T>::layers() const {
    auto mutable_layers = const_cast<ModelParams<T>*>(this)->layers();
    return {mutable_layers.begin(), mutable_layers.end()};
}

template <typename T>
std::vector<std::string> ModelParams<T>::layer_names() const {
    std::vector<std::string> names;
    for (const auto& l : layer_table(config)) {
        names.push_back(l.name);
    }
    return names;
}

template <typename T>
std::vector<Tensor<T>*> ModelParams<T>::learnables() {
    std::vector<Tensor<T>*> out;
    for (ConvParams<T>* l : layers()) {
        out.push_back(&l->weight);
        out.push_back(&l->bias);
        if (l->has_bn) {
            out.push_back(&l->bn_gamma);
            out.push_back(&l->bn_beta);
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>*> ModelParams<T>::state_tensors() {
    std::vector<Tensor<T>*> out;
    for (ConvParams<T>* l : layers()) {
        out.push_back(&l->weight);
        out.push_back(&l->bias);
        if (l->has_bn) {
            out.push_back(&l->bn_gamma);
            out.push_back(&l->bn_beta);
            out.push_back(&l->bn_running_mean);
            out.push_back(&l->bn_running_var);
        }
    }
    return out;
}

template <typename T>
std::vector<const Tensor<T>*> ModelParams<T>::state_tensors() const {
    auto m = const_cast<ModelParams<T>*>(this)->state_tensors();
    return {m.begin(), m.end()};
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
    ModelParams<U> out = make_params<U>(config);
    auto src = state_tensors();
    auto dst = out.state_tensors();
    for (std::size_t i = 0; i < src.size(); ++i) {
        *dst[i] = src[i]->template cast<U>();
    }
    auto src_layers = layers();
    auto dst_layers = out.layers();
    for (std::size_t i = 0; i < src_layers.size(); ++i) {
        dst_layers[i]->bn_eps = static_cast<U>(src_layers[i]->bn_eps);
        dst_layers[i]->bn_momentum = static_cast<U>(src_layers[i]->bn_momentum);
    }
    return out;
}

template <typename T>
ModelParams<T> make_params(const BagnetConfig& config) {
    config.validate();
    const int fs = config.full_scale_channels;
    const int ms = config.multi_scale_channels;
    ModelParams<T> p;
    p.config = config;
    p.stem_g = ConvParams<T>::make(config.input_channels, fs, 3, true);
    p.stem_m = ConvParams<T>::make(config.input_channels, ms, 3, true);
    for (int i = 0; i < config.full_scale_depth; ++i) {
        p.full_layers.push_back(ConvParams<T>::make(fs, fs, 3, true));
    }
    for (int i = 0; i < config.multi_scale_depth; ++i) {
        p.ms_layers.push_back(ConvParams<T>::make(ms, ms, 3, true));
    }
    for (int i = 0; i < config.n_bgb; ++i) {
        p.bgbs.push_back(BgbParams<T>::make(fs, ms));
    }
    p.head = ConvParams<T>::make(fs + ms, 1, 1, false);
    return p;
}

template <typename T>
ModelParams<T> init_params(const BagnetConfig& config, std::uint64_t seed) {
    ModelParams<T> p = make_params<T>(config);
    std::mt19937_64 rng(seed);
    for (ConvParams<T>* l : p.layers()) {
        const Shape s = l->weight.shape();
        const double fan_in = static_cast<double>(s.c) * s.h * s.w;
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (T& v : l->weight.data()) {
            v = static_cast<T>(dist(rng));
        }
    }
    return p;
}

template <typename T>
BoundConv<T> bind_conv(Tape<T>& tape, ConvParams<T>& params, bool requires_grad) {
    BoundConv<T> b;
    b.params = &params;
    b.weight = tape.leaf(params.weight, requires_grad);
    b.bias = tape.leaf(params.bias, requires_grad);
    if (params.has_bn) {
        b.gamma = tape.leaf(params.bn_gamma, requires_grad);
        b.beta = tape.leaf(params.bn_beta, requires_grad);
    }
    return b;
}

template <typename T>
BoundBgb<T> bind_bgb(Tape<T>& tape, BgbParams<T>& params, bool requires_grad) {
    BoundBgb<T> b;
    b.fuse_m = bind_conv(tape, params.fuse_m, requires_grad);
    b.fuse_g = bind_conv(tape, params.fuse_g, requires_grad);
    b.proj_g = bind_conv(tape, params.proj_g, requires_grad);
    b.proj_m = bind_conv(tape, params.proj_m, requires_grad);
    return b;
}

template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, ModelParams<T>& params, bool requires_grad) {
    BoundModel<T> m;
    m.stem_g = bind_conv(tape, params.stem_g, requires_grad);
    m.stem_m = bind_conv(tape, params.stem_m, requires_grad);
    for (auto& l : params.full_layers) {
        m.full_layers.push_back(bind_conv(tape, l, requires_grad));
    }
    for (auto& l : params.ms_layers) {
        m.ms_layers.push_back(bind_conv(tape, l, requires_grad));
    }
    for (auto& b : params.bgbs) {
        m.bgbs.push_back(bind_bgb(tape, b, requires_grad));
    }
    m.head = bind_conv(tape, params.head, requires_grad);

    auto collect = [&](const BoundConv<T>& b) {
        m.learnable_vars.push_back(b.weight);
        m.learnable_vars.push_back(b.bias);
        if (b.params->has_bn) {
            m.learnable_vars.push_back(b.gamma);
            m.learnable_vars.push_back(b.beta);
        }
    };
    collect(m.stem_g);
    collect(m.stem_m);
    for (const auto& b : m.full_layers) {
        collect(b);
    }
    for (const auto& b : m.ms_layers) {
        collect(b);
    }
    for (const auto& b : m.bgbs) {
        collect(b.fuse_m);
        collect(b.fuse_g);
        collect(b.proj_g);
        collect(b.proj_m);
    }
    collect(m.head);
    return m;
}

template <typename T>
Var conv_bn_relu(Tape<T>& tape, Var input, const BoundConv<T>& layer, const ForwardOptions& options) {
    Var y = conv2d(tape, input, layer.weight, layer.bias);
    if (!layer.params->has_bn) {
        return y;
    }
    y = batch_norm(tape, y, layer.gamma, layer.beta, *layer.params, options.mode, options.update_running_stats);
    return relu(tape, y);
}

template <typename T>
BgbTrace bgb_forward(Tape<T>& tape, Var global, Var multi, const BoundBgb<T>& block, int scale_gap,
                     const ForwardOptions& options, int index) {
    if (scale_gap < 0 || scale_gap > 30) {
        throw ConfigError("BGB " + std::to_string(index) + ": invalid scale gap " + std::to_string(scale_gap));
    }
    const int factor = 1 << scale_gap;
    BgbTrace tr;
    tr.index = index;
    tr.scale_gap = scale_gap;
    try {
        const Shape gs = tape.shape(global);
        const Shape ms = tape.shape(multi);
        if (gs.h != ms.h * factor || gs.w != ms.w * factor || gs.n != ms.n) {
            throw ShapeError("global " + gs.str() + " and multi-scale " + ms.str() +
                             " are not related by scale factor " + std::to_string(factor));
        }

        // Global feature guidance.
        tr.global_down = downsample2(tape, global, factor);
        tr.fused_multi = conv_bn_relu(tape, concat_channels(tape, multi, tr.global_down), block.fuse_m, options);
        tr.alpha_global = sigmoid(tape, conv2d(tape, tr.global_down, block.proj_g.weight, block.proj_g.bias));
        Var alpha_g = tr.alpha_global;
        if (options.force_unit_attention) {
            alpha_g = tape.leaf(Tensor<T>(tape.shape(tr.alpha_global), T{1}));
        }
        tr.multi_out = broadcast_mul(tape, tr.fused_multi, alpha_g);

        // Multi-scale feature guidance.
        tr.multi_up = upsample2(tape, multi, factor);
        tr.fused_global = conv_bn_relu(tape, concat_channels(tape, global, tr.multi_up), block.fuse_g, options);
        tr.alpha_multi = sigmoid(tape, conv2d(tape, tr.multi_up, block.proj_m.weight, block.proj_m.bias));
        Var alpha_m = tr.alpha_multi;
        if (options.force_unit_attention) {
            alpha_m = tape.leaf(Tensor<T>(tape.shape(tr.alpha_multi), T{1}));
        }
        tr.global_out = broadcast_mul(tape, tr.fused_global, alpha_m);
    } catch (const ShapeError& e) {
        throw ShapeError("BGB " + std::to_string(index) + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError("BGB " + std::to_string(index) + ": " + e.what());
    }
    return tr;
}

template <typename T>
ForwardResult bagnet_forward(Tape<T>& tape, Var image, const BoundModel<T>& model, const BagnetConfig& config,
                             const ForwardOptions& options) {
    config.validate();
    const Shape xs = tape.shape(image);
    require_divisible_input(config, xs.h, xs.w);
    if (xs.c != config.input_channels) {
        throw ShapeError("image " + xs.str() + " does not have " + std::to_string(config.input_channels) +
                         " channel(s)");
    }

    const std::vector<int> d = config.scale_schedule();
    ForwardResult result;
    Var g = conv_bn_relu(tape, image, model.stem_g, options);
    Var m = conv_bn_relu(tape, image, model.stem_m, options);
    int current = 0;
    for (int k = 0; k < config.n_bgb; ++k) {
        if (d[k] > current) {
            m = downsample2(tape, m, 1 << (d[k] - current));
        } else if (d[k] < current) {
            m = upsample2(tape, m, 1 << (current - d[k]));
        }
        current = d[k];
        g = conv_bn_relu(tape, g, model.full_layers[k], options);
        m = conv_bn_relu(tape, m, model.ms_layers[k], options);
        BgbTrace tr = bgb_forward(tape, g, m, model.bgbs[k], d[k], options, k);
        g = tr.global_out;
        m = tr.multi_out;
        result.bgbs.push_back(tr);
    }
    const int last = config.multi_scale_depth - 1;
    if (d[last] < current) {
        m = upsample2(tape, m, 1 << (current - d[last]));
    }
    m = conv_bn_relu(tape, m, model.ms_layers[last], options);

    Var logits = conv2d(tape, concat_channels(tape, g, m), model.head.weight, model.head.bias);
    result.probabilities = sigmoid(tape, logits);
    return result;
}

template <typename T>
Tensor<T> predict(ModelParams<T>& params, const Tensor<T>& image) {
    Tape<T> tape;
    BoundModel<T> bound = bind_model(tape, params, false);
    Var x = tape.leaf(image);
    ForwardOptions opts;
    opts.mode = Mode::infer;
    return tape.value(bagnet_forward(tape, x, bound, params.config, opts).probabilities);
}

#define BAGNET_INSTANTIATE_MODEL(T)                                                                   \
    template struct BgbParams<T>;                                                                      \
    template struct ModelParams<T>;                                                                    \
    template ModelParams<T> make_params<T>(const BagnetConfig&);                                       \
    template ModelParams<T> init_params<T>(const BagnetConfig&, std::uint64_t);                        \
    template BoundConv<T> bind_conv(Tape<T>&, ConvParams<T>&, bool);                                   \
    template BoundBgb<T> bind_bgb(Tape<T>&, BgbParams<T>&, bool);                                      \
    template BoundModel<T> bind_model(Tape<T>&, ModelParams<T>&, bool);                                \
    template Var conv_bn_relu(Tape<T>&, Var, const BoundConv<T>&, const ForwardOptions&);              \
    template BgbTrace bgb_forward(Tape<T>&, Var, Var, const BoundBgb<T>&, int, const ForwardOptions&,  \
                                  int);                                                                \
    template ForwardResult bagnet_forward(Tape<T>&, Var, const BoundModel<T>&, const BagnetConfig&,    \
                                          const ForwardOptions&);                                      \
    template Tensor<T> predict(ModelParams<T>&, const Tensor<T>&);

BAGNET_INSTANTIATE_MODEL(float)
BAGNET_INSTANTIATE_MODEL(double)
BAGNET_INSTANTIATE_MODEL(long double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template ModelParams<long double> ModelParams<double>::cast<long double>() const;
template ModelParams<long double> ModelParams<float>::cast<long double>() const;

#undef BAGNET_INSTANTIATE_MODEL

}  // namespace bagnet
