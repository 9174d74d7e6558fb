#include <cstring>

#include "doctest.h"
#include "helpers.hpp"

#include "bagnet/model.hpp"

using namespace bagnet;
using testutil::random_tensor;

namespace {

template <typename T>
void randomise(ModelParams<T>& p, std::uint64_t seed) {
    std::uint64_t s = seed;
    for (Tensor<T>* t : p.learnables()) {
        *t = random_tensor<T>(t->shape(), ++s, -0.3, 0.3);
    }
}

// Bytes of every state tensor, in declaration order.
template <typename T>
std::vector<unsigned char> param_bytes(const ModelParams<T>& p) {
    std::vector<unsigned char> out;
    for (const Tensor<T>* t : p.state_tensors()) {
        const auto* b = reinterpret_cast<const unsigned char*>(t->ptr());
        out.insert(out.end(), b, b + t->size() * sizeof(T));
    }
    return out;
}

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("architecture constants") {
        const BagnetConfig c;
        CHECK(c.full_scale_depth == 8);
        CHECK(c.multi_scale_depth == 9);
        CHECK(c.full_scale_channels == 32);
        CHECK(c.multi_scale_channels == 64);
        CHECK(c.n_bgb == 8);
        CHECK(c.n_down == 4);
        CHECK(c.n_up == 4);
        CHECK(c.scale_schedule() == std::vector<int>{0, 1, 2, 3, 4, 3, 2, 1, 0});
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("invalid configurations") {
        BagnetConfig c;
        c.n_bgb = 7;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = BagnetConfig{};
        c.multi_scale_depth = 8;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = BagnetConfig{};
        c.input_height = 40;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(make_params<float>(c), ConfigError);
    }
}

TEST_SUITE("param_count") {
    TEST_CASE("default configuration, enumerated layer by layer") {
        // stems 1->32 and 1->64, 8 full-scale 32->32, 9 multi-scale 64->64 (all 3x3 + BN),
        // 8 BGBs of fuse_m 96->64, fuse_g 96->32 (3x3 + BN), proj_g 32->1, proj_m 64->1 (1x1),
        // head 96->1 (1x1). A BN layer adds bias, gamma and beta per output channel.
        const std::size_t stem_g = 1 * 32 * 9 + 3 * 32;
        const std::size_t stem_m = 1 * 64 * 9 + 3 * 64;
        const std::size_t full = 8 * (32 * 32 * 9 + 3 * 32);
        const std::size_t multi = 9 * (64 * 64 * 9 + 3 * 64);
        const std::size_t bgb = 8 * ((96 * 64 * 9 + 3 * 64) + (96 * 32 * 9 + 3 * 32) + (32 + 1) + (64 + 1));
        const std::size_t head = 96 + 1;
        const std::size_t expected = stem_g + stem_m + full + multi + bgb + head;
        CHECK(expected == 1075889);
        CHECK(param_count(BagnetConfig{}) == 1075889);

        ModelParams<float> p = make_params<float>(BagnetConfig{});
        std::size_t n = 0;
        for (Tensor<float>* t : p.learnables()) {
            n += t->size();
        }
        CHECK(n == 1075889);
    }

    TEST_CASE("independent of the input size") {
        BagnetConfig c;
        c.input_height = 128;
        c.input_width = 32;
        CHECK(param_count(c) == param_count(BagnetConfig{}));
    }

    TEST_CASE("3x3 weights scale with the square of the width") {
        BagnetConfig a;
        BagnetConfig b;
        b.full_scale_channels *= 2;
        b.multi_scale_channels *= 2;
        auto pa = make_params<float>(a);
        auto pb = make_params<float>(b);
        CHECK(pb.full_layers[0].weight.size() == 4 * pa.full_layers[0].weight.size());
        CHECK(pb.ms_layers[3].weight.size() == 4 * pa.ms_layers[3].weight.size());
        CHECK(pb.bgbs[0].fuse_m.weight.size() == 4 * pa.bgbs[0].fuse_m.weight.size());
    }

    TEST_CASE("layer table shapes") {
        const auto t = layer_table(BagnetConfig{});
        CHECK(t.size() == 2 + 8 + 9 + 8 * 4 + 1);
        CHECK(t.front().name == "stem_g");
        CHECK(t.back().name == "head");
        CHECK(t.back().in_channels == 96);
        CHECK(t.back().batch_norm == false);
    }
}

TEST_SUITE("init_params") {
    TEST_CASE("seeded and reproducible") {
        const BagnetConfig c = BagnetConfig::tiny();
        const auto a = init_params<float>(c, 5);
        const auto b = init_params<float>(c, 5);
        const auto d = init_params<float>(c, 6);
        CHECK(param_bytes(a) == param_bytes(b));
        CHECK(param_bytes(a) != param_bytes(d));
    }

    TEST_CASE("stated initial values") {
        auto p = init_params<float>(BagnetConfig{}, 0);
        for (ConvParams<float>* l : p.layers()) {
            for (float v : l->bias.data()) {
                CHECK(v == 0.0f);
            }
            const Shape s = l->weight.shape();
            const float bound = std::sqrt(6.0f / static_cast<float>(s.c * s.h * s.w));
            float lo = 0.0f;
            float hi = 0.0f;
            for (float v : l->weight.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            CHECK(lo >= -bound);
            CHECK(hi <= bound);
            CHECK(hi > 0.0f);
            if (l->has_bn) {
                for (float v : l->bn_gamma.data()) {
                    CHECK(v == 1.0f);
                }
                for (float v : l->bn_beta.data()) {
                    CHECK(v == 0.0f);
                }
            }
        }
    }
}

TEST_SUITE("bgb_forward") {
    TEST_CASE("intermediate shapes at scale gap 1") {
        auto params = BgbParams<float>::make(32, 64);
        Tape<float> tape;
        const BoundBgb<float> b = bind_bgb(tape, params, false);
        const Var g = tape.leaf(random_tensor<float>({1, 32, 64, 64}, 1));
        const Var m = tape.leaf(random_tensor<float>({1, 64, 32, 32}, 2));
        ForwardOptions o;
        o.mode = Mode::train;
        const BgbTrace tr = bgb_forward(tape, g, m, b, 1, o);
        CHECK(tape.shape(tr.global_out) == Shape{1, 32, 64, 64});
        CHECK(tape.shape(tr.multi_out) == Shape{1, 64, 32, 32});
        CHECK(tape.shape(tr.global_down) == Shape{1, 32, 32, 32});
        CHECK(tape.shape(tr.fused_multi) == Shape{1, 64, 32, 32});
        CHECK(tape.shape(tr.alpha_global) == Shape{1, 1, 32, 32});
        CHECK(tape.shape(tr.multi_up) == Shape{1, 64, 64, 64});
        CHECK(tape.shape(tr.fused_global) == Shape{1, 32, 64, 64});
        CHECK(tape.shape(tr.alpha_multi) == Shape{1, 1, 64, 64});
    }

    TEST_CASE("attention maps lie in (0, 1)") {
        auto params = BgbParams<float>::make(4, 8);
        params.proj_g.weight = random_tensor<float>(params.proj_g.weight.shape(), 3, -3.0, 3.0);
        params.proj_m.weight = random_tensor<float>(params.proj_m.weight.shape(), 4, -3.0, 3.0);
        Tape<float> tape;
        const BoundBgb<float> b = bind_bgb(tape, params, false);
        const BgbTrace tr = bgb_forward(tape, tape.leaf(random_tensor<float>({2, 4, 16, 16}, 5, -4, 4)),
                                        tape.leaf(random_tensor<float>({2, 8, 4, 4}, 6, -4, 4)), b, 2, ForwardOptions{});
        for (const Var a : {tr.alpha_global, tr.alpha_multi}) {
            for (float v : tape.value(a).data()) {
                CHECK(v > 0.0f);
                CHECK(v < 1.0f);
            }
        }
    }

    TEST_CASE("zero projection halves the fused features") {
        auto params = BgbParams<float>::make(4, 8);
        params.fuse_m.weight = random_tensor<float>(params.fuse_m.weight.shape(), 7);
        params.fuse_g.weight = random_tensor<float>(params.fuse_g.weight.shape(), 8);
        params.proj_m.weight = random_tensor<float>(params.proj_m.weight.shape(), 9);
        Tape<float> tape;
        const BoundBgb<float> b = bind_bgb(tape, params, false);
        const BgbTrace tr = bgb_forward(tape, tape.leaf(random_tensor<float>({1, 4, 8, 8}, 10)),
                                        tape.leaf(random_tensor<float>({1, 8, 4, 4}, 11)), b, 1, ForwardOptions{});
        for (float v : tape.value(tr.alpha_global).data()) {
            CHECK(v == 0.5f);
        }
        const Tensor<float>& fused = tape.value(tr.fused_multi);
        const Tensor<float>& out = tape.value(tr.multi_out);
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i] == 0.5f * fused[i]);
        }
    }

    TEST_CASE("forced unit attention passes the fused features through") {
        auto params = BgbParams<float>::make(4, 8);
        for (auto* l : {&params.fuse_m, &params.fuse_g, &params.proj_g, &params.proj_m}) {
            l->weight = random_tensor<float>(l->weight.shape(), 12 + l->weight.size());
        }
        Tape<float> tape;
        const BoundBgb<float> b = bind_bgb(tape, params, false);
        ForwardOptions o;
        o.force_unit_attention = true;
        const BgbTrace tr = bgb_forward(tape, tape.leaf(random_tensor<float>({1, 4, 16, 16}, 13)),
                                        tape.leaf(random_tensor<float>({1, 8, 2, 2}, 14)), b, 3, o);
        CHECK(tape.value(tr.multi_out) == tape.value(tr.fused_multi));
        CHECK(tape.value(tr.global_out) == tape.value(tr.fused_global));
    }

    TEST_CASE("shape violations name the block") {
        auto params = BgbParams<float>::make(4, 8);
        Tape<float> tape;
        const BoundBgb<float> b = bind_bgb(tape, params, false);
        try {
            bgb_forward(tape, tape.leaf(Tensor<float>({1, 4, 16, 16})), tape.leaf(Tensor<float>({1, 8, 4, 4})), b, 1,
                        ForwardOptions{}, 5);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            CHECK(std::string(e.what()).find("BGB 5") != std::string::npos);
        }
    }
}

TEST_SUITE("bagnet_forward") {
    TEST_CASE("default widths, batch of two at 64x64") {
        auto p = init_params<float>(BagnetConfig{}, 1);
        const Tensor<float> x = random_tensor<float>({2, 1, 64, 64}, 2, 0.0, 1.0);
        Tape<float> tape;
        const BoundModel<float> m = bind_model(tape, p, false);
        ForwardOptions o;
        o.mode = Mode::train;
        const ForwardResult r = bagnet_forward(tape, tape.leaf(x), m, p.config, o);
        const Tensor<float>& y = tape.value(r.probabilities);
        CHECK(y.shape() == Shape{2, 1, 64, 64});
        for (float v : y.data()) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
        CHECK(r.bgbs.size() == 8);
    }

    TEST_CASE("all-zero parameters give one half everywhere") {
        auto p = make_params<float>(BagnetConfig::tiny());
        const Tensor<float> y = predict(p, random_tensor<float>({1, 1, 16, 16}, 3, 0.0, 1.0));
        for (float v : y.data()) {
            CHECK(v == 0.5f);
        }
    }

    TEST_CASE("bitwise reproducible") {
        const Tensor<float> x = random_tensor<float>({1, 1, 32, 32}, 4, 0.0, 1.0);
        auto a = init_params<float>(BagnetConfig::tiny(), 9);
        auto b = init_params<float>(BagnetConfig::tiny(), 9);
        CHECK(predict(a, x) == predict(b, x));
    }

    TEST_CASE("input validation happens before any compute") {
        auto p = init_params<float>(BagnetConfig::tiny(), 1);
        CHECK_THROWS_AS(predict(p, Tensor<float>({1, 1, 24, 16})), ConfigError);
        CHECK_THROWS_AS(predict(p, Tensor<float>({1, 2, 16, 16})), ShapeError);
    }

    TEST_CASE("every layer receives gradient") {
        auto p = init_params<float>(BagnetConfig::tiny(), 3);
        randomise(p, 30);
        const Tensor<float> x = random_tensor<float>({2, 1, 16, 16}, 4, 0.0, 1.0);
        const Tensor<float> y = testutil::random_mask<float>({2, 1, 16, 16}, 5, 0.3);
        Tape<float> tape;
        const BoundModel<float> m = bind_model(tape, p, true);
        ForwardOptions o;
        o.mode = Mode::train;
        const ForwardResult r = bagnet_forward(tape, tape.leaf(x), m, p.config, o);
        tape.backward(bce_loss(tape, r.probabilities, y));

        const auto names = p.layer_names();
        const auto layers = p.layers();
        std::size_t v = 0;
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const std::size_t n_tensors = layers[li]->has_bn ? 4 : 2;
            bool any_nonzero = false;
            for (std::size_t k = 0; k < n_tensors; ++k, ++v) {
                const Tensor<float>* g = tape.grad(m.learnable_vars[v]);
                CHECK_MESSAGE(g != nullptr, names[li]);
                if (g) {
                    for (float e : g->data()) {
                        any_nonzero = any_nonzero || e != 0.0f;
                    }
                }
            }
            CHECK_MESSAGE(any_nonzero, names[li]);
        }
        CHECK(v == m.learnable_vars.size());
    }
}
