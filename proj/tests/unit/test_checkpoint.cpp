#include <cstring>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

#include "bagnet/checkpoint.hpp"

using namespace bagnet;
using testutil::random_tensor;
using testutil::TempDir;

namespace {

ModelParams<float> trained_looking_params(std::uint64_t seed) {
    auto p = init_params<float>(BagnetConfig::tiny(), seed);
    std::uint64_t s = seed * 100;
    for (Tensor<float>* t : p.state_tensors()) {
        *t = random_tensor<float>(t->shape(), ++s, 0.1, 0.9);
    }
    return p;
}

AdamState<float> some_state(ModelParams<float>& p) {
    auto learn = p.learnables();
    AdamState<float> st = AdamState<float>::zeros_like(learn);
    st.step = 17;
    for (std::size_t i = 0; i < st.m.size(); ++i) {
        st.m[i] = random_tensor<float>(st.m[i].shape(), 500 + i);
        st.v[i] = random_tensor<float>(st.v[i].shape(), 900 + i, 0.0, 1.0);
    }
    return st;
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip is bit-exact") {
        TempDir dir;
        auto p = trained_looking_params(1);
        const AdamState<float> st = some_state(p);
        save_checkpoint(dir / "a.ckpt", p, &st);

        auto q = make_params<float>(BagnetConfig::tiny());
        AdamState<float> st2;
        load_checkpoint(dir / "a.ckpt", q, &st2);
        const auto ps = p.state_tensors();
        const auto qs = q.state_tensors();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            CHECK(*ps[i] == *qs[i]);
        }
        CHECK(st2 == st);

        const Tensor<float> x = random_tensor<float>({1, 1, 16, 16}, 2, 0.0, 1.0);
        CHECK(predict(p, x) == predict(q, x));
        CHECK(encode_checkpoint(q, &st2) == read_all(dir / "a.ckpt"));
    }

    TEST_CASE("double precision and no optimizer state") {
        TempDir dir;
        auto p = init_params<double>(BagnetConfig::tiny(), 3);
        save_checkpoint<double>(dir / "d.ckpt", p);
        const Checkpoint<double> c = read_checkpoint<double>(dir / "d.ckpt");
        CHECK(!c.optimizer.has_value());
        CHECK(c.params.config == p.config);
        CHECK_THROWS_AS(read_checkpoint<float>(dir / "d.ckpt"), CheckpointShapeError);
    }

    TEST_CASE("header layout") {
        auto p = init_params<float>(BagnetConfig::tiny(), 4);
        const auto bytes = encode_checkpoint<float>(p, nullptr);
        REQUIRE(bytes.size() > 28);
        CHECK(std::memcmp(bytes.data(), "BAGNETCK", 8) == 0);
        std::uint32_t version;
        std::uint32_t scalar;
        std::uint64_t body;
        std::memcpy(&version, bytes.data() + 8, 4);
        std::memcpy(&scalar, bytes.data() + 12, 4);
        std::memcpy(&body, bytes.data() + 16, 8);
        CHECK(version == kCheckpointVersion);
        CHECK(scalar == 4);
        CHECK(body == bytes.size() - 28);
        std::int32_t cfg[10];
        std::memcpy(cfg, bytes.data() + 24, sizeof(cfg));
        CHECK(cfg[0] == 8);
        CHECK(cfg[2] == 4);
        CHECK(cfg[3] == 8);
        CHECK(cfg[8] == 16);
    }

    TEST_CASE("mismatched config is rejected without touching the target") {
        TempDir dir;
        auto p = trained_looking_params(5);
        save_checkpoint<float>(dir / "p.ckpt", p);
        BagnetConfig other = BagnetConfig::tiny();
        other.multi_scale_channels = 6;
        auto q = init_params<float>(other, 6);
        const auto before = init_params<float>(other, 6);
        AdamState<float> st;
        CHECK_THROWS_AS(load_checkpoint(dir / "p.ckpt", q, &st), CheckpointShapeError);
        const auto qs = q.state_tensors();
        const auto bs = before.state_tensors();
        for (std::size_t i = 0; i < qs.size(); ++i) {
            CHECK(*qs[i] == *bs[i]);
        }
        CHECK(st.step == 0);
        CHECK(st.m.empty());
    }

    TEST_CASE("missing optimizer state is an error when requested") {
        TempDir dir;
        auto p = trained_looking_params(7);
        save_checkpoint<float>(dir / "p.ckpt", p);
        AdamState<float> st;
        CHECK_THROWS_AS(load_checkpoint(dir / "p.ckpt", p, &st), CheckpointError);
    }

    TEST_CASE("damaged files map to distinct errors") {
        auto p = trained_looking_params(8);
        const AdamState<float> st = some_state(p);
        const auto good = encode_checkpoint(p, &st);

        SUBCASE("trailing bytes") {
            auto b = good;
            b.push_back(0);
            b.push_back(7);
            CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointIntegrityError);
        }
        SUBCASE("flipped payload bit") {
            auto b = good;
            b[b.size() / 2] ^= 0x10;
            CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointIntegrityError);
        }
        SUBCASE("flipped crc") {
            auto b = good;
            b.back() ^= 0x01;
            CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointIntegrityError);
        }
        SUBCASE("truncated") {
            for (std::size_t keep : {std::size_t{0}, std::size_t{5}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
                const std::vector<std::uint8_t> b(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
                CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointTruncatedError);
            }
        }
        SUBCASE("future version") {
            auto b = good;
            b[8] = 2;
            CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointVersionError);
        }
        SUBCASE("bad magic") {
            auto b = good;
            b[0] = 'X';
            CHECK_THROWS_AS(decode_checkpoint<float>(b), CheckpointIntegrityError);
        }
    }

    TEST_CASE("on-disk damage is detected by load") {
        TempDir dir;
        auto p = trained_looking_params(9);
        save_checkpoint<float>(dir / "p.ckpt", p);
        auto b = read_all(dir / "p.ckpt");
        b.insert(b.end(), {1, 2, 3});
        write_all(dir / "p.ckpt", b);
        auto q = make_params<float>(BagnetConfig::tiny());
        CHECK_THROWS_AS(load_checkpoint(dir / "p.ckpt", q), CheckpointIntegrityError);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", q), CheckpointError);
    }
}
