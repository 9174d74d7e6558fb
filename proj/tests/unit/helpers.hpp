#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "bagnet/gradcheck.hpp"
#include "bagnet/ops.hpp"
#include "bagnet/tape.hpp"
#include "bagnet/tensor.hpp"

namespace testutil {

using bagnet::Shape;
using bagnet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(s);
    for (auto& v : t.data()) {
        v = static_cast<T>(d(rng));
    }
    return t;
}

template <typename T>
Tensor<T> random_mask(Shape s, std::uint64_t seed, double p = 0.5) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution d(p);
    Tensor<T> t(s);
    for (auto& v : t.data()) {
        v = d(rng) ? T{1} : T{0};
    }
    return t;
}

// Removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("bagnet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

template <typename>
struct tape_scalar;
template <typename T>
struct tape_scalar<bagnet::Tape<T>> {
    using type = T;
};
template <typename TapeT>
using scalar_of = typename tape_scalar<std::remove_cvref_t<TapeT>>::type;

// Checks a single operator at the precision of T. `build(tape, vars)` must be generic over the
// tape scalar and return the operator output. The objective is sum(out * r) for a fixed random
// r so every output element carries a distinct weight. The analytic gradient is taken from a T
// tape; the reference is a central difference of the same objective in long double at the same
// point, so rounding in the reference does not mask errors.
template <typename T, typename Build>
double op_gradcheck(const std::vector<Tensor<T>>& inputs, Build build, std::uint64_t seed = 11) {
    using bagnet::Var;
    using LD = long double;

    auto objective = [&](auto& tape, const std::vector<Var>& vars) {
        using S = scalar_of<decltype(tape)>;
        const Var out = build(tape, vars);
        const Tensor<S> r = random_tensor<S>(tape.shape(out), seed ^ 0x5eedULL);
        // sum(out * r) via sum_all of a weighted copy recorded as one node.
        const Tensor<S>& ov = tape.value(out);
        Tensor<S> weighted(ov.shape());
        for (std::size_t i = 0; i < ov.size(); ++i) {
            weighted[i] = ov[i] * r[i];
        }
        return tape.record(std::move(weighted), {out}, [out, r](bagnet::Tape<S>& t, const Tensor<S>& g) {
            Tensor<S> d(r.shape());
            for (std::size_t i = 0; i < r.size(); ++i) {
                d[i] = g[i] * r[i];
            }
            t.accumulate(out, d);
        });
    };

    std::vector<Tensor<T>> analytic;
    {
        bagnet::Tape<T> tape;
        std::vector<Var> vars;
        for (const auto& t : inputs) {
            vars.push_back(tape.leaf(t, true));
        }
        const Var loss = bagnet::sum_all(tape, objective(tape, vars));
        tape.backward(loss);
        for (std::size_t i = 0; i < vars.size(); ++i) {
            const Tensor<T>* g = tape.grad(vars[i]);
            analytic.push_back(g ? *g : Tensor<T>(inputs[i].shape()));
        }
    }

    std::vector<Tensor<LD>> ld;
    for (const auto& t : inputs) {
        ld.push_back(t.template cast<LD>());
    }
    bagnet::GradcheckProblem<LD> problem;
    for (auto& t : ld) {
        problem.parameters.push_back(&t);
    }
    problem.loss = [&]() {
        bagnet::Tape<LD> tape;
        std::vector<Var> vars;
        for (const auto& t : ld) {
            vars.push_back(tape.leaf(t, false));
        }
        return tape.value(bagnet::sum_all(tape, objective(tape, vars)))[0];
    };
    problem.gradient = [&]() {
        std::vector<Tensor<LD>> out;
        for (const auto& g : analytic) {
            out.push_back(g.template cast<LD>());
        }
        return out;
    };
    std::vector<bagnet::ParamCoord> coords;
    for (std::size_t t = 0; t < ld.size(); ++t) {
        for (std::size_t i = 0; i < ld[t].size(); ++i) {
            coords.push_back({t, i});
        }
    }
    return bagnet::finite_diff_check(problem, std::span<const bagnet::ParamCoord>(coords), 1e-7).max_rel_error;
}

}  // namespace testutil
