#include <cmath>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "bagnet/gradcheck.hpp"
#include "bagnet/model_gradcheck.hpp"

using namespace bagnet;

namespace {

GradcheckProblem<double> scalar_problem(Tensor<double>& theta, std::function<double(double)> f,
                                        std::function<double(double)> df) {
    GradcheckProblem<double> p;
    p.parameters = {&theta};
    p.loss = [&theta, f]() { return f(theta[0]); };
    p.gradient = [&theta, df]() { return std::vector<Tensor<double>>{Tensor<double>({1, 1, 1, 1}, df(theta[0]))}; };
    return p;
}

const std::vector<ParamCoord> kFirst{{0, 0}};

}  // namespace

TEST_SUITE("finite_diff_check") {
    TEST_CASE("quadratic") {
        Tensor<double> theta({1, 1, 1, 1}, 3.0);
        auto p = scalar_problem(theta, [](double t) { return t * t; }, [](double t) { return 2 * t; });
        const GradcheckReport r = finite_diff_check(p, std::span<const ParamCoord>(kFirst), 1e-3);
        REQUIRE(r.entries.size() == 1);
        CHECK(r.entries[0].numeric == doctest::Approx(6.0).epsilon(1e-9));
        CHECK(r.max_rel_error < 1e-9);
        CHECK(theta[0] == 3.0);
    }

    TEST_CASE("constant objective") {
        Tensor<double> theta({1, 1, 1, 1}, -2.0);
        auto p = scalar_problem(theta, [](double) { return 4.0; }, [](double) { return 0.0; });
        const GradcheckReport r = finite_diff_check(p, std::span<const ParamCoord>(kFirst));
        CHECK(r.entries[0].numeric == 0.0);
        CHECK(r.max_rel_error == 0.0);
    }

    TEST_CASE("a wrong gradient is reported") {
        Tensor<double> theta({1, 1, 1, 1}, 1.0);
        auto p = scalar_problem(theta, [](double t) { return std::sin(t); }, [](double t) { return 1.1 * std::cos(t); });
        const GradcheckReport r = finite_diff_check(p, std::span<const ParamCoord>(kFirst));
        CHECK(r.max_rel_error == doctest::Approx(0.1 / 1.1).epsilon(1e-6));
    }

    TEST_CASE("a non-deterministic objective invalidates the oracle") {
        Tensor<double> theta({1, 1, 1, 1}, 1.0);
        int calls = 0;
        GradcheckProblem<double> p;
        p.parameters = {&theta};
        p.loss = [&]() { return theta[0] + 1e-3 * (calls++); };
        p.gradient = []() { return std::vector<Tensor<double>>{Tensor<double>({1, 1, 1, 1}, 1.0)}; };
        CHECK_THROWS_AS(finite_diff_check(p, std::span<const ParamCoord>(kFirst)), OracleInvalidError);
    }

    TEST_CASE("bad arguments") {
        Tensor<double> theta({1, 1, 1, 1}, 1.0);
        auto p = scalar_problem(theta, [](double t) { return t; }, [](double) { return 1.0; });
        CHECK_THROWS_AS(finite_diff_check(p, std::span<const ParamCoord>(kFirst), 0.0), ConfigError);
        const std::vector<ParamCoord> outside{{0, 5}};
        CHECK_THROWS_AS(finite_diff_check(p, std::span<const ParamCoord>(outside)), UsageError);
    }

    TEST_CASE("ladder picks the agreeing pair over a kink") {
        // |t| near t = 1e-5: the coarse steps straddle the kink, the fine ones do not.
        Tensor<double> theta({1, 1, 1, 1}, 1e-5);
        auto p = scalar_problem(theta, [](double t) { return std::abs(t) * 3.0; }, [](double) { return 3.0; });
        const std::vector<double> steps{1e-3, 1e-4, 1e-6, 1e-7};
        const GradcheckReport r =
            ladder_finite_diff_check(p, std::span<const ParamCoord>(kFirst), std::span<const double>(steps));
        CHECK(r.max_rel_error < 1e-8);
        CHECK(r.entries[0].step <= 1e-6);
        const GradcheckReport plain = finite_diff_check(p, std::span<const ParamCoord>(kFirst), 1e-3);
        CHECK(plain.max_rel_error > 0.5);
        const std::vector<double> bad{1e-3, 1e-3};
        CHECK_THROWS_AS(
            ladder_finite_diff_check(p, std::span<const ParamCoord>(kFirst), std::span<const double>(bad)),
            ConfigError);
    }

    TEST_CASE("coordinate sampling is seeded and in range") {
        std::vector<Tensor<float>> ts{Tensor<float>({1, 1, 1, 3}), Tensor<float>({2, 2, 2, 2})};
        std::vector<Tensor<float>*> ptrs{&ts[0], &ts[1]};
        const auto a = sample_coordinates<float>(ptrs, 50, 4);
        const auto b = sample_coordinates<float>(ptrs, 50, 4);
        REQUIRE(a.size() == 50);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].tensor == b[i].tensor);
            CHECK(a[i].index == b[i].index);
            CHECK(a[i].index < ts[a[i].tensor].size());
        }
    }
}

TEST_SUITE("model gradcheck") {
    // Observed on the reference machine at the default seed: f64 ~ 6e-10, f32 ~ 2.5e-6.
    TEST_CASE("tiny network, 64-bit") {
        const ModelGradcheckResult r = model_gradcheck<double>();
        CHECK(r.report.entries.size() == 20);
        CHECK(r.report.max_rel_error < 1e-6);
    }

    TEST_CASE("tiny network, 32-bit") {
        const ModelGradcheckResult r = model_gradcheck<float>();
        CHECK(r.report.entries.size() == 20);
        CHECK(r.report.max_rel_error < 1e-3);
    }
}
