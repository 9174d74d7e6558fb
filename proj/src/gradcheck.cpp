#include "bagnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <random>

#include "bagnet/error.hpp"

namespace bagnet {

namespace {

template <typename T>
std::vector<Tensor<T>> checked_baseline(const GradcheckProblem<T>& problem) {
    const T base_a = problem.loss();
    const T base_b = problem.loss();
    if (!(base_a == base_b)) {
        throw OracleInvalidError("objective is not deterministic: two baseline evaluations differ");
    }
    std::vector<Tensor<T>> analytic = problem.gradient();
    if (analytic.size() != problem.parameters.size()) {
        throw ShapeError("gradient count does not match parameter count");
    }
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (analytic[i].shape() != problem.parameters[i]->shape()) {
            throw ShapeError("gradient " + std::to_string(i) + " has shape " + analytic[i].shape().str() +
                             ", parameter has " + problem.parameters[i]->shape().str());
        }
    }
    return analytic;
}

template <typename T>
accum_t<T> central_difference(const GradcheckProblem<T>& problem, const ParamCoord& pc, double eps) {
    using Acc = accum_t<T>;
    if (pc.tensor >= problem.parameters.size() || pc.index >= problem.parameters[pc.tensor]->size()) {
        throw UsageError("gradcheck coordinate out of range");
    }
    Tensor<T>& p = *problem.parameters[pc.tensor];
    const T saved = p[pc.index];
    const T hi = static_cast<T>(saved + eps);
    const T lo = static_cast<T>(saved - eps);
    p[pc.index] = hi;
    const Acc up = problem.loss();
    p[pc.index] = lo;
    const Acc down = problem.loss();
    p[pc.index] = saved;
    // Divide by the step actually taken after rounding to T.
    return (up - down) / (static_cast<Acc>(hi) - static_cast<Acc>(lo));
}

void finish_entry(GradcheckReport& report, GradcheckEntry e) {
    const double denom = std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-8});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
}

}  // namespace

template <typename T>
GradcheckReport finite_diff_check(const GradcheckProblem<T>& problem, std::span<const ParamCoord> coords,
                                  double eps) {
    if (!(eps > 0.0)) {
        throw ConfigError("finite difference eps must be positive");
    }
    const std::vector<Tensor<T>> analytic = checked_baseline(problem);
    GradcheckReport report;
    for (const ParamCoord& pc : coords) {
        GradcheckEntry e;
        e.coord = pc;
        e.numeric = static_cast<double>(central_difference(problem, pc, eps));
        e.analytic = static_cast<double>(analytic[pc.tensor][pc.index]);
        e.step = eps;
        finish_entry(report, e);
    }
    return report;
}

template <typename T>
GradcheckReport ladder_finite_diff_check(const GradcheckProblem<T>& problem, std::span<const ParamCoord> coords,
                                         std::span<const double> steps) {
    if (steps.size() < 2) {
        throw ConfigError("step ladder needs at least two steps");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!(steps[i] > 0.0) || (i > 0 && !(steps[i] < steps[i - 1]))) {
            throw ConfigError("step ladder must be positive and strictly decreasing");
        }
    }
    const std::vector<Tensor<T>> analytic = checked_baseline(problem);
    GradcheckReport report;
    std::vector<double> d(steps.size());
    for (const ParamCoord& pc : coords) {
        for (std::size_t i = 0; i < steps.size(); ++i) {
            d[i] = static_cast<double>(central_difference(problem, pc, steps[i]));
        }
        std::size_t best = 1;
        double best_gap = std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i < steps.size(); ++i) {
            const double scale = std::max({std::abs(d[i]), std::abs(d[i - 1]), 1e-300});
            const double gap = std::abs(d[i] - d[i - 1]) / scale;
            if (gap < best_gap) {
                best_gap = gap;
                best = i;
            }
        }
        GradcheckEntry e;
        e.coord = pc;
        e.numeric = d[best];
        e.analytic = static_cast<double>(analytic[pc.tensor][pc.index]);
        e.step = steps[best];
        e.ladder_gap = best_gap;
        finish_entry(report, e);
    }
    return report;
}

template <typename T>
std::vector<ParamCoord> sample_coordinates(std::span<Tensor<T>* const> parameters, std::size_t count,
                                           std::uint64_t seed) {
    if (parameters.empty()) {
        throw UsageError("no parameters to sample from");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick_tensor(0, parameters.size() - 1);
    std::vector<ParamCoord> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t t = pick_tensor(rng);
        std::uniform_int_distribution<std::size_t> pick_index(0, parameters[t]->size() - 1);
        out.push_back(ParamCoord{t, pick_index(rng)});
    }
    return out;
}

#define BAGNET_INSTANTIATE_LADDER(T) \
    template GradcheckReport ladder_finite_diff_check(const GradcheckProblem<T>&, std::span<const ParamCoord>, \
                                                      std::span<const double>);
BAGNET_INSTANTIATE_LADDER(float)
BAGNET_INSTANTIATE_LADDER(double)
BAGNET_INSTANTIATE_LADDER(long double)
#undef BAGNET_INSTANTIATE_LADDER

template GradcheckReport finite_diff_check(const GradcheckProblem<float>&, std::span<const ParamCoord>, double);
template GradcheckReport finite_diff_check(const GradcheckProblem<double>&, std::span<const ParamCoord>, double);
template GradcheckReport finite_diff_check(const GradcheckProblem<long double>&, std::span<const ParamCoord>,
                                           double);
template std::vector<ParamCoord> sample_coordinates(std::span<Tensor<float>* const>, std::size_t, std::uint64_t);
template std::vector<ParamCoord> sample_coordinates(std::span<Tensor<double>* const>, std::size_t, std::uint64_t);
template std::vector<ParamCoord> sample_coordinates(std::span<Tensor<long double>* const>, std::size_t,
                                                    std::uint64_t);

}  // namespace bagnet
