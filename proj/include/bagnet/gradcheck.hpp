#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "bagnet/tensor.hpp"

namespace bagnet {

// One scalar inside a list of parameter tensors.
struct ParamCoord {
    std::size_t tensor = 0;
    std::size_t index = 0;
};

struct GradcheckEntry {
    ParamCoord coord;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    // Step of the reported central difference.
    double step = 0.0;
    // Ladder checks only: relative disagreement of the estimate with its coarser neighbour.
    double ladder_gap = 0.0;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::vector<GradcheckEntry> entries;
};

// A deterministic scalar objective over a set of tensors that are perturbed in place.
template <typename T>
struct GradcheckProblem {
    std::vector<Tensor<T>*> parameters;
    std::function<T()> loss;
    // Analytic gradient, one tensor per entry of `parameters`.
    std::function<std::vector<Tensor<T>>()> gradient;
};

template <typename T>
constexpr double default_gradcheck_eps() {
    return sizeof(T) == 4 ? 1e-3 : sizeof(T) == 8 ? 1e-5 : 1e-6;
}

// Central differences at each coordinate compared against the analytic gradient:
//   |a - (f(x+eps) - f(x-eps)) / (2 eps)| / max(|a|, |numeric|, 1e-8)
// Throws OracleInvalidError if two baseline evaluations of the loss disagree.
template <typename T>
GradcheckReport finite_diff_check(const GradcheckProblem<T>& problem, std::span<const ParamCoord> coords,
                                  double eps = default_gradcheck_eps<T>());

// Central differences at every step of a strictly decreasing ladder. At each coordinate the
// adjacent pair of estimates that agree best is located and the finer one is reported. A kink
// closer than the step, or cancellation noise at tiny steps, shows up as disagreement between
// neighbours, so the selection never consults the analytic gradient.
template <typename T>
GradcheckReport ladder_finite_diff_check(const GradcheckProblem<T>& problem, std::span<const ParamCoord> coords,
                                         std::span<const double> steps);

// Picks a tensor uniformly, then an element of it uniformly; repeated `count` times.
template <typename T>
std::vector<ParamCoord> sample_coordinates(std::span<Tensor<T>* const> parameters, std::size_t count,
                                           std::uint64_t seed);

}  // namespace bagnet
