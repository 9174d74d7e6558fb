#pragma once

#include <cstdint>

#include "bagnet/gradcheck.hpp"
#include "bagnet/model.hpp"

namespace bagnet {

struct ModelGradcheckOptions {
    BagnetConfig config = BagnetConfig::tiny();
    std::size_t coordinates = 20;
    std::uint64_t seed = 7;
    // Step ladder of the extended-precision reference: `ladder_steps` steps starting at eps,
    // each ten times smaller than the last.
    double eps = 1e-4;
    int ladder_steps = 6;
    // Random images used to set the BN running statistics of the check point.
    int calibration_images = 8;
    double running_var_floor = 0.3;
};

struct ModelGradcheckResult {
    GradcheckReport report;
    double loss = 0.0;
    double seconds = 0.0;
};

// Full-network BCE gradient check on one (1, c, h, w) image with BN in infer mode.
//
// The check point is a fan-in initialisation with random biases and BN affine terms, and BN
// running statistics taken from a batch of random images. Parameters are rounded to T so that
// the analytic gradient (computed in T) and the reference are evaluated at the same point. The
// reference is a ladder of central differences of the same network evaluated in long double,
// which keeps cancellation noise far below the T-precision tolerance.
template <typename T>
ModelGradcheckResult model_gradcheck(const ModelGradcheckOptions& options = {});

// Tolerance used by the gradcheck command for precision T.
template <typename T>
constexpr double model_gradcheck_tolerance() {
    return sizeof(T) == 4 ? 1e-3 : 1e-6;
}

}  // namespace bagnet
