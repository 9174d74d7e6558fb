#include "bagnet/model_gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "bagnet/error.hpp"

namespace bagnet {

namespace {

using Ref = long double;

template <typename T>
T model_loss(ModelParams<T>& params, const Tensor<T>& image, const Tensor<T>& target, Mode mode,
             bool update_running_stats) {
    Tape<T> tape;
    BoundModel<T> bound = bind_model(tape, params, false);
    ForwardOptions fwd;
    fwd.mode = mode;
    fwd.update_running_stats = update_running_stats;
    Var loss = bce_loss(tape, bagnet_forward(tape, tape.leaf(image), bound, params.config, fwd).probabilities,
                        target);
    return tape.value(loss)[0];
}

void fill_uniform(Tensor<double>& t, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    for (double& v : t.data()) {
        v = pixel(rng);
    }
}

void fill_target(Tensor<double>& t, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    for (double& v : t.data()) {
        v = pixel(rng) < 0.3 ? 1.0 : 0.0;
    }
}

ModelParams<double> check_point(const ModelGradcheckOptions& options) {
    const BagnetConfig& config = options.config;
    ModelParams<double> p = init_params<double>(config, options.seed);
    std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> bias(-0.1, 0.1);
    std::uniform_real_distribution<double> gamma(0.5, 1.5);
    std::uniform_real_distribution<double> beta(-0.3, 0.3);
    for (ConvParams<double>* l : p.layers()) {
        for (double& v : l->bias.data()) {
            v = bias(rng);
        }
        if (l->has_bn) {
            for (double& v : l->bn_gamma.data()) {
                v = gamma(rng);
            }
            for (double& v : l->bn_beta.data()) {
                v = beta(rng);
            }
        }
    }

    if (options.calibration_images > 0) {
        const Shape cs{options.calibration_images, config.input_channels, config.input_height,
                       config.input_width};
        Tensor<double> images(cs);
        Tensor<double> targets(Shape{cs.n, 1, cs.h, cs.w});
        std::mt19937_64 crng(options.seed + 3);
        fill_uniform(images, crng);
        fill_target(targets, crng);
        std::vector<double> momentum;
        for (ConvParams<double>* l : p.layers()) {
            momentum.push_back(l->bn_momentum);
            l->bn_momentum = 1.0;
        }
        model_loss(p, images, targets, Mode::train, true);
        std::size_t i = 0;
        for (ConvParams<double>* l : p.layers()) {
            l->bn_momentum = momentum[i++];
        }
    }
    for (ConvParams<double>* l : p.layers()) {
        if (l->has_bn) {
            for (double& v : l->bn_running_var.data()) {
                v = std::max(v, options.running_var_floor);
            }
        }
    }
    return p;
}

}  // namespace

template <typename T>
ModelGradcheckResult model_gradcheck(const ModelGradcheckOptions& options) {
    const auto start = std::chrono::steady_clock::now();
    const BagnetConfig& config = options.config;
    config.validate();
    if (options.coordinates == 0) {
        throw UsageError("gradcheck needs at least one coordinate");
    }

    ModelParams<T> params = check_point(options).template cast<T>();
    ModelParams<Ref> reference = params.template cast<Ref>();

    std::mt19937_64 rng(options.seed + 1);
    Tensor<double> image_d(Shape{1, config.input_channels, config.input_height, config.input_width});
    Tensor<double> target_d(Shape{1, 1, config.input_height, config.input_width});
    fill_uniform(image_d, rng);
    fill_target(target_d, rng);
    const Tensor<T> image = image_d.cast<T>();
    const Tensor<T> target = target_d.cast<T>();
    const Tensor<Ref> image_ref = image.template cast<Ref>();
    const Tensor<Ref> target_ref = target.template cast<Ref>();

    ModelGradcheckResult result;
    std::vector<Tensor<Ref>> analytic;
    {
        Tape<T> tape;
        BoundModel<T> bound = bind_model(tape, params, true);
        ForwardOptions fwd;
        fwd.mode = Mode::infer;
        Var loss = bce_loss(tape, bagnet_forward(tape, tape.leaf(image), bound, config, fwd).probabilities, target);
        tape.backward(loss);
        result.loss = static_cast<double>(tape.value(loss)[0]);
        for (Var v : bound.learnable_vars) {
            const Tensor<T>* g = tape.grad(v);
            analytic.push_back(g ? g->template cast<Ref>() : Tensor<Ref>(tape.shape(v)));
        }
    }

    GradcheckProblem<Ref> problem;
    problem.parameters = reference.learnables();
    problem.loss = [&]() { return model_loss(reference, image_ref, target_ref, Mode::infer, false); };
    problem.gradient = [&]() { return analytic; };

    const auto coords = sample_coordinates<Ref>(problem.parameters, options.coordinates, options.seed + 2);
    if (options.ladder_steps < 2 || !(options.eps > 0.0)) {
        throw ConfigError("gradcheck needs eps > 0 and at least two ladder steps");
    }
    std::vector<double> steps;
    for (int i = 0; i < options.ladder_steps; ++i) {
        steps.push_back(options.eps * std::pow(10.0, -i));
    }
    result.report = ladder_finite_diff_check(problem, std::span<const ParamCoord>(coords), steps);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

template ModelGradcheckResult model_gradcheck<float>(const ModelGradcheckOptions&);
template ModelGradcheckResult model_gradcheck<double>(const ModelGradcheckOptions&);

}  // namespace bagnet
