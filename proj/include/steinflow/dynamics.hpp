#pragma once

#include "steinflow/types.hpp"

namespace steinflow {

/// Stochastic Lorenz-63: RK4 integration followed by additive Gaussian noise
/// once per observation cycle.
struct Lorenz63Config {
    double sigma = 10.0;
    double rho = 28.0;
    double beta = 8.0 / 3.0;
    double dt = 0.01;
    int steps_per_cycle = 10;
    double model_noise_std = 0.1;

    void validate() const;
};

using State3 = Eigen::Vector3d;

State3 l63_deriv(const State3& state, const Lorenz63Config& cfg);

/// Noise-free part of `propagate`: `steps_per_cycle` RK4 steps of size `dt`.
State3 integrate(const State3& state, const Lorenz63Config& cfg);

/// One cycle of the stochastic model. Throws NumericalError on blow-up.
State3 propagate(const State3& state, const Lorenz63Config& cfg, Rng& rng);

}  // namespace steinflow
