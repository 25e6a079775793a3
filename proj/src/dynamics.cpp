#include "steinflow/dynamics.hpp"

#include <cmath>

namespace steinflow {

void Lorenz63Config::validate() const
{
    require(std::isfinite(sigma) && std::isfinite(rho) && std::isfinite(beta), "dynamics parameters must be finite");
    require(dt > 0.0, "dynamics.dt must be positive");
    require(steps_per_cycle >= 1, "dynamics.steps_per_cycle must be at least 1");
    require(model_noise_std >= 0.0, "dynamics.model_noise_std must be nonnegative");
}

State3 l63_deriv(const State3& s, const Lorenz63Config& cfg)
{
    return {cfg.sigma * (s[1] - s[0]), s[0] * (cfg.rho - s[2]) - s[1], s[0] * s[1] - cfg.beta * s[2]};
}

State3 integrate(const State3& state, const Lorenz63Config& cfg)
{
    State3 s = state;
    const double h = cfg.dt;
    for (int i = 0; i < cfg.steps_per_cycle; ++i) {
        const State3 k1 = l63_deriv(s, cfg);
        const State3 k2 = l63_deriv(s + 0.5 * h * k1, cfg);
        const State3 k3 = l63_deriv(s + 0.5 * h * k2, cfg);
        const State3 k4 = l63_deriv(s + h * k3, cfg);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!s.allFinite()) {
            throw NumericalError("Lorenz-63 integration blew up");
        }
    }
    return s;
}

State3 propagate(const State3& state, const Lorenz63Config& cfg, Rng& rng)
{
    if (!state.allFinite()) {
        throw NumericalError("propagate: non-finite input state");
    }
    State3 s = integrate(state, cfg);
    if (cfg.model_noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.model_noise_std);
        for (int k = 0; k < 3; ++k) {
            s[k] += noise(rng);
        }
    }
    return s;
}

}  // namespace steinflow
