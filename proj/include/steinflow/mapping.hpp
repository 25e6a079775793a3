#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "steinflow/kernel.hpp"
#include "steinflow/models.hpp"
#include "steinflow/types.hpp"

namespace steinflow {

struct MappingConfig {
    double learning_rate = 0.03;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double adam_epsilon = 1e-8;
    /// Absolute threshold on the mean per-particle norm of the KL gradient.
    double grad_tol = 1e-2;
    int max_iters = 200;
    /// Kernel of the Stein flow; TraceFraction is re-resolved every iteration.
    KernelConfig kernel;
    /// Bandwidth for the RKHS embedding of H. Unset means "same as `kernel`".
    std::optional<BandwidthPolicy> obs_bandwidth;

    void validate() const;
};

struct Ensemble {
    ParticleMatrix states;  // N_p x N_x
    std::uint64_t rng_seed = 0;

    Eigen::Index n_particles() const { return states.rows(); }
    Eigen::Index dim() const { return states.cols(); }
};

struct MappingDiagnostics {
    int iterations_run = 0;
    std::vector<double> grad_norm_history;
    bool converged = false;
    /// Stein-kernel bandwidth used at the last iteration.
    double final_gamma = 0.0;
};

struct MappingResult {
    Ensemble ensemble;
    MappingDiagnostics diagnostics;
};

/// Monte Carlo KL gradient at every particle:
/// row j = -(1/N_p) sum_l [K(x^l, x^j) s_l + kernel_grad(x^l, x^j)],
/// with s_l the log-posterior gradient at particle l. The flow velocity is
/// the negated result. Parallel over j.
ParticleMatrix kl_gradient(const Gram& gram, const ParticleMatrix& log_post_grads);
ParticleMatrix kl_gradient(const ParticleMatrix& states, const ParticleMatrix& log_post_grads,
                           const KernelConfig& cfg);

/// Mean over rows of the Euclidean row norm.
double mean_row_norm(const ParticleMatrix& m);

/// First/second moment accumulators of ADAM.
struct AdamState {
    ParticleMatrix first;
    ParticleMatrix second;
    int iteration = 0;  // number of steps already taken

    static AdamState zeros(Eigen::Index rows, Eigen::Index cols);
};

/// One bias-corrected ADAM step descending `grads`; returns the displacement
/// -lr * m_hat / (sqrt(v_hat) + eps) and advances `state`.
ParticleMatrix adam_step(const ParticleMatrix& grads, AdamState& state, const MappingConfig& cfg);

/// Componentwise mirror folding of `x` into [lower, upper].
Vector reflect(const VectorRef& x, const VectorRef& lower, const VectorRef& upper);

/// Called with the pseudo-time index (0 = input ensemble) and the states
/// before that iteration's update.
using IterationObserver = std::function<void(int iteration, const ParticleMatrix& states)>;

/// Runs the Stein flow from `ensemble` towards p(x | y) until the mean
/// KL-gradient norm drops below `cfg.grad_tol` or `cfg.max_iters` is hit.
/// All particles move synchronously; uniform priors reflect particles at the
/// walls after each step. Non-convergence is reported in the diagnostics.
MappingResult map_to_posterior(Ensemble ensemble, const PriorSpec& prior, const ObservationModel& obs_model,
                               const VectorRef& y, const MappingConfig& cfg,
                               const IterationObserver& observer = {});

/// Log-posterior gradient rows for an ensemble; exposed for diagnostics.
ParticleMatrix log_posterior_gradients(const ParticleMatrix& states, const PriorSpec& prior,
                                       const ObservationModel& obs_model, const VectorRef& y,
                                       const MappingConfig& cfg, const Gram& stein_gram);

}  // namespace steinflow
