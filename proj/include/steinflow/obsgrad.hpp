#pragma once

#include "steinflow/kernel.hpp"
#include "steinflow/models.hpp"
#include "steinflow/types.hpp"

namespace steinflow {

/// Particles together with the operator evaluated at each of them.
struct EnsembleEvaluations {
    ParticleMatrix states;      // N_p x N_x
    ParticleMatrix obs_values;  // N_p x N_y

    Eigen::Index n_particles() const { return states.rows(); }
};

/// Evaluates H at every particle (parallel over particles).
EnsembleEvaluations evaluate_ensemble(const ObservationModel& model, const ParticleMatrix& states);

/// Kernel-embedded Jacobian estimate (1/N_p) sum_j H(x^j) kernel_grad(x, x^j)^T.
///
/// The estimate inherits the sampling density: away from the bulk of the
/// particles it shrinks towards zero.
Matrix rkhs_grad_H(const EnsembleEvaluations& evals, const VectorRef& x, const KernelConfig& cfg);

/// Jacobian of the Nadaraya-Watson embedding sum_j H(x^j) K(x, x^j) / sum_l K(x, x^l),
/// differentiated exactly (quotient rule).
Matrix rkhs_grad_H_normalized(const EnsembleEvaluations& evals, const VectorRef& x, const KernelConfig& cfg);

struct Perturbations {
    Matrix states;  // X: N_x x N_p
    Matrix obs;     // Y: N_y x N_p
};

/// Member-minus-mean columns scaled by 1/sqrt(N_p - 1).
Perturbations perturbation_matrices(const EnsembleEvaluations& evals);

constexpr double kDefaultPinvTol = 1e-10;

/// Ensemble-space tangent linear Y X^+, with X^+ the SVD pseudoinverse that
/// drops singular values below `relative_tol * sigma_max`. One matrix serves
/// every particle.
Matrix ensemble_tangent(const EnsembleEvaluations& evals, double relative_tol = kDefaultPinvTol);

/// Per-particle log-likelihood gradients (rows) for the model's backend.
/// RKHS backends reuse the supplied Gram of the same ensemble.
ParticleMatrix likelihood_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                    const VectorRef& y, const Gram& gram);

/// Per-particle Jacobian estimates for the model's backend, stacked as
/// N_p blocks of N_y x N_x. Used for diagnostics output.
std::vector<Matrix> operator_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                       const Gram& gram);

}  // namespace steinflow
