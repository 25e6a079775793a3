#pragma once

// Single-threaded reference versions of the parallel kernels. They are built
// from the pairwise primitives (kernel_eval, kernel_grad, rkhs_grad_H) and
// sum in the same order as the OpenMP paths, so results agree bit for bit.

#include "steinflow/kernel.hpp"
#include "steinflow/mapping.hpp"
#include "steinflow/models.hpp"
#include "steinflow/obsgrad.hpp"

namespace steinflow::serial {

Gram gram(const ParticleMatrix& states, const KernelConfig& cfg);

ParticleMatrix kl_gradient(const ParticleMatrix& states, const ParticleMatrix& log_post_grads,
                           const KernelConfig& cfg);

EnsembleEvaluations evaluate_ensemble(const ObservationModel& model, const ParticleMatrix& states);

ParticleMatrix likelihood_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                    const VectorRef& y, const KernelConfig& cfg);

}  // namespace steinflow::serial
