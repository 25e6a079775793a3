#include "steinflow/serial.hpp"

namespace steinflow::serial {

Gram gram(const ParticleMatrix& states, const KernelConfig& cfg)
{
    const Eigen::Index n = states.rows();
    require(n >= 1, "gram: empty ensemble");
    Gram out(n, states.cols());
    for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto xl = states.row(l).transpose();
            const auto xj = states.row(j).transpose();
            out.values(l, j) = kernel_eval(xl, xj, cfg);
            out.grad(l, j) = kernel_grad(xl, xj, cfg);
        }
    }
    return out;
}

ParticleMatrix kl_gradient(const ParticleMatrix& states, const ParticleMatrix& log_post_grads,
                           const KernelConfig& cfg)
{
    const Eigen::Index n = states.rows();
    const Eigen::Index d = states.cols();
    require(log_post_grads.rows() == n && log_post_grads.cols() == d, "kl_gradient: gradient shape mismatch");
    ParticleMatrix out(n, d);
    const double scale = -1.0 / static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto xj = states.row(j).transpose();
        for (Eigen::Index k = 0; k < d; ++k) {
            double acc = 0.0;
            for (Eigen::Index l = 0; l < n; ++l) {
                const auto xl = states.row(l).transpose();
                acc += kernel_eval(xl, xj, cfg) * log_post_grads(l, k) + kernel_grad(xl, xj, cfg)[k];
            }
            out(j, k) = scale * acc;
        }
    }
    return out;
}

EnsembleEvaluations evaluate_ensemble(const ObservationModel& model, const ParticleMatrix& states)
{
    EnsembleEvaluations out{states, ParticleMatrix(states.rows(), model.obs_dim())};
    for (Eigen::Index j = 0; j < states.rows(); ++j) {
        out.obs_values.row(j) = apply_operator(model, states.row(j).transpose()).transpose();
    }
    return out;
}

ParticleMatrix likelihood_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                    const VectorRef& y, const KernelConfig& cfg)
{
    const Eigen::Index n = evals.n_particles();
    ParticleMatrix out(n, evals.states.cols());
    Matrix tangent;
    if (model.backend() == Backend::EnsembleSpace) {
        tangent = ensemble_tangent(evals);
    }
    for (Eigen::Index l = 0; l < n; ++l) {
        const auto x = evals.states.row(l).transpose();
        Matrix grad_h;
        switch (model.backend()) {
        case Backend::Exact:
            grad_h = exact_grad_operator(model, x);
            break;
        case Backend::RKHS:
            grad_h = rkhs_grad_H(evals, x, cfg);
            break;
        case Backend::RKHSNormalized:
            grad_h = rkhs_grad_H_normalized(evals, x, cfg);
            break;
        case Backend::EnsembleSpace:
            grad_h = tangent;
            break;
        }
        const Vector innovation = y - evals.obs_values.row(l).transpose();
        out.row(l) = (grad_h.transpose() * (model.noise_precision() * innovation)).transpose();
    }
    return out;
}

}  // namespace steinflow::serial
