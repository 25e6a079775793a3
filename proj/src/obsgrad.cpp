#include "steinflow/obsgrad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace steinflow {

namespace {

double inv_n(const EnsembleEvaluations& evals)
{
    return 1.0 / static_cast<double>(evals.n_particles());
}

void check_evals(const EnsembleEvaluations& evals, Eigen::Index query_dim)
{
    require(evals.n_particles() >= 1, "empty ensemble");
    require(evals.obs_values.rows() == evals.n_particles(), "states and observation rows differ");
    require(query_dim == evals.states.cols(), "query point dimension mismatch");
}

// Jacobian estimate at particle l from one Gram row. Sums run over j in
// index order so this matches the serial reference bit for bit.
Matrix rkhs_row(const EnsembleEvaluations& evals, const Gram& g, Eigen::Index l)
{
    const Eigen::Index n = evals.n_particles();
    Matrix acc = Matrix::Zero(evals.obs_values.cols(), evals.states.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
        acc.noalias() += evals.obs_values.row(j).transpose() * g.grad(l, j).transpose();
    }
    return acc * inv_n(evals);
}

Matrix rkhs_normalized_row(const EnsembleEvaluations& evals, const Gram& g, Eigen::Index l)
{
    const Eigen::Index n = evals.n_particles();
    const Eigen::Index ny = evals.obs_values.cols();
    const Eigen::Index nx = evals.states.cols();
    Matrix weighted_grads = Matrix::Zero(ny, nx);
    Vector weighted_obs = Vector::Zero(ny);
    Vector grad_sum = Vector::Zero(nx);
    double kernel_sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto kg = g.grad(l, j);
        weighted_grads.noalias() += evals.obs_values.row(j).transpose() * kg.transpose();
        weighted_obs += g.values(l, j) * evals.obs_values.row(j).transpose();
        grad_sum += kg;
        kernel_sum += g.values(l, j);
    }
    return weighted_grads / kernel_sum - weighted_obs * grad_sum.transpose() / (kernel_sum * kernel_sum);
}

}  // namespace

EnsembleEvaluations evaluate_ensemble(const ObservationModel& model, const ParticleMatrix& states)
{
    require(states.rows() >= 1, "evaluate_ensemble: empty ensemble");
    model.check_state_dim(states.cols());
    EnsembleEvaluations out{states, ParticleMatrix(states.rows(), model.obs_dim())};
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < states.rows(); ++j) {
        out.obs_values.row(j) = apply_operator(model, states.row(j).transpose()).transpose();
    }
    return out;
}

Matrix rkhs_grad_H(const EnsembleEvaluations& evals, const VectorRef& x, const KernelConfig& cfg)
{
    check_evals(evals, x.size());
    Matrix acc = Matrix::Zero(evals.obs_values.cols(), x.size());
    for (Eigen::Index j = 0; j < evals.n_particles(); ++j) {
        acc.noalias() += evals.obs_values.row(j).transpose() * kernel_grad(x, evals.states.row(j).transpose(), cfg).transpose();
    }
    return acc * inv_n(evals);
}

Matrix rkhs_grad_H_normalized(const EnsembleEvaluations& evals, const VectorRef& x, const KernelConfig& cfg)
{
    check_evals(evals, x.size());
    const Eigen::Index ny = evals.obs_values.cols();
    Matrix weighted_grads = Matrix::Zero(ny, x.size());
    Vector weighted_obs = Vector::Zero(ny);
    Vector grad_sum = Vector::Zero(x.size());
    double kernel_sum = 0.0;
    for (Eigen::Index j = 0; j < evals.n_particles(); ++j) {
        const auto xj = evals.states.row(j).transpose();
        const double kv = kernel_eval(x, xj, cfg);
        const Vector kg = kernel_grad(x, xj, cfg);
        weighted_grads.noalias() += evals.obs_values.row(j).transpose() * kg.transpose();
        weighted_obs += kv * evals.obs_values.row(j).transpose();
        grad_sum += kg;
        kernel_sum += kv;
    }
    if (!(kernel_sum > 0.0)) {
        throw NumericalError("rkhs_grad_H_normalized: kernel weights underflow at the query point");
    }
    return weighted_grads / kernel_sum - weighted_obs * grad_sum.transpose() / (kernel_sum * kernel_sum);
}

Perturbations perturbation_matrices(const EnsembleEvaluations& evals)
{
    const Eigen::Index n = evals.n_particles();
    require(n >= 2, "perturbation_matrices: need at least two particles");
    require(evals.obs_values.rows() == n, "states and observation rows differ");
    const double scale = 1.0 / std::sqrt(static_cast<double>(n - 1));
    const Eigen::RowVectorXd state_mean = evals.states.colwise().mean();
    const Eigen::RowVectorXd obs_mean = evals.obs_values.colwise().mean();
    Perturbations out;
    out.states = ((evals.states.rowwise() - state_mean) * scale).transpose();
    out.obs = ((evals.obs_values.rowwise() - obs_mean) * scale).transpose();
    return out;
}

Matrix ensemble_tangent(const EnsembleEvaluations& evals, double relative_tol)
{
    const Perturbations p = perturbation_matrices(evals);
    const Eigen::JacobiSVD<Matrix> svd(p.states, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double cutoff = relative_tol * (sv.size() > 0 ? sv[0] : 0.0);
    // Identical members can leave rounding-level perturbations from the mean;
    // treat anything at that level as no spread at all.
    const double magnitude = std::max(1.0, evals.states.cwiseAbs().maxCoeff());
    const double floor = 16.0 * std::numeric_limits<double>::epsilon() * magnitude;
    if (sv.size() == 0 || !(sv[0] > floor)) {
        throw NumericalError("ensemble_tangent: degenerate ensemble, all perturbations vanish");
    }
    // X^+ = V diag(1/s) U^T restricted to the retained singular values.
    Vector inv_sv = Vector::Zero(sv.size());
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
        if (sv[k] > cutoff) {
            inv_sv[k] = 1.0 / sv[k];
        }
    }
    const Matrix pinv = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
    return p.obs * pinv;
}

std::vector<Matrix> operator_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                       const Gram& gram)
{
    const Eigen::Index n = evals.n_particles();
    std::vector<Matrix> out(static_cast<std::size_t>(n));
    if (model.backend() == Backend::EnsembleSpace) {
        const Matrix tangent = ensemble_tangent(evals);
        for (auto& m : out) {
            m = tangent;
        }
        return out;
    }
    if (model.backend() != Backend::Exact) {
        require(gram.n_particles() == n && gram.dim() == evals.states.cols(), "Gram does not match the ensemble");
    }
#pragma omp parallel for schedule(static)
    for (Eigen::Index l = 0; l < n; ++l) {
        auto& dst = out[static_cast<std::size_t>(l)];
        switch (model.backend()) {
        case Backend::Exact:
            dst = exact_grad_operator(model, evals.states.row(l).transpose());
            break;
        case Backend::RKHS:
            dst = rkhs_row(evals, gram, l);
            break;
        case Backend::RKHSNormalized:
            dst = rkhs_normalized_row(evals, gram, l);
            break;
        case Backend::EnsembleSpace:
            break;
        }
    }
    return out;
}

ParticleMatrix likelihood_gradients(const ObservationModel& model, const EnsembleEvaluations& evals,
                                    const VectorRef& y, const Gram& gram)
{
    require(y.size() == model.obs_dim(), "likelihood_gradients: observation dimension mismatch");
    const Eigen::Index n = evals.n_particles();
    const Eigen::Index nx = evals.states.cols();
    ParticleMatrix out(n, nx);
    const std::vector<Matrix> grads = operator_gradients(model, evals, gram);
#pragma omp parallel for schedule(static)
    for (Eigen::Index l = 0; l < n; ++l) {
        const Vector innovation = y - evals.obs_values.row(l).transpose();
        out.row(l) = (grads[static_cast<std::size_t>(l)].transpose() * (model.noise_precision() * innovation)).transpose();
    }
    return out;
}

}  // namespace steinflow
