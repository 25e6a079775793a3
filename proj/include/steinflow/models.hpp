#pragma once

#include <string>
#include <string_view>
#include <variant>

#include "steinflow/types.hpp"

namespace steinflow {

struct GaussianPrior {
    Vector mean;
    Matrix covariance;
    Matrix precision;  // covariance inverse, filled by make_gaussian_prior
};

/// Flat density on a box; particles are kept inside by wall reflection.
struct UniformPrior {
    Vector lower;
    Vector upper;
};

/// Equal-weight isotropic Gaussian mixture, used as a kernel-density
/// representation of a forecast ensemble.
struct KernelMixturePrior {
    ParticleMatrix centers;
    double bandwidth = 1.0;
};

using PriorSpec = std::variant<GaussianPrior, UniformPrior, KernelMixturePrior>;

PriorSpec make_gaussian_prior(Vector mean, Matrix covariance);
PriorSpec make_uniform_prior(Vector lower, Vector upper);
PriorSpec make_kernel_mixture_prior(ParticleMatrix centers, double bandwidth);

Eigen::Index prior_dim(const PriorSpec& prior);

/// iid draws from a Gaussian or uniform prior.
ParticleMatrix sample_prior(const PriorSpec& prior, Eigen::Index n_particles, Rng& rng);

Vector grad_log_prior(const PriorSpec& prior, const VectorRef& x);

/// Unnormalized log density; -inf outside a uniform box.
double log_prior(const PriorSpec& prior, const VectorRef& x);

enum class Backend { Exact, RKHS, RKHSNormalized, EnsembleSpace };

std::string_view backend_name(Backend backend);
/// Accepts the names produced by backend_name; throws InputError listing them otherwise.
Backend parse_backend(std::string_view name);

struct LinearOperator {
    Matrix matrix;
};
struct QuadraticOperator {};
struct AbsoluteOperator {};

using ObservationOperator = std::variant<LinearOperator, QuadraticOperator, AbsoluteOperator>;

/// Observation operator, Gaussian error covariance R, and the gradient
/// backend used for the likelihood term inside the mapping.
class ObservationModel {
public:
    ObservationModel(ObservationOperator op, Matrix noise_cov, Backend backend = Backend::Exact);

    const ObservationOperator& op() const { return op_; }
    const Matrix& noise_cov() const { return r_; }
    const Matrix& noise_precision() const { return r_inv_; }
    /// Lower Cholesky factor of R, for drawing observation noise.
    const Matrix& noise_chol() const { return r_chol_; }
    Backend backend() const { return backend_; }
    void set_backend(Backend backend) { backend_ = backend; }

    Eigen::Index obs_dim() const { return r_.rows(); }
    /// Throws InputError unless the operator accepts states of this dimension.
    void check_state_dim(Eigen::Index state_dim) const;

private:
    ObservationOperator op_;
    Matrix r_;
    Matrix r_inv_;
    Matrix r_chol_;
    Backend backend_;
};

Vector apply_operator(const ObservationModel& model, const VectorRef& x);

/// Analytic Jacobian (N_y x N_x). The absolute value uses sign(0) = 0.
Matrix exact_grad_operator(const ObservationModel& model, const VectorRef& x);

/// grad_H^T R^{-1} (y - H(x)) for any supplied Jacobian estimate.
Vector grad_log_likelihood(const ObservationModel& model, const Eigen::Ref<const Matrix>& grad_h,
                           const VectorRef& x, const VectorRef& y);

/// log N(y; H(x), R) up to the normalizing constant.
double log_likelihood(const ObservationModel& model, const VectorRef& x, const VectorRef& y);

}  // namespace steinflow
