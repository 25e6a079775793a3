#include "steinflow/models.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>

namespace steinflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool is_symmetric(const Matrix& m)
{
    return m.rows() == m.cols() && (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + m.cwiseAbs().maxCoeff());
}

Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* what)
{
    require(m.rows() > 0 && is_symmetric(m), std::string(what) + " must be a non-empty symmetric matrix");
    Eigen::LLT<Matrix> llt(m);
    require(llt.info() == Eigen::Success, std::string(what) + " must be positive definite");
    return llt;
}

constexpr std::array<std::pair<Backend, std::string_view>, 4> kBackendNames{{
    {Backend::Exact, "exact"},
    {Backend::RKHS, "rkhs"},
    {Backend::RKHSNormalized, "rkhs_normalized"},
    {Backend::EnsembleSpace, "ensemble"},
}};

}  // namespace

PriorSpec make_gaussian_prior(Vector mean, Matrix covariance)
{
    require(mean.size() == covariance.rows(), "gaussian prior: mean and covariance dimensions differ");
    const auto llt = checked_llt(covariance, "prior covariance");
    Matrix precision = llt.solve(Matrix::Identity(covariance.rows(), covariance.cols()));
    return GaussianPrior{std::move(mean), std::move(covariance), std::move(precision)};
}

PriorSpec make_uniform_prior(Vector lower, Vector upper)
{
    require(lower.size() > 0 && lower.size() == upper.size(), "uniform prior: bound dimensions differ");
    require((lower.array() < upper.array()).all(), "uniform prior: lower must be below upper componentwise");
    return UniformPrior{std::move(lower), std::move(upper)};
}

PriorSpec make_kernel_mixture_prior(ParticleMatrix centers, double bandwidth)
{
    require(centers.rows() >= 1 && centers.cols() >= 1, "kernel mixture prior: no centers");
    require(std::isfinite(bandwidth) && bandwidth > 0.0, "kernel mixture prior: bandwidth must be positive");
    return KernelMixturePrior{std::move(centers), bandwidth};
}

Eigen::Index prior_dim(const PriorSpec& prior)
{
    return std::visit(overloaded{
                          [](const GaussianPrior& p) { return p.mean.size(); },
                          [](const UniformPrior& p) { return p.lower.size(); },
                          [](const KernelMixturePrior& p) { return p.centers.cols(); },
                      },
                      prior);
}

ParticleMatrix sample_prior(const PriorSpec& prior, Eigen::Index n_particles, Rng& rng)
{
    require(n_particles >= 1, "sample_prior: need at least one particle");
    const Eigen::Index d = prior_dim(prior);
    ParticleMatrix out(n_particles, d);
    std::visit(overloaded{
                   [&](const GaussianPrior& p) {
                       const Matrix chol = Eigen::LLT<Matrix>(p.covariance).matrixL();
                       std::normal_distribution<double> normal(0.0, 1.0);
                       Vector z(d);
                       for (Eigen::Index i = 0; i < n_particles; ++i) {
                           for (Eigen::Index k = 0; k < d; ++k) {
                               z[k] = normal(rng);
                           }
                           out.row(i) = (p.mean + chol * z).transpose();
                       }
                   },
                   [&](const UniformPrior& p) {
                       std::uniform_real_distribution<double> unif(0.0, 1.0);
                       for (Eigen::Index i = 0; i < n_particles; ++i) {
                           for (Eigen::Index k = 0; k < d; ++k) {
                               out(i, k) = p.lower[k] + (p.upper[k] - p.lower[k]) * unif(rng);
                           }
                       }
                   },
                   [&](const KernelMixturePrior& p) {
                       std::normal_distribution<double> normal(0.0, 1.0);
                       std::uniform_int_distribution<Eigen::Index> pick(0, p.centers.rows() - 1);
                       for (Eigen::Index i = 0; i < n_particles; ++i) {
                           const Eigen::Index c = pick(rng);
                           for (Eigen::Index k = 0; k < d; ++k) {
                               out(i, k) = p.centers(c, k) + p.bandwidth * normal(rng);
                           }
                       }
                   },
               },
               prior);
    return out;
}

Vector grad_log_prior(const PriorSpec& prior, const VectorRef& x)
{
    require(x.size() == prior_dim(prior), "grad_log_prior: dimension mismatch");
    return std::visit(
        overloaded{
            [&](const GaussianPrior& p) -> Vector { return -(p.precision * (x - p.mean)); },
            [&](const UniformPrior& p) -> Vector {
                if (!((x.array() >= p.lower.array()).all() && (x.array() <= p.upper.array()).all())) {
                    throw InputError("grad_log_prior: state outside the uniform prior support");
                }
                return Vector::Zero(x.size());
            },
            [&](const KernelMixturePrior& p) -> Vector {
                // Responsibility-weighted pull towards each center, computed with a
                // max-shift so far-away queries do not underflow to 0/0.
                const double inv_h2 = 1.0 / (p.bandwidth * p.bandwidth);
                const Eigen::Index n = p.centers.rows();
                Vector logw(n);
                for (Eigen::Index j = 0; j < n; ++j) {
                    logw[j] = -0.5 * inv_h2 * (p.centers.row(j).transpose() - x).squaredNorm();
                }
                const double shift = logw.maxCoeff();
                Vector num = Vector::Zero(x.size());
                double den = 0.0;
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double w = std::exp(logw[j] - shift);
                    num += w * (p.centers.row(j).transpose() - x);
                    den += w;
                }
                return inv_h2 * num / den;
            },
        },
        prior);
}

double log_prior(const PriorSpec& prior, const VectorRef& x)
{
    require(x.size() == prior_dim(prior), "log_prior: dimension mismatch");
    return std::visit(overloaded{
                          [&](const GaussianPrior& p) {
                              const Vector d = x - p.mean;
                              return -0.5 * d.dot(p.precision * d);
                          },
                          [&](const UniformPrior& p) {
                              const bool inside =
                                  (x.array() >= p.lower.array()).all() && (x.array() <= p.upper.array()).all();
                              return inside ? 0.0 : -std::numeric_limits<double>::infinity();
                          },
                          [&](const KernelMixturePrior& p) {
                              const double inv_h2 = 1.0 / (p.bandwidth * p.bandwidth);
                              Vector logw(p.centers.rows());
                              for (Eigen::Index j = 0; j < p.centers.rows(); ++j) {
                                  logw[j] = -0.5 * inv_h2 * (p.centers.row(j).transpose() - x).squaredNorm();
                              }
                              const double shift = logw.maxCoeff();
                              return shift + std::log((logw.array() - shift).exp().sum());
                          },
                      },
                      prior);
}

std::string_view backend_name(Backend backend)
{
    for (const auto& [b, name] : kBackendNames) {
        if (b == backend) {
            return name;
        }
    }
    return "unknown";
}

Backend parse_backend(std::string_view name)
{
    std::string valid;
    for (const auto& [b, n] : kBackendNames) {
        if (n == name) {
            return b;
        }
        valid += valid.empty() ? "" : ", ";
        valid += n;
    }
    throw InputError("unknown backend '" + std::string(name) + "'; valid backends: " + valid);
}

ObservationModel::ObservationModel(ObservationOperator op, Matrix noise_cov, Backend backend)
    : op_(std::move(op)), r_(std::move(noise_cov)), backend_(backend)
{
    const auto llt = checked_llt(r_, "observation error covariance R");
    r_inv_ = llt.solve(Matrix::Identity(r_.rows(), r_.cols()));
    r_chol_ = llt.matrixL();
    if (const auto* lin = std::get_if<LinearOperator>(&op_)) {
        require(lin->matrix.rows() == r_.rows(), "linear operator rows must match the dimension of R");
        require(lin->matrix.cols() >= 1, "linear operator has no columns");
    }
}

void ObservationModel::check_state_dim(Eigen::Index state_dim) const
{
    if (const auto* lin = std::get_if<LinearOperator>(&op_)) {
        require(lin->matrix.cols() == state_dim, "linear operator columns do not match the state dimension");
    } else {
        require(state_dim == r_.rows(), "componentwise operator: state and observation dimensions differ");
    }
}

Vector apply_operator(const ObservationModel& model, const VectorRef& x)
{
    model.check_state_dim(x.size());
    return std::visit(overloaded{
                          [&](const LinearOperator& op) -> Vector { return op.matrix * x; },
                          [&](const QuadraticOperator&) -> Vector { return x.array().square().matrix(); },
                          [&](const AbsoluteOperator&) -> Vector { return x.array().abs().matrix(); },
                      },
                      model.op());
}

Matrix exact_grad_operator(const ObservationModel& model, const VectorRef& x)
{
    model.check_state_dim(x.size());
    return std::visit(overloaded{
                          [&](const LinearOperator& op) -> Matrix { return op.matrix; },
                          [&](const QuadraticOperator&) -> Matrix { return (2.0 * x).asDiagonal(); },
                          [&](const AbsoluteOperator&) -> Matrix {
                              Vector s(x.size());
                              for (Eigen::Index k = 0; k < x.size(); ++k) {
                                  s[k] = x[k] > 0.0 ? 1.0 : (x[k] < 0.0 ? -1.0 : 0.0);
                              }
                              return s.asDiagonal();
                          },
                      },
                      model.op());
}

Vector grad_log_likelihood(const ObservationModel& model, const Eigen::Ref<const Matrix>& grad_h,
                           const VectorRef& x, const VectorRef& y)
{
    require(y.size() == model.obs_dim(), "grad_log_likelihood: observation dimension mismatch");
    require(grad_h.rows() == model.obs_dim() && grad_h.cols() == x.size(),
            "grad_log_likelihood: operator gradient has the wrong shape");
    return grad_h.transpose() * (model.noise_precision() * (y - apply_operator(model, x)));
}

double log_likelihood(const ObservationModel& model, const VectorRef& x, const VectorRef& y)
{
    require(y.size() == model.obs_dim(), "log_likelihood: observation dimension mismatch");
    const Vector innovation = y - apply_operator(model, x);
    return -0.5 * innovation.dot(model.noise_precision() * innovation);
}

}  // namespace steinflow
