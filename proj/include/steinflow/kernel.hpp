#pragma once

#include <vector>

#include "steinflow/types.hpp"

namespace steinflow {

namespace detail {

// Plain loop so the pairwise, Gram and reference paths all sum in the same order.
inline double squared_distance(const double* a, const double* b, Eigen::Index d)
{
    double sq = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = a[k] - b[k];
        sq += diff * diff;
    }
    return sq;
}

}  // namespace detail

/// How the RBF bandwidth is chosen for an ensemble.
struct BandwidthPolicy {
    enum class Kind { Fixed, TraceFraction };

    Kind kind = Kind::TraceFraction;
    /// gamma for Fixed, the fraction c for TraceFraction.
    double value = 0.5;

    static BandwidthPolicy fixed(double gamma) { return {Kind::Fixed, gamma}; }
    static BandwidthPolicy trace_fraction(double c) { return {Kind::TraceFraction, c}; }

    void validate() const;
};

/// Isotropic Gaussian RBF kernel K(a, b) = exp(-|a - b|^2 / (2 gamma^2)).
struct KernelConfig {
    double gamma = 1.0;
    BandwidthPolicy policy = BandwidthPolicy::trace_fraction(0.5);

    void validate() const;

    /// Copy with gamma realized from `policy` for the given ensemble.
    KernelConfig resolved(const ParticleMatrix& states) const;
};

double kernel_eval(const VectorRef& x, const VectorRef& x_prime, const KernelConfig& cfg);

/// Gradient of K(x, x') with respect to `x`: -(x - x') / gamma^2 * K(x, x').
Vector kernel_grad(const VectorRef& x, const VectorRef& x_prime, const KernelConfig& cfg);

/// Bandwidth from a policy. TraceFraction(c) gives sqrt(c * tr(S) / N_x) with S
/// the unbiased sample covariance; it throws NumericalError for a degenerate
/// ensemble and InputError for fewer than two particles.
double select_bandwidth(const ParticleMatrix& states, const BandwidthPolicy& policy);

/// Gram matrix plus the pairwise kernel-gradient tensor of an ensemble.
///
/// `values(l, j) = K(x^l, x^j)` and `grad(l, j) = kernel_grad(x^l, x^j)`,
/// i.e. the gradient with respect to the first particle. Summing
/// `grad(l, j)` over `l` gives the Stein repulsion acting on particle `j`.
class Gram {
public:
    Gram() = default;
    Gram(Eigen::Index n_particles, Eigen::Index dim);

    Eigen::Index n_particles() const { return n_; }
    Eigen::Index dim() const { return dim_; }

    Matrix values;

    Eigen::Map<const Vector> grad(Eigen::Index l, Eigen::Index j) const
    {
        return Eigen::Map<const Vector>(grads_.data() + offset(l, j), dim_);
    }
    Eigen::Map<Vector> grad(Eigen::Index l, Eigen::Index j)
    {
        return Eigen::Map<Vector>(grads_.data() + offset(l, j), dim_);
    }

private:
    std::size_t offset(Eigen::Index l, Eigen::Index j) const
    {
        return static_cast<std::size_t>((l * n_ + j) * dim_);
    }

    Eigen::Index n_ = 0;
    Eigen::Index dim_ = 0;
    std::vector<double> grads_;
};

/// OpenMP-parallel over rows; bit-identical to `serial::gram`.
Gram gram(const ParticleMatrix& states, const KernelConfig& cfg);

}  // namespace steinflow
