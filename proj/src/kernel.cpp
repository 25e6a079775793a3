#include "steinflow/kernel.hpp"

#include <cmath>
#include <string>

#include "steinflow/diagnostics.hpp"

namespace steinflow {

void BandwidthPolicy::validate() const
{
    if (kind == Kind::Fixed) {
        require(std::isfinite(value) && value > 0.0, "fixed bandwidth must be positive");
    } else {
        require(value > 0.0 && value < 1.0, "trace fraction must lie in (0, 1)");
    }
}

void KernelConfig::validate() const
{
    require(std::isfinite(gamma) && gamma > 0.0, "kernel bandwidth gamma must be positive");
    policy.validate();
}

KernelConfig KernelConfig::resolved(const ParticleMatrix& states) const
{
    KernelConfig out = *this;
    out.gamma = select_bandwidth(states, policy);
    return out;
}

double kernel_eval(const VectorRef& x, const VectorRef& x_prime, const KernelConfig& cfg)
{
    require(x.size() == x_prime.size(), "kernel_eval: dimension mismatch");
    const double inv_g2 = 1.0 / (cfg.gamma * cfg.gamma);
    return std::exp(-0.5 * detail::squared_distance(x.data(), x_prime.data(), x.size()) * inv_g2);
}

Vector kernel_grad(const VectorRef& x, const VectorRef& x_prime, const KernelConfig& cfg)
{
    require(x.size() == x_prime.size(), "kernel_grad: dimension mismatch");
    const double inv_g2 = 1.0 / (cfg.gamma * cfg.gamma);
    const double kv = std::exp(-0.5 * detail::squared_distance(x.data(), x_prime.data(), x.size()) * inv_g2);
    Vector out(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        out[k] = -(x[k] - x_prime[k]) * inv_g2 * kv;
    }
    return out;
}

double select_bandwidth(const ParticleMatrix& states, const BandwidthPolicy& policy)
{
    policy.validate();
    if (policy.kind == BandwidthPolicy::Kind::Fixed) {
        return policy.value;
    }
    require(states.rows() >= 2, "trace-fraction bandwidth needs at least two particles");
    const double trace = sample_covariance(states).trace();
    if (!(trace > 0.0)) {
        throw NumericalError("degenerate ensemble: zero sample covariance gives zero bandwidth");
    }
    return std::sqrt(policy.value * trace / static_cast<double>(states.cols()));
}

Gram::Gram(Eigen::Index n_particles, Eigen::Index dim)
    : values(n_particles, n_particles), n_(n_particles), dim_(dim),
      grads_(static_cast<std::size_t>(n_particles * n_particles * dim), 0.0)
{
}

Gram gram(const ParticleMatrix& states, const KernelConfig& cfg)
{
    const Eigen::Index n = states.rows();
    const Eigen::Index d = states.cols();
    require(n >= 1, "gram: empty ensemble");
    Gram out(n, d);
    const double inv_g2 = 1.0 / (cfg.gamma * cfg.gamma);

#pragma omp parallel for schedule(static)
    for (Eigen::Index l = 0; l < n; ++l) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double kv =
                std::exp(-0.5 * detail::squared_distance(states.row(l).data(), states.row(j).data(), d) * inv_g2);
            out.values(l, j) = kv;
            auto g = out.grad(l, j);
            for (Eigen::Index k = 0; k < d; ++k) {
                g[k] = -(states(l, k) - states(j, k)) * inv_g2 * kv;
            }
        }
    }
    return out;
}

}  // namespace steinflow
