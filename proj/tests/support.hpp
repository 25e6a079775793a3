#pragma once

#include <functional>
#include <random>

#include "steinflow/types.hpp"

namespace testing {

using steinflow::Matrix;
using steinflow::ParticleMatrix;
using steinflow::Vector;

inline ParticleMatrix random_states(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    ParticleMatrix out(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) {
            out(i, k) = normal(rng);
        }
    }
    return out;
}

inline Vector random_vector(Eigen::Index d, std::mt19937_64& rng, double lo = -3.0, double hi = 3.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Vector v(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        v[k] = u(rng);
    }
    return v;
}

/// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5)
{
    Vector g(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vector a = x;
        Vector b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Central-difference Jacobian of a vector function.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-5)
{
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        Vector a = x;
        Vector b = x;
        a[k] += h;
        b[k] -= h;
        jac.col(k) = (f(a) - f(b)) / (2.0 * h);
    }
    return jac;
}

inline double relative_error(const Vector& a, const Vector& b)
{
    return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing
