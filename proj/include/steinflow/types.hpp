#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace steinflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Particle storage: one particle per row, contiguous, so `row(l).transpose()`
/// binds to a `VectorRef` without a copy.
using ParticleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorRef = Eigen::Ref<const Vector>;

using Rng = std::mt19937_64;

/// Raised for malformed arguments: dimension mismatches, invalid parameters.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot proceed (non-finite state, degenerate ensemble).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message)
{
    if (!condition) {
        throw InputError(message);
    }
}

/// Deterministic 64-bit mixer (splitmix64 finalizer) used to derive
/// independent stream seeds from (seed, cycle, index) tuples.
constexpr std::uint64_t mix_seed(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
{
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

}  // namespace steinflow
