#pragma once

#include <optional>
#include <vector>

#include "steinflow/types.hpp"

namespace steinflow {

struct DensityEstimate {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

/// 1.06 * sd * N^(-1/5). Throws NumericalError for zero sample variance.
double silverman_bandwidth(const std::vector<double>& samples);

/// Gaussian KDE on `grid`. An empty bandwidth selects Silverman's rule.
DensityEstimate kde_1d(const std::vector<double>& samples, const std::vector<double>& grid,
                       std::optional<double> bandwidth = std::nullopt);

/// `n` equispaced points from `lo` to `hi` inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t n);

/// Trapezoidal rule on a (possibly non-uniform) grid.
double trapezoid(const std::vector<double>& grid, const std::vector<double>& values);

struct ModeSummary {
    int count = 0;
    std::vector<double> locations;  // ascending
};

constexpr double kDefaultProminence = 0.2;

/// Counts grid maxima that reach `prominence * max` and are separated from
/// every neighbouring kept peak by a valley below (1 - prominence) times the
/// lower of the two peak heights. Shallower neighbours are merged into the
/// higher one.
ModeSummary count_modes(const DensityEstimate& estimate, double prominence = kDefaultProminence);

Vector sample_mean(const ParticleMatrix& states);

/// Unbiased (N - 1) sample covariance; needs at least two rows.
Matrix sample_covariance(const ParticleMatrix& states);

/// |mean - reference| / sqrt(N_x).
double rmse(const VectorRef& mean, const VectorRef& reference);

struct EnsembleStats {
    Vector mean;
    Matrix covariance;

    double rmse_vs(const VectorRef& reference) const { return rmse(mean, reference); }
};

EnsembleStats ensemble_stats(const ParticleMatrix& states);

/// Column `k` of an ensemble as a plain vector.
std::vector<double> marginal(const ParticleMatrix& states, Eigen::Index k);

}  // namespace steinflow
