#include "steinflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace steinflow {

double silverman_bandwidth(const std::vector<double>& samples)
{
    require(samples.size() >= 2, "silverman_bandwidth: need at least two samples");
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double s : samples) {
        mean += s;
    }
    mean /= n;
    double ss = 0.0;
    for (double s : samples) {
        ss += (s - mean) * (s - mean);
    }
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) {
        throw NumericalError("silverman_bandwidth: zero sample variance");
    }
    return 1.06 * sd * std::pow(n, -0.2);
}

DensityEstimate kde_1d(const std::vector<double>& samples, const std::vector<double>& grid,
                       std::optional<double> bandwidth)
{
    require(samples.size() >= 2 || (bandwidth && !samples.empty()), "kde_1d: need at least two samples");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        require(grid[i] > grid[i - 1], "kde_1d: grid must be strictly increasing");
    }
    const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
    require(std::isfinite(h) && h > 0.0, "kde_1d: bandwidth must be positive");

    DensityEstimate out{grid, std::vector<double>(grid.size(), 0.0), h};
    const double norm = 1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));
#pragma omp parallel for schedule(static)
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (double s : samples) {
            const double z = (grid[g] - s) / h;
            acc += std::exp(-0.5 * z * z);
        }
        out.density[g] = norm * acc;
    }
    return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n)
{
    require(n >= 2 && hi > lo, "linspace: need n >= 2 and hi > lo");
    std::vector<double> out(n);
    const double step = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = lo + step * static_cast<double>(i);
    }
    out.back() = hi;
    return out;
}

double trapezoid(const std::vector<double>& grid, const std::vector<double>& values)
{
    require(grid.size() == values.size(), "trapezoid: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    return acc;
}

namespace {

struct Peak {
    std::size_t first;  // plateau start
    std::size_t last;   // plateau end (inclusive)
    double height;
};

}  // namespace

ModeSummary count_modes(const DensityEstimate& estimate, double prominence)
{
    require(prominence > 0.0 && prominence < 1.0, "count_modes: prominence must lie in (0, 1)");
    const auto& d = estimate.density;
    require(d.size() == estimate.grid.size(), "count_modes: grid and density sizes differ");
    ModeSummary out;
    if (d.empty()) {
        return out;
    }
    const double global_max = *std::max_element(d.begin(), d.end());
    if (!(global_max > 0.0)) {
        return out;
    }

    // Plateau-aware local maxima; the grid ends count as lower neighbours.
    std::vector<Peak> peaks;
    std::size_t i = 0;
    while (i < d.size()) {
        std::size_t j = i;
        while (j + 1 < d.size() && d[j + 1] == d[i]) {
            ++j;
        }
        const bool left_lower = i == 0 || d[i - 1] < d[i];
        const bool right_lower = j + 1 == d.size() || d[j + 1] < d[i];
        if (left_lower && right_lower && d[i] >= prominence * global_max) {
            peaks.push_back({i, j, d[i]});
        }
        i = j + 1;
    }

    bool merged = true;
    while (merged && peaks.size() > 1) {
        merged = false;
        for (std::size_t p = 0; p + 1 < peaks.size(); ++p) {
            const Peak& a = peaks[p];
            const Peak& b = peaks[p + 1];
            const double valley = *std::min_element(d.begin() + static_cast<std::ptrdiff_t>(a.last),
                                                    d.begin() + static_cast<std::ptrdiff_t>(b.first) + 1);
            if (valley >= (1.0 - prominence) * std::min(a.height, b.height)) {
                peaks.erase(peaks.begin() + static_cast<std::ptrdiff_t>(a.height >= b.height ? p + 1 : p));
                merged = true;
                break;
            }
        }
    }

    out.count = static_cast<int>(peaks.size());
    for (const Peak& p : peaks) {
        out.locations.push_back(0.5 * (estimate.grid[p.first] + estimate.grid[p.last]));
    }
    return out;
}

Vector sample_mean(const ParticleMatrix& states)
{
    require(states.rows() >= 1, "sample_mean: empty ensemble");
    return states.colwise().mean().transpose();
}

Matrix sample_covariance(const ParticleMatrix& states)
{
    require(states.rows() >= 2, "sample_covariance: need at least two particles");
    const Eigen::RowVectorXd mean = states.colwise().mean();
    const Matrix centered = states.rowwise() - mean;
    return centered.transpose() * centered / static_cast<double>(states.rows() - 1);
}

double rmse(const VectorRef& mean, const VectorRef& reference)
{
    require(mean.size() == reference.size() && mean.size() > 0, "rmse: dimension mismatch");
    return (mean - reference).norm() / std::sqrt(static_cast<double>(mean.size()));
}

EnsembleStats ensemble_stats(const ParticleMatrix& states)
{
    return {sample_mean(states), sample_covariance(states)};
}

std::vector<double> marginal(const ParticleMatrix& states, Eigen::Index k)
{
    require(k >= 0 && k < states.cols(), "marginal: component out of range");
    std::vector<double> out(static_cast<std::size_t>(states.rows()));
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
        out[static_cast<std::size_t>(i)] = states(i, k);
    }
    return out;
}

}  // namespace steinflow
