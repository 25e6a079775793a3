#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "steinflow/config.hpp"
#include "steinflow/diagnostics.hpp"
#include "steinflow/filters.hpp"
#include "steinflow/mapping.hpp"

namespace steinflow {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Everything a static run produces, before it is written to disk.
struct StaticRun {
    Vector y;
    ParticleMatrix initial;
    MappingResult result;
    std::vector<std::pair<int, ParticleMatrix>> trajectory;  // (iteration, states), including the final ensemble
    bool contained = true;  // every iterate inside the uniform prior's box (always true for Gaussian priors)
    DensityEstimate kde;    // first state component, on the analytic grid
    std::vector<double> analytic;  // normalized posterior on kde.grid; empty for multi-dimensional states
    ModeSummary modes;
    ModeSummary analytic_modes;
    double positive_fraction = 0.0;  // share of particles with x_0 > 0
};

/// Observation used by a static run: cfg.y when set, otherwise H(truth) plus
/// noise drawn from truth_seed.
Vector static_observation(const ExperimentConfig& cfg);

/// Number of points of the analytic-posterior quadrature grid.
constexpr std::size_t kAnalyticGridPoints = 4096;

/// Grid spanning prior mean +/- 8 standard deviations (Gaussian) or the
/// domain (uniform), first component.
std::vector<double> analytic_grid(const PriorSpec& prior);

/// Normalized 1-D posterior prior(x) * likelihood(y | x) on `grid` (trapezoid rule).
std::vector<double> analytic_posterior(const PriorSpec& prior, const ObservationModel& model, const VectorRef& y,
                                       const std::vector<double>& grid);

StaticRun run_static(const ExperimentConfig& cfg);

/// trajectories.csv, gradients.csv, posterior_kde.csv and summary.json.
void write_static(const ExperimentConfig& cfg, const StaticRun& run);

struct L63Run {
    CycleRecords records;
    int flagged_cycle = 0;  // 0 when the truth never changes lobe
    std::map<int, std::array<DensityEstimate, 3>> marginals;  // cycle -> per-variable KDE
    std::map<int, std::array<ModeSummary, 3>> modes;
};

/// Cycles whose marginal KDEs are reported: cfg.kde_cycles (or the last
/// cycle) plus the flagged post-transition cycle.
std::vector<int> kde_cycles(const ExperimentConfig& cfg, int flagged_cycle);

/// Gaussian KDE of one ensemble component on a grid covering the samples
/// +/- 4 bandwidths.
DensityEstimate marginal_kde(const ParticleMatrix& states, Eigen::Index k, const KdeBandwidth& bandwidth,
                             double mapping_gamma, std::size_t points);

L63Run run_l63(const ExperimentConfig& cfg);

/// cycles.csv, ensembles.csv, marginal_kde.csv and summary.json.
void write_l63(const ExperimentConfig& cfg, const L63Run& run);

nlohmann::json static_summary(const ExperimentConfig& cfg, const StaticRun& run);
nlohmann::json l63_summary(const ExperimentConfig& cfg, const L63Run& run);

}  // namespace steinflow
