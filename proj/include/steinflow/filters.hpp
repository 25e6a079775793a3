#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "steinflow/dynamics.hpp"
#include "steinflow/mapping.hpp"
#include "steinflow/models.hpp"

namespace steinflow {

/// How VMPF represents the forecast density when it needs grad log p(x).
enum class ForecastPrior {
    Gaussian,       // mean/covariance fit of the forecast ensemble
    KernelDensity,  // equal-weight Gaussian mixture centred at the forecast particles
};

struct FilterSpec {
    enum class Kind { VMPF, SIR };
    Kind kind = Kind::VMPF;
    Backend backend = Backend::Exact;  // VMPF only

    static FilterSpec vmpf(Backend b) { return {Kind::VMPF, b}; }
    static FilterSpec sir() { return {Kind::SIR, Backend::Exact}; }
};

/// Label such as "vmpf-exact" or "sir".
std::string filter_label(const FilterSpec& spec);

/// Deterministic (noise-free) integration of (1, 1, 1) for `cycles` cycles,
/// used to start the truth on the attractor.
Vector spin_up(const Lorenz63Config& cfg, int cycles);

constexpr int kDefaultSpinUpCycles = 100;

struct SequentialExperiment {
    Lorenz63Config dynamics;
    ObservationModel obs_model{AbsoluteOperator{}, 0.5 * Matrix::Identity(3, 3)};
    int n_cycles = 500;
    int n_particles = 100;
    /// Initial sample distribution; unset means N(truth_initial, I).
    std::optional<PriorSpec> initial_prior;
    Vector truth_initial = spin_up(Lorenz63Config{}, kDefaultSpinUpCycles);
    std::uint64_t truth_seed = 1;
    std::uint64_t filter_seed = 2;
    MappingConfig mapping;
    ForecastPrior forecast_prior = ForecastPrior::Gaussian;
    /// Added to the diagonal of the fitted forecast covariance.
    double covariance_regularization = 1e-6;

    void validate() const;
    PriorSpec resolved_initial_prior() const;
};

/// Generic one-particle transition.
using Propagator = std::function<Vector(const VectorRef&, Rng&)>;

Propagator lorenz63_propagator(const Lorenz63Config& cfg);

struct TruthRun {
    ParticleMatrix truth;         // n_cycles x N_x
    ParticleMatrix observations;  // n_cycles x N_y
};

/// Truth trajectory and noisy observations, a pure function of the config and
/// `truth_seed`.
TruthRun simulate_truth(const SequentialExperiment& exp);

/// Propagates every particle with its own stream derived from (seed, cycle, index).
Ensemble forecast(const Ensemble& ensemble, const Propagator& propagator, int cycle);

/// Gaussian or kernel-mixture description of a forecast ensemble.
PriorSpec forecast_density(const ParticleMatrix& forecast_states, const SequentialExperiment& exp);

/// Forecast followed, when `y` is present, by the Stein mapping towards
/// p(x | y) under the fitted forecast density.
MappingResult vmpf_cycle(const Ensemble& ensemble, const std::optional<Vector>& y, const SequentialExperiment& exp,
                         Backend backend, int cycle);

/// Weights normalized from log-weights with a max shift. If every weight is
/// non-finite the result is uniform and a warning is logged.
std::vector<double> normalize_log_weights(const std::vector<double>& log_weights);

/// Systematic resampling with offset `u` in [0, 1): returns the ancestor of
/// each new particle. Offspring counts lie in {floor(N w_j), ceil(N w_j)} up to
/// rounding when a stratum point lands exactly on a cumulative weight.
std::vector<Eigen::Index> systematic_resample(const std::vector<double>& weights, double u);

/// Likelihood weighting and systematic resampling of an already forecast ensemble.
Ensemble sir_update(const Ensemble& forecast_ensemble, const VectorRef& y, const ObservationModel& model,
                    int cycle);

/// SIR cycle with an arbitrary transition: forecast, weight, resample.
Ensemble sir_step(const Ensemble& ensemble, const VectorRef& y, const ObservationModel& model,
                  const Propagator& propagator, int cycle);

Ensemble sir_cycle(const Ensemble& ensemble, const VectorRef& y, const SequentialExperiment& exp, int cycle);

struct RunOptions {
    /// Store the ensemble every `snapshot_every` cycles (0 disables).
    int snapshot_every = 0;
    /// Cycles whose ensembles are always stored (1-based).
    std::vector<int> snapshot_cycles;
};

struct CycleRecords {
    FilterSpec filter;
    TruthRun truth;
    ParticleMatrix means;  // n_cycles x N_x, analysis ensemble means
    std::vector<double> rmse;
    std::vector<int> iterations;  // 0 for SIR
    std::vector<bool> converged;  // true for SIR
    std::map<int, ParticleMatrix> snapshots;  // cycle (1-based) -> analysis ensemble
    Ensemble final_ensemble;
};

/// Latest cycle (1-based) after the first sign change of the truth's x
/// component where |x| >= min_abs, i.e. a cycle where the absolute-value
/// observations cannot tell the two lobes apart. Returns 0 when the truth
/// never changes lobe.
int post_transition_cycle(const ParticleMatrix& truth, double min_abs = 4.0);

CycleRecords run_sequential(const SequentialExperiment& exp, const FilterSpec& filter,
                            const RunOptions& options = {});

}  // namespace steinflow
