#include "steinflow/filters.hpp"

#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <string>

#include "steinflow/diagnostics.hpp"

namespace steinflow {

namespace {

// Stream tags keep the truth, observation-noise, per-particle and resampling
// generators disjoint for the same seed.
constexpr std::uint64_t kTruthStream = 0x7472757468ULL;
constexpr std::uint64_t kObsStream = 0x6f6273ULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;
constexpr std::uint64_t kResampleStream = 0x7265736d706cULL;

}  // namespace

std::string filter_label(const FilterSpec& spec)
{
    if (spec.kind == FilterSpec::Kind::SIR) {
        return "sir";
    }
    return "vmpf-" + std::string(backend_name(spec.backend));
}

void SequentialExperiment::validate() const
{
    dynamics.validate();
    mapping.validate();
    require(n_cycles >= 1, "n_cycles must be at least 1");
    require(n_particles >= 2, "n_particles must be at least 2");
    require(truth_initial.size() == 3 && truth_initial.allFinite(), "truth_initial must be a finite 3-vector");
    obs_model.check_state_dim(3);
    require(covariance_regularization >= 0.0, "covariance_regularization must be nonnegative");
    if (initial_prior) {
        require(prior_dim(*initial_prior) == 3, "initial prior must be three-dimensional");
    }
}

PriorSpec SequentialExperiment::resolved_initial_prior() const
{
    if (initial_prior) {
        return *initial_prior;
    }
    return make_gaussian_prior(truth_initial, Matrix::Identity(3, 3));
}

Vector spin_up(const Lorenz63Config& cfg, int cycles)
{
    State3 s(1.0, 1.0, 1.0);
    for (int c = 0; c < cycles; ++c) {
        s = integrate(s, cfg);
    }
    return s;
}

Propagator lorenz63_propagator(const Lorenz63Config& cfg)
{
    return [cfg](const VectorRef& x, Rng& rng) -> Vector {
        require(x.size() == 3, "Lorenz-63 state must have three components");
        return propagate(State3(x[0], x[1], x[2]), cfg, rng);
    };
}

TruthRun simulate_truth(const SequentialExperiment& exp)
{
    exp.validate();
    const Propagator step = lorenz63_propagator(exp.dynamics);
    Rng truth_rng(stream_seed(exp.truth_seed, kTruthStream));
    Rng obs_rng(stream_seed(exp.truth_seed, kObsStream));
    std::normal_distribution<double> normal(0.0, 1.0);

    const Eigen::Index ny = exp.obs_model.obs_dim();
    TruthRun out{ParticleMatrix(exp.n_cycles, 3), ParticleMatrix(exp.n_cycles, ny)};
    Vector state = exp.truth_initial;
    Vector z(ny);
    for (int c = 0; c < exp.n_cycles; ++c) {
        state = step(state, truth_rng);
        for (Eigen::Index k = 0; k < ny; ++k) {
            z[k] = normal(obs_rng);
        }
        out.truth.row(c) = state.transpose();
        out.observations.row(c) = (apply_operator(exp.obs_model, state) + exp.obs_model.noise_chol() * z).transpose();
    }
    return out;
}

Ensemble forecast(const Ensemble& ensemble, const Propagator& propagator, int cycle)
{
    Ensemble out{ParticleMatrix(ensemble.n_particles(), ensemble.dim()), ensemble.rng_seed};
    const auto c = static_cast<std::uint64_t>(cycle);
    std::exception_ptr failure;
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < ensemble.n_particles(); ++j) {
        try {
            Rng rng(stream_seed(ensemble.rng_seed, c, static_cast<std::uint64_t>(j)));
            out.states.row(j) = propagator(ensemble.states.row(j).transpose(), rng).transpose();
        } catch (...) {
#pragma omp critical(steinflow_forecast_failure)
            failure = std::current_exception();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

PriorSpec forecast_density(const ParticleMatrix& forecast_states, const SequentialExperiment& exp)
{
    if (exp.forecast_prior == ForecastPrior::KernelDensity) {
        return make_kernel_mixture_prior(forecast_states, select_bandwidth(forecast_states, exp.mapping.kernel.policy));
    }
    const Eigen::Index d = forecast_states.cols();
    Matrix cov = sample_covariance(forecast_states);
    cov += exp.covariance_regularization * Matrix::Identity(d, d);
    return make_gaussian_prior(sample_mean(forecast_states), cov);
}

MappingResult vmpf_cycle(const Ensemble& ensemble, const std::optional<Vector>& y, const SequentialExperiment& exp,
                         Backend backend, int cycle)
{
    Ensemble fc = forecast(ensemble, lorenz63_propagator(exp.dynamics), cycle);
    if (!y) {
        return {std::move(fc), MappingDiagnostics{}};
    }
    ObservationModel model = exp.obs_model;
    model.set_backend(backend);
    const PriorSpec prior = forecast_density(fc.states, exp);
    return map_to_posterior(std::move(fc), prior, model, *y, exp.mapping);
}

std::vector<double> normalize_log_weights(const std::vector<double>& log_weights)
{
    require(!log_weights.empty(), "normalize_log_weights: no weights");
    double shift = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) {
        if (std::isfinite(lw) && lw > shift) {
            shift = lw;
        }
    }
    const double n = static_cast<double>(log_weights.size());
    std::vector<double> w(log_weights.size(), 1.0 / n);
    if (!std::isfinite(shift)) {
        std::clog << "steinflow: warning: all particle weights vanished; falling back to uniform weights\n";
        return w;
    }
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::isfinite(log_weights[i]) ? std::exp(log_weights[i] - shift) : 0.0;
        total += w[i];
    }
    for (double& wi : w) {
        wi /= total;
    }
    return w;
}

std::vector<Eigen::Index> systematic_resample(const std::vector<double>& weights, double u)
{
    require(!weights.empty(), "systematic_resample: no weights");
    require(u >= 0.0 && u < 1.0, "systematic_resample: offset must lie in [0, 1)");
    const std::size_t n = weights.size();
    std::vector<Eigen::Index> ancestors(n);
    double cumulative = weights[0];
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double point = (static_cast<double>(i) + u) / static_cast<double>(n);
        while (point >= cumulative && j + 1 < n) {
            ++j;
            cumulative += weights[j];
        }
        ancestors[i] = static_cast<Eigen::Index>(j);
    }
    return ancestors;
}

Ensemble sir_update(const Ensemble& forecast_ensemble, const VectorRef& y, const ObservationModel& model, int cycle)
{
    const Eigen::Index n = forecast_ensemble.n_particles();
    std::vector<double> log_w(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < n; ++j) {
        log_w[static_cast<std::size_t>(j)] = log_likelihood(model, forecast_ensemble.states.row(j).transpose(), y);
    }
    const std::vector<double> w = normalize_log_weights(log_w);

    Rng rng(stream_seed(forecast_ensemble.rng_seed, kResampleStream, static_cast<std::uint64_t>(cycle)));
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const std::vector<Eigen::Index> ancestors = systematic_resample(w, u);

    Ensemble out{ParticleMatrix(n, forecast_ensemble.dim()), forecast_ensemble.rng_seed};
    for (Eigen::Index i = 0; i < n; ++i) {
        out.states.row(i) = forecast_ensemble.states.row(ancestors[static_cast<std::size_t>(i)]);
    }
    return out;
}

Ensemble sir_step(const Ensemble& ensemble, const VectorRef& y, const ObservationModel& model,
                  const Propagator& propagator, int cycle)
{
    return sir_update(forecast(ensemble, propagator, cycle), y, model, cycle);
}

Ensemble sir_cycle(const Ensemble& ensemble, const VectorRef& y, const SequentialExperiment& exp, int cycle)
{
    return sir_step(ensemble, y, exp.obs_model, lorenz63_propagator(exp.dynamics), cycle);
}

int post_transition_cycle(const ParticleMatrix& truth, double min_abs)
{
    Eigen::Index first_change = -1;
    for (Eigen::Index c = 1; c < truth.rows(); ++c) {
        if ((truth(c, 0) > 0.0) != (truth(c - 1, 0) > 0.0)) {
            first_change = c;
            break;
        }
    }
    if (first_change < 0) {
        return 0;
    }
    for (Eigen::Index c = truth.rows() - 1; c >= first_change; --c) {
        if (std::abs(truth(c, 0)) >= min_abs) {
            return static_cast<int>(c + 1);
        }
    }
    return 0;
}

CycleRecords run_sequential(const SequentialExperiment& exp, const FilterSpec& filter, const RunOptions& options)
{
    exp.validate();
    CycleRecords rec;
    rec.filter = filter;
    rec.truth = simulate_truth(exp);
    rec.means.resize(exp.n_cycles, 3);

    Rng init_rng(stream_seed(exp.filter_seed, kInitStream));
    Ensemble ens{sample_prior(exp.resolved_initial_prior(), exp.n_particles, init_rng), exp.filter_seed};

    for (int c = 1; c <= exp.n_cycles; ++c) {
        const Vector y = rec.truth.observations.row(c - 1).transpose();
        if (filter.kind == FilterSpec::Kind::SIR) {
            ens = sir_cycle(ens, y, exp, c);
            rec.iterations.push_back(0);
            rec.converged.push_back(true);
        } else {
            MappingResult res = vmpf_cycle(ens, y, exp, filter.backend, c);
            ens = std::move(res.ensemble);
            rec.iterations.push_back(res.diagnostics.iterations_run);
            rec.converged.push_back(res.diagnostics.converged);
        }
        const Vector mean = sample_mean(ens.states);
        rec.means.row(c - 1) = mean.transpose();
        rec.rmse.push_back(rmse(mean, rec.truth.truth.row(c - 1).transpose()));

        bool keep = options.snapshot_every > 0 && c % options.snapshot_every == 0;
        for (int s : options.snapshot_cycles) {
            keep = keep || s == c;
        }
        if (keep) {
            rec.snapshots.emplace(c, ens.states);
        }
    }
    rec.final_ensemble = std::move(ens);
    return rec;
}

}  // namespace steinflow
