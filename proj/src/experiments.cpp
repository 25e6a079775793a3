#include "steinflow/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "steinflow/obsgrad.hpp"

namespace steinflow {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStaticObsStream = 0x7374617469636f62ULL;
constexpr std::uint64_t kStaticInitStream = 0x7374617469637073ULL;

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary)
    {
        if (!out_) {
            throw std::runtime_error("cannot write " + path.string());
        }
    }

    CsvWriter& header(const std::vector<std::string>& names)
    {
        for (std::size_t i = 0; i < names.size(); ++i) {
            out_ << (i ? "," : "") << names[i];
        }
        out_ << '\n';
        return *this;
    }

    CsvWriter& cell(double v) { return raw(format_double(v)); }
    CsvWriter& cell(long long v) { return raw(std::to_string(v)); }
    CsvWriter& cell(int v) { return raw(std::to_string(v)); }
    CsvWriter& cell(const std::string& v) { return raw(v); }

    CsvWriter& cells(const VectorRef& v)
    {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            cell(v[i]);
        }
        return *this;
    }

    void end()
    {
        out_ << '\n';
        first_ = true;
    }

    void close()
    {
        out_.close();
        if (!out_) {
            throw std::runtime_error("failed writing CSV output");
        }
    }

private:
    CsvWriter& raw(const std::string& s)
    {
        if (!first_) {
            out_ << ',';
        }
        out_ << s;
        first_ = false;
        return *this;
    }

    std::ofstream out_;
    bool first_ = true;
};

std::vector<std::string> indexed(const std::string& prefix, Eigen::Index n)
{
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) {
        out.push_back(prefix + std::to_string(i));
    }
    return out;
}

void write_json(const std::filesystem::path& path, const json& doc)
{
    std::ofstream out(path, std::ios::binary);
    out << doc.dump(2) << '\n';
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

json vec_json(const VectorRef& v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v[i]);
    }
    return out;
}

json modes_json(const ModeSummary& m)
{
    return {{"count", m.count}, {"locations", m.locations}};
}

double kde_bandwidth_for(const KdeBandwidth& bw, double mapping_gamma, const std::vector<double>& samples)
{
    switch (bw.kind) {
    case KdeBandwidth::Kind::Fixed: return bw.value;
    case KdeBandwidth::Kind::MappingGamma: return mapping_gamma;
    case KdeBandwidth::Kind::Silverman: break;
    }
    return silverman_bandwidth(samples);
}

double median(std::vector<int> v)
{
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string format_double(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

Vector static_observation(const ExperimentConfig& cfg)
{
    if (cfg.y) {
        return *cfg.y;
    }
    Rng rng(stream_seed(cfg.truth_seed, kStaticObsStream));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(cfg.obs_model.obs_dim());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z[i] = normal(rng);
    }
    return apply_operator(cfg.obs_model, cfg.truth) + cfg.obs_model.noise_chol() * z;
}

std::vector<double> analytic_grid(const PriorSpec& prior)
{
    if (const auto* u = std::get_if<UniformPrior>(&prior)) {
        return linspace(u->lower[0], u->upper[0], kAnalyticGridPoints);
    }
    if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
        const double sd = std::sqrt(g->covariance(0, 0));
        return linspace(g->mean[0] - 8.0 * sd, g->mean[0] + 8.0 * sd, kAnalyticGridPoints);
    }
    throw InputError("analytic_grid: unsupported prior");
}

std::vector<double> analytic_posterior(const PriorSpec& prior, const ObservationModel& model, const VectorRef& y,
                                       const std::vector<double>& grid)
{
    require(prior_dim(prior) == 1, "analytic_posterior: one-dimensional states only");
    std::vector<double> logp(grid.size());
    double shift = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vector x = Vector::Constant(1, grid[i]);
        logp[i] = log_prior(prior, x) + log_likelihood(model, x, y);
        shift = std::max(shift, logp[i]);
    }
    std::vector<double> p(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        p[i] = std::exp(logp[i] - shift);
    }
    const double z = trapezoid(grid, p);
    for (double& v : p) {
        v /= z;
    }
    return p;
}

StaticRun run_static(const ExperimentConfig& cfg)
{
    require(cfg.experiment == ExperimentKind::Static, "run_static: not a static experiment");
    StaticRun run;
    run.y = static_observation(cfg);

    Rng rng(stream_seed(cfg.seed, kStaticInitStream));
    run.initial = sample_prior(cfg.prior, cfg.n_particles, rng);

    const auto* box = std::get_if<UniformPrior>(&cfg.prior);
    const auto inside = [&](const ParticleMatrix& s) {
        if (box == nullptr) {
            return true;
        }
        for (Eigen::Index l = 0; l < s.rows(); ++l) {
            for (Eigen::Index k = 0; k < s.cols(); ++k) {
                if (s(l, k) < box->lower[k] || s(l, k) > box->upper[k]) {
                    return false;
                }
            }
        }
        return true;
    };
    const IterationObserver record = [&](int iter, const ParticleMatrix& states) {
        run.contained = run.contained && inside(states);
        run.trajectory.emplace_back(iter, states);
    };
    run.result = map_to_posterior(Ensemble{run.initial, cfg.seed}, cfg.prior, cfg.obs_model, run.y, cfg.mapping, record);

    const ParticleMatrix& final_states = run.result.ensemble.states;
    const std::vector<double> xs = marginal(final_states, 0);
    run.positive_fraction =
        static_cast<double>(std::count_if(xs.begin(), xs.end(), [](double v) { return v > 0.0; })) /
        static_cast<double>(xs.size());

    const std::vector<double> grid = analytic_grid(cfg.prior);
    run.kde = kde_1d(xs, grid, kde_bandwidth_for(cfg.kde_bandwidth, run.result.diagnostics.final_gamma, xs));
    run.modes = count_modes(run.kde);
    if (prior_dim(cfg.prior) == 1) {
        run.analytic = analytic_posterior(cfg.prior, cfg.obs_model, run.y, grid);
        run.analytic_modes = count_modes(DensityEstimate{grid, run.analytic, 0.0});
    }
    return run;
}

namespace {

void write_gradients(CsvWriter& csv, const std::string& stage, const ParticleMatrix& states,
                     const ExperimentConfig& cfg, const VectorRef& y)
{
    const ObservationModel& model = cfg.obs_model;
    const EnsembleEvaluations evals = evaluate_ensemble(model, states);
    Gram g;
    if (model.backend() == Backend::RKHS || model.backend() == Backend::RKHSNormalized) {
        const BandwidthPolicy policy =
            cfg.mapping.obs_bandwidth ? *cfg.mapping.obs_bandwidth : cfg.mapping.kernel.policy;
        g = gram(states, KernelConfig{select_bandwidth(states, policy), policy});
    }
    const std::vector<Matrix> grad_h = operator_gradients(model, evals, g);
    for (Eigen::Index l = 0; l < states.rows(); ++l) {
        const Vector x = states.row(l).transpose();
        const Matrix exact = exact_grad_operator(model, x);
        const Matrix& est = grad_h[static_cast<std::size_t>(l)];
        csv.cell(stage).cell(static_cast<long long>(l)).cells(x);
        csv.cells(Eigen::Map<const Vector>(est.data(), est.size()));
        csv.cells(Eigen::Map<const Vector>(exact.data(), exact.size()));
        csv.cells(grad_log_likelihood(model, est, x, y));
        csv.cells(grad_log_likelihood(model, exact, x, y));
        csv.end();
    }
}

}  // namespace

json static_summary(const ExperimentConfig& cfg, const StaticRun& run)
{
    const MappingDiagnostics& d = run.result.diagnostics;
    const EnsembleStats stats = ensemble_stats(run.result.ensemble.states);
    json doc;
    doc["experiment"] = "static";
    doc["backend"] = std::string(backend_name(cfg.obs_model.backend()));
    doc["n_particles"] = cfg.n_particles;
    doc["seed"] = cfg.seed;
    doc["truth_seed"] = cfg.truth_seed;
    doc["truth"] = vec_json(cfg.truth);
    doc["y"] = vec_json(run.y);
    doc["iterations"] = d.iterations_run;
    doc["converged"] = d.converged;
    doc["final_gradient_norm"] = d.grad_norm_history.empty() ? 0.0 : d.grad_norm_history.back();
    doc["final_gamma"] = d.final_gamma;
    doc["grad_norm_history"] = d.grad_norm_history;
    doc["contained"] = run.contained;
    doc["posterior_mean"] = vec_json(stats.mean);
    doc["posterior_variance"] = vec_json(stats.covariance.diagonal());
    doc["positive_fraction"] = run.positive_fraction;
    doc["kde_bandwidth"] = run.kde.bandwidth;
    doc["modes"] = modes_json(run.modes);
    if (!run.analytic.empty()) {
        doc["analytic_modes"] = modes_json(run.analytic_modes);
    }
    doc["config"] = config_to_json(cfg);
    return doc;
}

void write_static(const ExperimentConfig& cfg, const StaticRun& run)
{
    std::filesystem::create_directories(cfg.output_dir);
    const Eigen::Index nx = run.initial.cols();
    const Eigen::Index ny = cfg.obs_model.obs_dim();

    {
        CsvWriter csv(cfg.output_dir / "trajectories.csv");
        std::vector<std::string> head{"iteration", "particle_id"};
        for (const auto& c : indexed("x", nx)) {
            head.push_back(c);
        }
        csv.header(head);
        for (const auto& [iter, states] : run.trajectory) {
            for (Eigen::Index l = 0; l < states.rows(); ++l) {
                csv.cell(iter).cell(static_cast<long long>(l)).cells(states.row(l).transpose());
                csv.end();
            }
        }
        csv.close();
    }
    {
        CsvWriter csv(cfg.output_dir / "gradients.csv");
        std::vector<std::string> head{"stage", "particle_id"};
        const auto add = [&](const std::vector<std::string>& cols) { head.insert(head.end(), cols.begin(), cols.end()); };
        add(indexed("x", nx));
        for (const char* prefix : {"grad_h_", "exact_grad_h_"}) {
            // Column-major flattening of the N_y x N_x Jacobian.
            for (Eigen::Index k = 0; k < nx; ++k) {
                for (Eigen::Index i = 0; i < ny; ++i) {
                    head.push_back(prefix + std::to_string(i) + "_" + std::to_string(k));
                }
            }
        }
        add(indexed("grad_loglik_", nx));
        add(indexed("exact_grad_loglik_", nx));
        csv.header(head);
        write_gradients(csv, "initial", run.initial, cfg, run.y);
        write_gradients(csv, "final", run.result.ensemble.states, cfg, run.y);
        csv.close();
    }
    {
        CsvWriter csv(cfg.output_dir / "posterior_kde.csv");
        const bool analytic = !run.analytic.empty();
        csv.header(analytic ? std::vector<std::string>{"x", "kde_density", "analytic_density"}
                            : std::vector<std::string>{"x", "kde_density"});
        for (std::size_t i = 0; i < run.kde.grid.size(); ++i) {
            csv.cell(run.kde.grid[i]).cell(run.kde.density[i]);
            if (analytic) {
                csv.cell(run.analytic[i]);
            }
            csv.end();
        }
        csv.close();
    }
    write_json(cfg.output_dir / "summary.json", static_summary(cfg, run));
}

std::vector<int> kde_cycles(const ExperimentConfig& cfg, int flagged_cycle)
{
    std::set<int> cycles(cfg.kde_cycles.begin(), cfg.kde_cycles.end());
    if (cycles.empty()) {
        cycles.insert(cfg.n_cycles);
    }
    if (flagged_cycle > 0) {
        cycles.insert(flagged_cycle);
    }
    std::vector<int> out;
    for (int c : cycles) {
        if (c >= 1 && c <= cfg.n_cycles) {
            out.push_back(c);
        }
    }
    return out;
}

DensityEstimate marginal_kde(const ParticleMatrix& states, Eigen::Index k, const KdeBandwidth& bandwidth,
                             double mapping_gamma, std::size_t points)
{
    const std::vector<double> xs = marginal(states, k);
    const double h = kde_bandwidth_for(bandwidth, mapping_gamma, xs);
    const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
    return kde_1d(xs, linspace(*lo - 4.0 * h, *hi + 4.0 * h, points), h);
}

L63Run run_l63(const ExperimentConfig& cfg)
{
    require(cfg.experiment == ExperimentKind::Lorenz63, "run_l63: not a Lorenz-63 experiment");
    const SequentialExperiment exp = cfg.sequential();
    L63Run run;
    run.flagged_cycle = post_transition_cycle(simulate_truth(exp).truth);

    RunOptions options;
    options.snapshot_every = cfg.snapshot_every;
    options.snapshot_cycles = kde_cycles(cfg, run.flagged_cycle);
    run.records = run_sequential(exp, cfg.filter, options);

    for (int c : options.snapshot_cycles) {
        const ParticleMatrix& states = run.records.snapshots.at(c);
        const double gamma = cfg.kde_bandwidth.kind == KdeBandwidth::Kind::MappingGamma
                                 ? select_bandwidth(states, cfg.mapping.kernel.policy)
                                 : 0.0;
        std::array<DensityEstimate, 3> kdes;
        std::array<ModeSummary, 3> modes;
        for (Eigen::Index k = 0; k < 3; ++k) {
            kdes[k] = marginal_kde(states, k, cfg.kde_bandwidth, gamma, static_cast<std::size_t>(cfg.kde_points));
            modes[k] = count_modes(kdes[k]);
        }
        run.marginals.emplace(c, std::move(kdes));
        run.modes.emplace(c, std::move(modes));
    }
    return run;
}

json l63_summary(const ExperimentConfig& cfg, const L63Run& run)
{
    const CycleRecords& rec = run.records;
    const auto converged = std::count(rec.converged.begin(), rec.converged.end(), true);
    double mean_rmse = 0.0;
    for (double r : rec.rmse) {
        mean_rmse += r;
    }
    mean_rmse /= static_cast<double>(rec.rmse.size());

    json doc;
    doc["experiment"] = "lorenz63";
    doc["filter"] = filter_label(cfg.filter);
    doc["n_particles"] = cfg.n_particles;
    doc["n_cycles"] = cfg.n_cycles;
    doc["seed"] = cfg.seed;
    doc["truth_seed"] = cfg.truth_seed;
    doc["mean_rmse"] = mean_rmse;
    doc["flagged_cycle"] = run.flagged_cycle;
    if (cfg.filter.kind == FilterSpec::Kind::VMPF) {
        doc["converged_cycles"] = converged;
        doc["converged_fraction"] = static_cast<double>(converged) / static_cast<double>(rec.converged.size());
        doc["median_iterations"] = median(rec.iterations);
    }
    json modes = json::object();
    for (const auto& [c, m] : run.modes) {
        modes[std::to_string(c)] = {{"x", modes_json(m[0])}, {"y", modes_json(m[1])}, {"z", modes_json(m[2])}};
    }
    doc["marginal_modes"] = std::move(modes);
    doc["config"] = config_to_json(cfg);
    return doc;
}

void write_l63(const ExperimentConfig& cfg, const L63Run& run)
{
    std::filesystem::create_directories(cfg.output_dir);
    const CycleRecords& rec = run.records;
    const Eigen::Index ny = rec.truth.observations.cols();
    {
        CsvWriter csv(cfg.output_dir / "cycles.csv");
        std::vector<std::string> head{"cycle", "truth_x", "truth_y", "truth_z"};
        for (const auto& c : indexed("obs_", ny)) {
            head.push_back(c);
        }
        for (const char* c : {"mean_x", "mean_y", "mean_z", "rmse", "iterations", "converged"}) {
            head.push_back(c);
        }
        csv.header(head);
        for (Eigen::Index c = 0; c < rec.means.rows(); ++c) {
            const auto i = static_cast<std::size_t>(c);
            csv.cell(static_cast<int>(c + 1))
                .cells(rec.truth.truth.row(c).transpose())
                .cells(rec.truth.observations.row(c).transpose())
                .cells(rec.means.row(c).transpose())
                .cell(rec.rmse[i])
                .cell(rec.iterations[i])
                .cell(rec.converged[i] ? 1 : 0);
            csv.end();
        }
        csv.close();
    }
    {
        CsvWriter csv(cfg.output_dir / "ensembles.csv");
        csv.header({"cycle", "particle_id", "x", "y", "z"});
        for (const auto& [c, states] : rec.snapshots) {
            for (Eigen::Index l = 0; l < states.rows(); ++l) {
                csv.cell(c).cell(static_cast<long long>(l)).cells(states.row(l).transpose());
                csv.end();
            }
        }
        csv.close();
    }
    {
        CsvWriter csv(cfg.output_dir / "marginal_kde.csv");
        csv.header({"cycle", "variable", "grid", "density"});
        const char* names[3] = {"x", "y", "z"};
        for (const auto& [c, kdes] : run.marginals) {
            for (std::size_t k = 0; k < 3; ++k) {
                for (std::size_t g = 0; g < kdes[k].grid.size(); ++g) {
                    csv.cell(c).cell(std::string(names[k])).cell(kdes[k].grid[g]).cell(kdes[k].density[g]);
                    csv.end();
                }
            }
        }
        csv.close();
    }
    write_json(cfg.output_dir / "summary.json", l63_summary(cfg, run));
}

}  // namespace steinflow
