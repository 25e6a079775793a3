#include "steinflow/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace steinflow {

using nlohmann::json;

namespace {

// Walks one JSON object, remembers which keys were read and rejects the rest.
class Section {
public:
    Section(const json& node, std::string path) : node_(node), path_(std::move(path))
    {
        if (!node_.is_object()) {
            throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
        }
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key)
    {
        seen_.insert(key);
        return node_.contains(key) && !node_.at(key).is_null();
    }

    const json& at(const std::string& key)
    {
        seen_.insert(key);
        return node_.at(key);
    }

    double number(const std::string& key, double fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = at(key);
        if (!v.is_number()) {
            throw ConfigError(child(key), "expected a number");
        }
        return v.get<double>();
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = at(key);
        if (!v.is_number_integer()) {
            throw ConfigError(child(key), "expected an integer");
        }
        return v.get<std::int64_t>();
    }

    std::string string(const std::string& key, const std::string& fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = at(key);
        if (!v.is_string()) {
            throw ConfigError(child(key), "expected a string");
        }
        return v.get<std::string>();
    }

    Vector vector(const std::string& key)
    {
        const json& v = at(key);
        if (v.is_number()) {
            return Vector::Constant(1, v.get<double>());
        }
        if (!v.is_array() || v.empty()) {
            throw ConfigError(child(key), "expected a non-empty array of numbers");
        }
        Vector out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) {
                throw ConfigError(child(key), "expected a non-empty array of numbers");
            }
            out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
        }
        return out;
    }

    /// Square or rectangular matrix; a bare number means a 1x1 matrix.
    Matrix matrix(const std::string& key)
    {
        const json& v = at(key);
        if (v.is_number()) {
            return Matrix::Constant(1, 1, v.get<double>());
        }
        if (!v.is_array() || v.empty() || !v[0].is_array() || v[0].empty()) {
            throw ConfigError(child(key), "expected a non-empty array of rows");
        }
        const std::size_t cols = v[0].size();
        Matrix out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < v.size(); ++r) {
            if (!v[r].is_array() || v[r].size() != cols) {
                throw ConfigError(child(key), "rows must all have the same length");
            }
            for (std::size_t c = 0; c < cols; ++c) {
                if (!v[r][c].is_number()) {
                    throw ConfigError(child(key), "matrix entries must be numbers");
                }
                out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r][c].get<double>();
            }
        }
        return out;
    }

    Section section(const std::string& key) { return Section(at(key), child(key)); }

    void finish() const
    {
        for (const auto& [key, value] : node_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError(child(key), "unknown field");
            }
        }
    }

private:
    const json& node_;
    std::string path_;
    std::set<std::string> seen_;
};

// Re-raises library validation failures with the field path attached.
template <class F>
auto at_path(const std::string& path, F&& f)
{
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const InputError& e) {
        throw ConfigError(path, e.what());
    }
}

BandwidthPolicy parse_bandwidth(Section s, const BandwidthPolicy& fallback)
{
    const std::string policy =
        s.string("policy", fallback.kind == BandwidthPolicy::Kind::Fixed ? "fixed" : "trace_fraction");
    BandwidthPolicy out;
    if (policy == "fixed") {
        const double gamma =
            s.number("gamma", fallback.kind == BandwidthPolicy::Kind::Fixed ? fallback.value : 1.0);
        if (!(gamma > 0.0)) {
            throw ConfigError(s.child("gamma"), "bandwidth must be positive");
        }
        out = BandwidthPolicy::fixed(gamma);
    } else if (policy == "trace_fraction") {
        const double c =
            s.number("fraction", fallback.kind == BandwidthPolicy::Kind::TraceFraction ? fallback.value : 0.5);
        if (!(c > 0.0 && c < 1.0)) {
            throw ConfigError(s.child("fraction"), "trace fraction must lie in (0, 1)");
        }
        out = BandwidthPolicy::trace_fraction(c);
    } else {
        throw ConfigError(s.child("policy"), "unknown bandwidth policy '" + policy + "'; valid: fixed, trace_fraction");
    }
    s.finish();
    return out;
}

void parse_mapping(Section s, MappingConfig& m)
{
    m.learning_rate = s.number("learning_rate", m.learning_rate);
    m.beta1 = s.number("beta1", m.beta1);
    m.beta2 = s.number("beta2", m.beta2);
    m.adam_epsilon = s.number("adam_epsilon", m.adam_epsilon);
    m.grad_tol = s.number("grad_tol", m.grad_tol);
    m.max_iters = static_cast<int>(s.integer("max_iters", m.max_iters));
    if (s.has("kernel")) {
        m.kernel.policy = parse_bandwidth(s.section("kernel"), m.kernel.policy);
    }
    if (s.has("obs_kernel")) {
        m.obs_bandwidth = parse_bandwidth(s.section("obs_kernel"), m.kernel.policy);
    }
    if (m.kernel.policy.kind == BandwidthPolicy::Kind::Fixed) {
        m.kernel.gamma = m.kernel.policy.value;
    }
    s.finish();

    const auto check = [&](bool ok, const std::string& key, const std::string& msg) {
        if (!ok) {
            throw ConfigError(s.child(key), msg);
        }
    };
    check(m.learning_rate > 0.0, "learning_rate", "must be positive");
    check(m.beta1 >= 0.0 && m.beta1 < 1.0, "beta1", "must lie in [0, 1)");
    check(m.beta2 >= 0.0 && m.beta2 < 1.0, "beta2", "must lie in [0, 1)");
    check(m.adam_epsilon > 0.0, "adam_epsilon", "must be positive");
    check(m.grad_tol > 0.0, "grad_tol", "must be positive");
    check(m.max_iters >= 1, "max_iters", "must be at least 1");
}

PriorSpec parse_prior(Section s, const PriorSpec& fallback)
{
    const std::string type = s.string("type", std::holds_alternative<UniformPrior>(fallback) ? "uniform" : "gaussian");
    PriorSpec out;
    if (type == "gaussian") {
        const auto* g = std::get_if<GaussianPrior>(&fallback);
        Vector mean = s.has("mean") ? s.vector("mean") : (g ? g->mean : Vector::Constant(1, 0.5));
        Matrix cov;
        if (s.has("covariance")) {
            cov = s.matrix("covariance");
        } else if (s.has("variance")) {
            cov = s.vector("variance").asDiagonal();
        } else if (g && g->mean.size() == mean.size()) {
            cov = g->covariance;
        } else {
            cov = Matrix::Identity(mean.size(), mean.size());
        }
        out = at_path(s.child("covariance"), [&] { return make_gaussian_prior(mean, cov); });
    } else if (type == "uniform") {
        if (!s.has("lower") || !s.has("upper")) {
            throw ConfigError(s.child(s.has("lower") ? "upper" : "lower"), "uniform prior needs lower and upper");
        }
        Vector lower = s.vector("lower");
        Vector upper = s.vector("upper");
        out = at_path(s.child("upper"), [&] { return make_uniform_prior(lower, upper); });
    } else {
        throw ConfigError(s.child("type"), "unknown prior type '" + type + "'; valid: gaussian, uniform");
    }
    s.finish();
    return out;
}

struct ObservationFields {
    std::string op = "quadratic";
    std::optional<Matrix> matrix;
    Matrix noise;
    Backend backend = Backend::Exact;
};

ObservationModel parse_observation(Section s, ExperimentConfig& cfg, Eigen::Index state_dim)
{
    const std::string op = s.string("operator", cfg.experiment == ExperimentKind::Static ? "quadratic" : "absolute");
    ObservationOperator oper;
    Eigen::Index obs_dim = state_dim;
    if (op == "quadratic") {
        oper = QuadraticOperator{};
    } else if (op == "absolute") {
        oper = AbsoluteOperator{};
    } else if (op == "linear") {
        Matrix a = s.has("matrix") ? s.matrix("matrix") : Matrix::Identity(state_dim, state_dim);
        obs_dim = a.rows();
        oper = LinearOperator{std::move(a)};
    } else {
        throw ConfigError(s.child("operator"), "unknown operator '" + op + "'; valid: linear, quadratic, absolute");
    }

    Matrix noise;
    if (s.has("noise_covariance")) {
        noise = s.matrix("noise_covariance");
    } else {
        const double var = s.number("noise_variance", 0.5);
        noise = var * Matrix::Identity(obs_dim, obs_dim);
    }

    Backend backend = Backend::Exact;
    if (s.has("backend")) {
        backend = at_path(s.child("backend"), [&] { return parse_backend(s.string("backend", "exact")); });
    }

    if (s.has("truth")) {
        cfg.truth = s.vector("truth");
    }
    if (s.has("y")) {
        cfg.y = s.vector("y");
    }
    s.finish();

    ObservationModel model =
        at_path(s.child("noise_covariance"), [&] { return ObservationModel(std::move(oper), noise, backend); });
    at_path(s.child("operator"), [&] {
        model.check_state_dim(state_dim);
        return 0;
    });
    return model;
}

void parse_dynamics(Section s, ExperimentConfig& cfg)
{
    Lorenz63Config& d = cfg.dynamics;
    d.sigma = s.number("sigma", d.sigma);
    d.rho = s.number("rho", d.rho);
    d.beta = s.number("beta", d.beta);
    d.dt = s.number("dt", d.dt);
    d.steps_per_cycle = static_cast<int>(s.integer("steps_per_cycle", d.steps_per_cycle));
    d.model_noise_std = s.number("model_noise_std", d.model_noise_std);
    cfg.spin_up_cycles = static_cast<int>(s.integer("spin_up_cycles", cfg.spin_up_cycles));
    if (s.has("truth_initial")) {
        cfg.truth_initial = s.vector("truth_initial");
        if (cfg.truth_initial->size() != 3) {
            throw ConfigError(s.child("truth_initial"), "expected three components");
        }
    }
    cfg.initial_spread = s.number("initial_spread", cfg.initial_spread);
    s.finish();
    if (!(d.dt > 0.0)) {
        throw ConfigError(s.child("dt"), "must be positive");
    }
    if (d.steps_per_cycle < 1) {
        throw ConfigError(s.child("steps_per_cycle"), "must be at least 1");
    }
    if (d.model_noise_std < 0.0) {
        throw ConfigError(s.child("model_noise_std"), "must be nonnegative");
    }
    if (cfg.spin_up_cycles < 0) {
        throw ConfigError(s.child("spin_up_cycles"), "must be nonnegative");
    }
    if (!(cfg.initial_spread > 0.0)) {
        throw ConfigError(s.child("initial_spread"), "must be positive");
    }
}

void parse_output(Section s, ExperimentConfig& cfg)
{
    cfg.snapshot_every = static_cast<int>(s.integer("snapshot_every", cfg.snapshot_every));
    if (s.has("kde_cycles")) {
        const json& v = s.at("kde_cycles");
        if (!v.is_array()) {
            throw ConfigError(s.child("kde_cycles"), "expected an array of cycle numbers");
        }
        cfg.kde_cycles.clear();
        for (const json& c : v) {
            if (!c.is_number_integer() || c.get<int>() < 1) {
                throw ConfigError(s.child("kde_cycles"), "cycle numbers must be positive integers");
            }
            cfg.kde_cycles.push_back(c.get<int>());
        }
    }
    if (s.has("kde_bandwidth")) {
        const json& v = s.at("kde_bandwidth");
        if (v.is_number()) {
            if (!(v.get<double>() > 0.0)) {
                throw ConfigError(s.child("kde_bandwidth"), "must be positive");
            }
            cfg.kde_bandwidth = {KdeBandwidth::Kind::Fixed, v.get<double>()};
        } else if (v == "mapping") {
            cfg.kde_bandwidth = {KdeBandwidth::Kind::MappingGamma, 0.0};
        } else if (v == "silverman") {
            cfg.kde_bandwidth = {KdeBandwidth::Kind::Silverman, 0.0};
        } else {
            throw ConfigError(s.child("kde_bandwidth"), "expected a positive number, \"mapping\" or \"silverman\"");
        }
    }
    cfg.kde_points = static_cast<int>(s.integer("kde_points", cfg.kde_points));
    s.finish();
    if (cfg.snapshot_every < 0) {
        throw ConfigError(s.child("snapshot_every"), "must be nonnegative");
    }
    if (cfg.kde_points < 2) {
        throw ConfigError(s.child("kde_points"), "must be at least 2");
    }
}

}  // namespace

SequentialExperiment ExperimentConfig::sequential() const
{
    SequentialExperiment exp;
    exp.dynamics = dynamics;
    exp.obs_model = obs_model;
    exp.n_cycles = n_cycles;
    exp.n_particles = n_particles;
    exp.truth_initial = truth_initial ? *truth_initial : spin_up(dynamics, spin_up_cycles);
    exp.initial_prior = make_gaussian_prior(exp.truth_initial, initial_spread * initial_spread * Matrix::Identity(3, 3));
    exp.truth_seed = truth_seed;
    exp.filter_seed = seed;
    exp.mapping = mapping;
    exp.forecast_prior = forecast_prior;
    return exp;
}

ExperimentConfig parse_config(const json& doc)
{
    Section root(doc, "");
    ExperimentConfig cfg;

    const std::string kind = root.string("experiment", "static");
    if (kind == "static") {
        cfg.experiment = ExperimentKind::Static;
        cfg.mapping.kernel = {0.3, BandwidthPolicy::fixed(0.3)};
    } else if (kind == "lorenz63") {
        cfg.experiment = ExperimentKind::Lorenz63;
        cfg.mapping.kernel = {1.0, BandwidthPolicy::trace_fraction(0.2)};
        cfg.kde_bandwidth = {KdeBandwidth::Kind::Silverman, 0.0};
    } else {
        throw ConfigError("experiment", "unknown experiment '" + kind + "'; valid: static, lorenz63");
    }
    const bool is_static = cfg.experiment == ExperimentKind::Static;

    const std::int64_t seed = root.integer("seed", 1);
    const std::int64_t truth_seed = root.integer("truth_seed", seed);
    if (seed < 0 || truth_seed < 0) {
        throw ConfigError(seed < 0 ? "seed" : "truth_seed", "must be nonnegative");
    }
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.truth_seed = static_cast<std::uint64_t>(truth_seed);
    cfg.output_dir = root.string("output_dir", cfg.output_dir.string());

    if (root.has("mapping")) {
        parse_mapping(root.section("mapping"), cfg.mapping);
    }

    if (!is_static) {
        const std::string filter = root.string("filter", "vmpf");
        if (filter == "vmpf") {
            cfg.filter.kind = FilterSpec::Kind::VMPF;
        } else if (filter == "sir") {
            cfg.filter.kind = FilterSpec::Kind::SIR;
        } else {
            throw ConfigError("filter", "unknown filter '" + filter + "'; valid: vmpf, sir");
        }
        cfg.n_cycles = static_cast<int>(root.integer("n_cycles", cfg.n_cycles));
        if (cfg.n_cycles < 1) {
            throw ConfigError("n_cycles", "must be at least 1");
        }
        const std::string fp = root.string("forecast_prior", "gaussian");
        if (fp == "gaussian") {
            cfg.forecast_prior = ForecastPrior::Gaussian;
        } else if (fp == "kde") {
            cfg.forecast_prior = ForecastPrior::KernelDensity;
        } else {
            throw ConfigError("forecast_prior", "unknown forecast prior '" + fp + "'; valid: gaussian, kde");
        }
        if (root.has("dynamics")) {
            parse_dynamics(root.section("dynamics"), cfg);
        }
    }

    const std::int64_t default_particles = (!is_static && cfg.filter.kind == FilterSpec::Kind::SIR) ? 10000 : 100;
    const std::int64_t n_particles = root.integer("n_particles", default_particles);
    if (n_particles < 2) {
        throw ConfigError("n_particles", "must be at least 2");
    }
    cfg.n_particles = static_cast<int>(n_particles);

    Eigen::Index state_dim = 1;
    if (is_static) {
        if (root.has("prior")) {
            cfg.prior = parse_prior(root.section("prior"), cfg.prior);
        }
        state_dim = prior_dim(cfg.prior);
        cfg.truth = Vector::Constant(state_dim, 3.0);
    } else {
        state_dim = 3;
        cfg.obs_model = ObservationModel(AbsoluteOperator{}, 0.5 * Matrix::Identity(3, 3));
    }
    if (root.has("observation")) {
        cfg.obs_model = parse_observation(root.section("observation"), cfg, state_dim);
    }
    if (is_static) {
        if (cfg.truth.size() != state_dim) {
            throw ConfigError("observation.truth", "dimension does not match the prior");
        }
        if (cfg.y && cfg.y->size() != cfg.obs_model.obs_dim()) {
            throw ConfigError("observation.y", "dimension does not match the observation operator");
        }
    } else {
        if (root.has("prior")) {
            throw ConfigError("prior", "not used by lorenz63 experiments; see dynamics.initial_spread");
        }
        cfg.filter.backend = cfg.obs_model.backend();
    }

    if (root.has("output")) {
        parse_output(root.section("output"), cfg);
    }
    root.finish();
    return cfg;
}

void apply_override(json& doc, const std::string& assignment)
{
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(assignment, "override must look like key.path=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);

    json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> segments;
    while (std::getline(parts, part, '.')) {
        if (part.empty()) {
            throw ConfigError(key, "empty path segment in override");
        }
        segments.push_back(part);
    }
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) {
        json& next = (*node)[segments[i]];
        if (next.is_null()) {
            next = json::object();
        }
        if (!next.is_object()) {
            throw ConfigError(key, "'" + segments[i] + "' is not an object");
        }
        node = &next;
    }
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    (*node)[segments.back()] = std::move(value);
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path.string(), "cannot open config file");
    }
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) {
        throw ConfigError(path.string(), "malformed JSON");
    }
    for (const std::string& o : overrides) {
        apply_override(doc, o);
    }
    return parse_config(doc);
}

}  // namespace steinflow

namespace steinflow {

namespace {

json vector_json(const VectorRef& v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v[i]);
    }
    return out;
}

json matrix_json(const Matrix& m)
{
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out.push_back(vector_json(m.row(r).transpose()));
    }
    return out;
}

json bandwidth_json(const BandwidthPolicy& p)
{
    if (p.kind == BandwidthPolicy::Kind::Fixed) {
        return {{"policy", "fixed"}, {"gamma", p.value}};
    }
    return {{"policy", "trace_fraction"}, {"fraction", p.value}};
}

}  // namespace

json config_to_json(const ExperimentConfig& cfg)
{
    const bool is_static = cfg.experiment == ExperimentKind::Static;
    json doc;
    doc["experiment"] = is_static ? "static" : "lorenz63";
    doc["seed"] = cfg.seed;
    doc["truth_seed"] = cfg.truth_seed;
    doc["n_particles"] = cfg.n_particles;
    doc["output_dir"] = cfg.output_dir.string();

    const MappingConfig& m = cfg.mapping;
    doc["mapping"] = {{"learning_rate", m.learning_rate}, {"beta1", m.beta1},       {"beta2", m.beta2},
                      {"adam_epsilon", m.adam_epsilon},   {"grad_tol", m.grad_tol}, {"max_iters", m.max_iters},
                      {"kernel", bandwidth_json(m.kernel.policy)}};
    if (m.obs_bandwidth) {
        doc["mapping"]["obs_kernel"] = bandwidth_json(*m.obs_bandwidth);
    }

    json obs;
    std::visit(
        [&](const auto& op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, LinearOperator>) {
                obs["operator"] = "linear";
                obs["matrix"] = matrix_json(op.matrix);
            } else if constexpr (std::is_same_v<T, QuadraticOperator>) {
                obs["operator"] = "quadratic";
            } else {
                obs["operator"] = "absolute";
            }
        },
        cfg.obs_model.op());
    obs["noise_covariance"] = matrix_json(cfg.obs_model.noise_cov());
    obs["backend"] = std::string(backend_name(cfg.obs_model.backend()));

    json out = {{"snapshot_every", cfg.snapshot_every}, {"kde_points", cfg.kde_points}};
    switch (cfg.kde_bandwidth.kind) {
    case KdeBandwidth::Kind::MappingGamma: out["kde_bandwidth"] = "mapping"; break;
    case KdeBandwidth::Kind::Silverman: out["kde_bandwidth"] = "silverman"; break;
    case KdeBandwidth::Kind::Fixed: out["kde_bandwidth"] = cfg.kde_bandwidth.value; break;
    }

    if (is_static) {
        if (const auto* g = std::get_if<GaussianPrior>(&cfg.prior)) {
            doc["prior"] = {{"type", "gaussian"}, {"mean", vector_json(g->mean)}, {"covariance", matrix_json(g->covariance)}};
        } else if (const auto* u = std::get_if<UniformPrior>(&cfg.prior)) {
            doc["prior"] = {{"type", "uniform"}, {"lower", vector_json(u->lower)}, {"upper", vector_json(u->upper)}};
        }
        obs["truth"] = vector_json(cfg.truth);
        if (cfg.y) {
            obs["y"] = vector_json(*cfg.y);
        }
    } else {
        doc["filter"] = cfg.filter.kind == FilterSpec::Kind::SIR ? "sir" : "vmpf";
        doc["n_cycles"] = cfg.n_cycles;
        doc["forecast_prior"] = cfg.forecast_prior == ForecastPrior::Gaussian ? "gaussian" : "kde";
        const Lorenz63Config& d = cfg.dynamics;
        doc["dynamics"] = {{"sigma", d.sigma},
                           {"rho", d.rho},
                           {"beta", d.beta},
                           {"dt", d.dt},
                           {"steps_per_cycle", d.steps_per_cycle},
                           {"model_noise_std", d.model_noise_std},
                           {"spin_up_cycles", cfg.spin_up_cycles},
                           {"initial_spread", cfg.initial_spread}};
        if (cfg.truth_initial) {
            doc["dynamics"]["truth_initial"] = vector_json(*cfg.truth_initial);
        }
        out["kde_cycles"] = cfg.kde_cycles;
    }
    doc["observation"] = std::move(obs);
    doc["output"] = std::move(out);
    return doc;
}

}  // namespace steinflow
