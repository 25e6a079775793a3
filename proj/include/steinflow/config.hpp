#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steinflow/dynamics.hpp"
#include "steinflow/filters.hpp"
#include "steinflow/mapping.hpp"
#include "steinflow/models.hpp"

namespace steinflow {

/// Invalid configuration; `path()` names the offending field ("mapping.kernel.gamma").
class ConfigError : public InputError {
public:
    ConfigError(std::string path, const std::string& message)
        : InputError(path + ": " + message), path_(std::move(path))
    {
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
};

enum class ExperimentKind { Static, Lorenz63 };

/// KDE bandwidth used for figure data.
struct KdeBandwidth {
    enum class Kind { MappingGamma, Silverman, Fixed };
    Kind kind = Kind::MappingGamma;
    double value = 0.0;
};

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::Static;
    std::uint64_t seed = 1;        // particle sampling / filter streams
    std::uint64_t truth_seed = 1;  // observation noise (and truth model noise)
    int n_particles = 100;
    std::filesystem::path output_dir = "out";

    PriorSpec prior = make_gaussian_prior(Vector::Constant(1, 0.5), Matrix::Identity(1, 1));
    ObservationModel obs_model{QuadraticOperator{}, Matrix::Constant(1, 1, 0.5)};
    MappingConfig mapping;

    // Static experiments: y is drawn as H(truth) + noise unless given.
    Vector truth = Vector::Constant(1, 3.0);
    std::optional<Vector> y;

    // Lorenz-63 experiments.
    Lorenz63Config dynamics;
    FilterSpec filter;
    int n_cycles = 500;
    int spin_up_cycles = kDefaultSpinUpCycles;
    std::optional<Vector> truth_initial;
    double initial_spread = 1.0;
    ForecastPrior forecast_prior = ForecastPrior::Gaussian;
    int snapshot_every = 10;
    std::vector<int> kde_cycles;  // empty means {n_cycles}

    KdeBandwidth kde_bandwidth;
    int kde_points = 512;

    /// Lorenz-63 experiment description derived from this config.
    SequentialExperiment sequential() const;
};

/// Builds a validated config from JSON, filling defaults per experiment kind.
/// Unknown keys and invalid values raise ConfigError naming the field.
ExperimentConfig parse_config(const nlohmann::json& doc);

/// Reads a JSON file, applies `key.path=value` overrides, then parses it.
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Fully resolved config in the same schema parse_config reads, so that
/// parse_config(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Sets a dotted-path field of `doc`. The value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace steinflow
