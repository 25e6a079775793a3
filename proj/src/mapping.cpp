#include "steinflow/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "steinflow/obsgrad.hpp"

namespace steinflow {

void MappingConfig::validate() const
{
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "mapping.learning_rate must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, "mapping.beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "mapping.beta2 must lie in [0, 1)");
    require(adam_epsilon > 0.0, "mapping.adam_epsilon must be positive");
    require(grad_tol > 0.0, "mapping.grad_tol must be positive");
    require(max_iters >= 1, "mapping.max_iters must be at least 1");
    kernel.validate();
    if (obs_bandwidth) {
        obs_bandwidth->validate();
    }
}

ParticleMatrix kl_gradient(const Gram& gram, const ParticleMatrix& log_post_grads)
{
    const Eigen::Index n = gram.n_particles();
    const Eigen::Index d = gram.dim();
    require(log_post_grads.rows() == n && log_post_grads.cols() == d, "kl_gradient: gradient shape mismatch");
    ParticleMatrix out(n, d);
    const double scale = -1.0 / static_cast<double>(n);

#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index k = 0; k < d; ++k) {
            double acc = 0.0;
            for (Eigen::Index l = 0; l < n; ++l) {
                acc += gram.values(l, j) * log_post_grads(l, k) + gram.grad(l, j)[k];
            }
            out(j, k) = scale * acc;
        }
    }
    return out;
}

ParticleMatrix kl_gradient(const ParticleMatrix& states, const ParticleMatrix& log_post_grads,
                           const KernelConfig& cfg)
{
    return kl_gradient(gram(states, cfg), log_post_grads);
}

double mean_row_norm(const ParticleMatrix& m)
{
    if (m.rows() == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (Eigen::Index l = 0; l < m.rows(); ++l) {
        total += m.row(l).norm();
    }
    return total / static_cast<double>(m.rows());
}

AdamState AdamState::zeros(Eigen::Index rows, Eigen::Index cols)
{
    return {ParticleMatrix::Zero(rows, cols), ParticleMatrix::Zero(rows, cols), 0};
}

ParticleMatrix adam_step(const ParticleMatrix& grads, AdamState& state, const MappingConfig& cfg)
{
    require(state.first.rows() == grads.rows() && state.first.cols() == grads.cols(),
            "adam_step: accumulator shape mismatch");
    state.iteration += 1;
    const double t = static_cast<double>(state.iteration);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);

    state.first = cfg.beta1 * state.first + (1.0 - cfg.beta1) * grads;
    state.second = cfg.beta2 * state.second + (1.0 - cfg.beta2) * grads.cwiseProduct(grads);

    const auto m_hat = state.first.array() / bias1;
    const auto v_hat = state.second.array() / bias2;
    return (-cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon)).matrix();
}

Vector reflect(const VectorRef& x, const VectorRef& lower, const VectorRef& upper)
{
    require(x.size() == lower.size() && x.size() == upper.size(), "reflect: dimension mismatch");
    Vector out(x.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double lo = lower[k];
        const double hi = upper[k];
        if (x[k] >= lo && x[k] <= hi) {
            out[k] = x[k];
            continue;
        }
        const double width = hi - lo;
        double t = std::fmod(x[k] - lo, 2.0 * width);
        if (t < 0.0) {
            t += 2.0 * width;
        }
        if (t > width) {
            t = 2.0 * width - t;
        }
        out[k] = std::clamp(lo + t, lo, hi);
    }
    return out;
}

ParticleMatrix log_posterior_gradients(const ParticleMatrix& states, const PriorSpec& prior,
                                       const ObservationModel& obs_model, const VectorRef& y,
                                       const MappingConfig& cfg, const Gram& stein_gram)
{
    const EnsembleEvaluations evals = evaluate_ensemble(obs_model, states);

    ParticleMatrix like;
    const bool embeds = obs_model.backend() == Backend::RKHS || obs_model.backend() == Backend::RKHSNormalized;
    if (embeds && cfg.obs_bandwidth) {
        KernelConfig obs_kernel{select_bandwidth(states, *cfg.obs_bandwidth), *cfg.obs_bandwidth};
        like = likelihood_gradients(obs_model, evals, y, gram(states, obs_kernel));
    } else {
        like = likelihood_gradients(obs_model, evals, y, stein_gram);
    }

#pragma omp parallel for schedule(static)
    for (Eigen::Index l = 0; l < states.rows(); ++l) {
        like.row(l) += grad_log_prior(prior, states.row(l).transpose()).transpose();
    }
    return like;
}

namespace {

// Lexicographic order of the particle rows. Running the flow on the sorted
// ensemble makes every floating-point reduction independent of the caller's
// particle order.
std::vector<Eigen::Index> canonical_order(const ParticleMatrix& states)
{
    std::vector<Eigen::Index> order(static_cast<std::size_t>(states.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index k = 0; k < states.cols(); ++k) {
            if (states(a, k) != states(b, k)) {
                return states(a, k) < states(b, k);
            }
        }
        return false;
    });
    return order;
}

ParticleMatrix unsort(const ParticleMatrix& sorted, const std::vector<Eigen::Index>& order)
{
    ParticleMatrix out(sorted.rows(), sorted.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.row(order[i]) = sorted.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

}  // namespace

MappingResult map_to_posterior(Ensemble ensemble, const PriorSpec& prior, const ObservationModel& obs_model,
                               const VectorRef& y, const MappingConfig& cfg, const IterationObserver& observer)
{
    cfg.validate();
    require(ensemble.n_particles() >= 1, "map_to_posterior: empty ensemble");
    require(prior_dim(prior) == ensemble.dim(), "map_to_posterior: prior and ensemble dimensions differ");
    obs_model.check_state_dim(ensemble.dim());
    require(y.size() == obs_model.obs_dim(), "map_to_posterior: observation dimension mismatch");
    if (!ensemble.states.allFinite()) {
        throw NumericalError("map_to_posterior: non-finite particle in the input ensemble");
    }

    const auto* box = std::get_if<UniformPrior>(&prior);
    MappingDiagnostics diag;
    AdamState adam = AdamState::zeros(ensemble.n_particles(), ensemble.dim());

    const std::vector<Eigen::Index> order = canonical_order(ensemble.states);
    ParticleMatrix states(ensemble.n_particles(), ensemble.dim());
    for (std::size_t i = 0; i < order.size(); ++i) {
        states.row(static_cast<Eigen::Index>(i)) = ensemble.states.row(order[i]);
    }

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        if (observer) {
            observer(iter, unsort(states, order));
        }
        const KernelConfig kernel = cfg.kernel.resolved(states);
        diag.final_gamma = kernel.gamma;
        const Gram stein_gram = gram(states, kernel);
        const ParticleMatrix post = log_posterior_gradients(states, prior, obs_model, y, cfg, stein_gram);
        const ParticleMatrix grad = kl_gradient(stein_gram, post);

        const double norm = mean_row_norm(grad);
        diag.grad_norm_history.push_back(norm);
        diag.iterations_run = iter + 1;
        if (!std::isfinite(norm)) {
            throw NumericalError("map_to_posterior: non-finite KL gradient at iteration " + std::to_string(iter + 1));
        }
        if (norm < cfg.grad_tol) {
            diag.converged = true;
            break;
        }

        states += adam_step(grad, adam, cfg);
        if (box != nullptr) {
            for (Eigen::Index l = 0; l < states.rows(); ++l) {
                states.row(l) = reflect(states.row(l).transpose(), box->lower, box->upper).transpose();
            }
        }
        if (!states.allFinite()) {
            throw NumericalError("map_to_posterior: non-finite particle after iteration " + std::to_string(iter + 1));
        }
    }
    ensemble.states = unsort(states, order);
    if (observer && !diag.converged) {
        observer(diag.iterations_run, ensemble.states);
    }
    return {std::move(ensemble), std::move(diag)};
}

}  // namespace steinflow
