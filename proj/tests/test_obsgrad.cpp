#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "steinflow/diagnostics.hpp"
#include "steinflow/obsgrad.hpp"
#include "steinflow/serial.hpp"
#include "support.hpp"

using namespace steinflow;

namespace {

KernelConfig fixed(double gamma) { return {gamma, BandwidthPolicy::fixed(gamma)}; }

Vector v1(double a) { return Vector::Constant(1, a); }

ObservationModel quadratic1() { return ObservationModel(QuadraticOperator{}, Matrix::Constant(1, 1, 0.5)); }

ParticleMatrix column(const std::vector<double>& xs)
{
    ParticleMatrix s(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s(static_cast<Eigen::Index>(i), 0) = xs[i];
    }
    return s;
}

std::vector<double> equispaced(double lo, double hi, int n) { return linspace(lo, hi, static_cast<std::size_t>(n)); }

EnsembleEvaluations constant_obs(const ParticleMatrix& states, double c)
{
    return {states, ParticleMatrix::Constant(states.rows(), 1, c)};
}

}  // namespace

TEST_CASE("rkhs_grad_H simple cases")
{
    const KernelConfig k = fixed(1.0);
    const ObservationModel q = quadratic1();
    const EnsembleEvaluations one = evaluate_ensemble(q, column({0.7}));
    CHECK(rkhs_grad_H(one, v1(0.7), k).norm() == 0.0);

    for (double a : {0.3, 1.0, 2.0}) {
        const EnsembleEvaluations pair = constant_obs(column({-a, a}), 4.2);
        CHECK(rkhs_grad_H(pair, v1(0.0), k).norm() < 1e-15);
    }
    CHECK_THROWS_AS(rkhs_grad_H(one, Vector::Zero(2), k), InputError);
}

TEST_CASE("rkhs_grad_H matches a dense-quadrature oracle")
{
    // For N equispaced particles on [a, b] the estimator is a Riemann sum of
    // (1/(b - a)) * integral s^2 dK(x, s)/dx ds; the oracle evaluates that
    // integral with a much finer trapezoid rule.
    const KernelConfig k = fixed(0.5);
    const int n = 200;
    const EnsembleEvaluations evals = evaluate_ensemble(quadratic1(), column(equispaced(-4.0, 4.0, n)));
    for (double x : {-1.0, 0.0, 0.5, 1.0, 2.0}) {
        const std::vector<double> s = equispaced(-4.0, 4.0, 200001);
        std::vector<double> f(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double d = x - s[i];
            f[i] = s[i] * s[i] * (-d / 0.25) * std::exp(-d * d / 0.5);
        }
        const double oracle = trapezoid(s, f) * (n - 1) / (8.0 * n);
        CHECK(rkhs_grad_H(evals, v1(x), k)(0, 0) == doctest::Approx(oracle).epsilon(0.02).scale(0.01));
    }
}

TEST_CASE("normalized estimator simple cases")
{
    const KernelConfig k = fixed(0.8);
    const EnsembleEvaluations one = evaluate_ensemble(quadratic1(), column({0.7}));
    for (double x : {-2.0, 0.7, 3.0}) {
        CHECK(rkhs_grad_H_normalized(one, v1(x), k).norm() == 0.0);
    }
    const ParticleMatrix s = testing::random_states(30, 2, 12);
    const EnsembleEvaluations c{s, ParticleMatrix::Constant(30, 1, -1.5)};
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
        CHECK(rkhs_grad_H_normalized(c, testing::random_vector(2, rng), k).norm() < 1e-12);
    }
}

TEST_CASE("normalized estimator is the derivative of the Nadaraya-Watson estimate")
{
    const ParticleMatrix s = testing::random_states(40, 2, 21);
    const ObservationModel q(QuadraticOperator{}, Matrix::Identity(2, 2));
    const EnsembleEvaluations evals = evaluate_ensemble(q, s);
    const double gamma = 0.6;
    const auto nw = [&](const Vector& x) {
        Vector num = Vector::Zero(2);
        double den = 0.0;
        for (Eigen::Index j = 0; j < s.rows(); ++j) {
            const double w = std::exp(-(x - s.row(j).transpose()).squaredNorm() / (2 * gamma * gamma));
            num += w * evals.obs_values.row(j).transpose();
            den += w;
        }
        return Vector(num / den);
    };
    std::mt19937_64 rng(5);
    for (int t = 0; t < 20; ++t) {
        const Vector x = testing::random_vector(2, rng, -1.5, 1.5);
        const Matrix fd = testing::fd_jacobian(nw, x, 1e-6);
        CHECK((rkhs_grad_H_normalized(evals, x, fixed(gamma)) - fd).norm() < 1e-6 * std::max(1.0, fd.norm()));
    }
}

TEST_CASE("normalized estimator is closer to the analytic gradient than the plain one")
{
    const KernelConfig k = fixed(0.5);
    const EnsembleEvaluations evals = evaluate_ensemble(quadratic1(), column(equispaced(-4.0, 4.0, 200)));
    for (double x : {-1.0, 0.5, 1.0, 2.0}) {
        const double plain = rkhs_grad_H(evals, v1(x), k)(0, 0);
        const double norm = rkhs_grad_H_normalized(evals, v1(x), k)(0, 0);
        CHECK(std::abs(norm - 2 * x) < std::abs(plain - 2 * x));
        CHECK(norm == doctest::Approx(2 * x).epsilon(0.01));
    }
}

TEST_CASE("normalized estimator converges as the ensemble gets denser")
{
    // Uniform draws on [-3, 3]; the sup error over the central half of the
    // range, averaged over replicate ensembles, should shrink as N_p doubles.
    const KernelConfig k = fixed(0.3);
    double previous = INFINITY;
    for (int n : {50, 100, 200, 400}) {
        double mean_worst = 0.0;
        const int reps = 20;
        for (int r = 0; r < reps; ++r) {
            std::mt19937_64 rng(stream_seed(2024, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)));
            std::uniform_real_distribution<double> unif(-3.0, 3.0);
            std::vector<double> xs(static_cast<std::size_t>(n));
            for (double& x : xs) {
                x = unif(rng);
            }
            const EnsembleEvaluations evals = evaluate_ensemble(quadratic1(), column(xs));
            double worst = 0.0;
            for (double x : linspace(-1.5, 1.5, 61)) {
                worst = std::max(worst, std::abs(rkhs_grad_H_normalized(evals, v1(x), k)(0, 0) - 2 * x));
            }
            mean_worst += worst / reps;
        }
        MESSAGE("N_p = " << n << ": mean sup error " << mean_worst);
        CHECK(mean_worst <= 1.1 * previous);
        previous = mean_worst;
    }
}

TEST_CASE("plain estimator underestimates in the tails")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ParticleMatrix s = testing::random_states(200, 1, seed);
        const EnsembleEvaluations evals = evaluate_ensemble(quadratic1(), s);
        const KernelConfig k{select_bandwidth(s, BandwidthPolicy::trace_fraction(0.5)), BandwidthPolicy::trace_fraction(0.5)};
        std::vector<double> xs = marginal(s, 0);
        std::sort(xs.begin(), xs.end());
        for (int i = 0; i < 5; ++i) {
            for (double x : {xs[static_cast<std::size_t>(i)], xs[xs.size() - 1 - static_cast<std::size_t>(i)]}) {
                CHECK(std::abs(rkhs_grad_H(evals, v1(x), k)(0, 0)) <= std::abs(2 * x));
            }
        }
    }
}

TEST_CASE("perturbation matrices")
{
    const ObservationModel lin(LinearOperator{Matrix::Constant(1, 1, 2.0)}, Matrix::Identity(1, 1));
    const Perturbations two = perturbation_matrices(evaluate_ensemble(lin, column({0.0, 1.0})));
    CHECK(two.states(0, 0) == doctest::Approx(-0.5));
    CHECK(two.states(0, 1) == doctest::Approx(0.5));
    CHECK(perturbation_matrices(evaluate_ensemble(lin, column({2.5, 2.5, 2.5}))).states.norm() == 0.0);

    const ParticleMatrix s = testing::random_states(25, 3, 8);
    const ObservationModel q(QuadraticOperator{}, Matrix::Identity(3, 3));
    const Perturbations p = perturbation_matrices(evaluate_ensemble(q, s));
    CHECK(p.states.rowwise().sum().cwiseAbs().maxCoeff() < 1e-13);
    CHECK(p.obs.rowwise().sum().cwiseAbs().maxCoeff() < 1e-13);
    CHECK((p.states * p.states.transpose() - sample_covariance(s)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(perturbation_matrices(evaluate_ensemble(q, testing::random_states(1, 3, 1))), InputError);
}

TEST_CASE("ensemble tangent")
{
    const ObservationModel twice(LinearOperator{Matrix::Constant(1, 1, 2.0)}, Matrix::Identity(1, 1));
    CHECK(ensemble_tangent(evaluate_ensemble(twice, column({0.0, 1.0})))(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    for (double a : {0.5, 3.0}) {
        CHECK(std::abs(ensemble_tangent(evaluate_ensemble(quadratic1(), column({-a, a})))(0, 0)) < 1e-14);
    }
    CHECK_THROWS_AS(ensemble_tangent(evaluate_ensemble(quadratic1(), column({0.1, 0.1, 0.1}))), NumericalError);

    // Rank-deficient ensembles still give a finite pseudoinverse answer.
    ParticleMatrix flat(4, 2);
    flat << 0, 1, 1, 1, 2, 1, 3, 1;
    const ObservationModel id2(LinearOperator{Matrix::Identity(2, 2)}, Matrix::Identity(2, 2));
    const Matrix t = ensemble_tangent(evaluate_ensemble(id2, flat));
    CHECK(t.allFinite());
    CHECK(t(0, 0) == doctest::Approx(1.0));
    CHECK(t(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("ensemble tangent recovers linear maps and satisfies the Kalman identity")
{
    std::mt19937_64 rng(99);
    for (Eigen::Index nx : {1, 2, 3}) {
        for (Eigen::Index ny : {1, 2, 3}) {
            const Matrix a = Matrix::Random(ny, nx) + 2.0 * Matrix::Identity(ny, nx);
            const ObservationModel lin(LinearOperator{a}, Matrix::Identity(ny, ny));
            const EnsembleEvaluations evals = evaluate_ensemble(lin, testing::random_states(20, nx, rng()));
            const Matrix t = ensemble_tangent(evals);
            CHECK((t - a).cwiseAbs().maxCoeff() < 1e-8);
        }
        const ObservationModel q(QuadraticOperator{}, Matrix::Identity(nx, nx));
        const EnsembleEvaluations evals = evaluate_ensemble(q, testing::random_states(20, nx, rng()));
        const Perturbations p = perturbation_matrices(evals);
        const Matrix t = ensemble_tangent(evals);
        CHECK((p.states * p.states.transpose() * t.transpose() - p.states * p.obs.transpose()).cwiseAbs().maxCoeff() <
              1e-8);
    }
}

TEST_CASE("parallel likelihood gradients are bit-identical to the serial reference")
{
    const ParticleMatrix s = testing::random_states(120, 3, 31, 2.0);
    const Vector y = Vector::Constant(3, 4.0);
    const KernelConfig k = fixed(0.9);
    for (Backend b : {Backend::Exact, Backend::RKHS, Backend::RKHSNormalized, Backend::EnsembleSpace}) {
        const ObservationModel m(AbsoluteOperator{}, 0.5 * Matrix::Identity(3, 3), b);
        const EnsembleEvaluations par = evaluate_ensemble(m, s);
        const EnsembleEvaluations ser = serial::evaluate_ensemble(m, s);
        CHECK(par.obs_values == ser.obs_values);
        CHECK(likelihood_gradients(m, par, y, gram(s, k)) == serial::likelihood_gradients(m, ser, y, k));
    }
}

TEST_CASE("Gram-based operator gradients agree with the pointwise estimators")
{
    const ParticleMatrix s = testing::random_states(30, 2, 17);
    const KernelConfig k = fixed(0.7);
    const Gram g = gram(s, k);
    for (Backend b : {Backend::RKHS, Backend::RKHSNormalized}) {
        const ObservationModel m(QuadraticOperator{}, Matrix::Identity(2, 2), b);
        const EnsembleEvaluations evals = evaluate_ensemble(m, s);
        const std::vector<Matrix> grads = operator_gradients(m, evals, g);
        for (Eigen::Index l = 0; l < s.rows(); ++l) {
            const Matrix ref = b == Backend::RKHS ? rkhs_grad_H(evals, s.row(l).transpose(), k)
                                                  : rkhs_grad_H_normalized(evals, s.row(l).transpose(), k);
            CHECK((grads[static_cast<std::size_t>(l)] - ref).norm() < 1e-12);
        }
    }
}
