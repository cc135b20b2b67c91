#include "test_models.hpp"

#include <svprk/analysis.hpp>
#include <svprk/stoch_integrators.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace svprk;

namespace {

double state_diff(const State& a, const State& b) {
    return std::max((a.q - b.q).lpNorm<Eigen::Infinity>(), (a.p - b.p).lpNorm<Eigen::Infinity>());
}

StochasticQuadrature trapezoid_quad() { return StochasticQuadrature::from_weights(Vec{{0.5, 0.5}}); }

}  // namespace

TEST_CASE("quadrature weights must match the stage count") {
    auto q = trapezoid_quad();
    CHECK_NOTHROW(q.validate(2));
    CHECK_THROWS_AS(q.validate(3), InvalidArgument);
    CHECK(q.kappa.norm() == 0.0);
    q.kappa = Vec::Zero(1);
    CHECK_THROWS_AS(q.validate(2), InvalidArgument);
}

TEST_CASE("zero noise reduces stochastic schemes to their deterministic counterparts") {
    const auto sys = spherical_pendulum();
    const auto quiet = spherical_pendulum({1.0, 0.0});
    const auto tab = builtin_tableau("rattle_trapezoidal");
    std::mt19937_64 eng(31);
    for (int i = 0; i < 20; ++i) {
        const State x = testmodels::to_state(sys, testmodels::sphere_sample(eng));
        const Vec dW = 0.1 * testmodels::gaussian(eng, 3);
        const auto det = vprk_step(sys, tab, x, 0.01);
        CHECK(state_diff(stochastic_vprk_step(sys, tab, trapezoid_quad(), x, Vec::Zero(3), 0.01).state, det.state) ==
              0.0);
        CHECK(state_diff(stochastic_vprk_step(quiet, tab, trapezoid_quad(), x, dW, 0.01).state, det.state) == 0.0);

        const auto eb = euler_b_projected_step(sys, x, 0.01);
        CHECK(state_diff(stochastic_variational_euler_step(sys, x, Vec::Zero(3), 0.01).state, eb.state) == 0.0);
        CHECK(state_diff(stochastic_variational_euler_step(quiet, x, dW, 0.01).state, eb.state) == 0.0);
    }
}

TEST_CASE("noise at the equilibrium leaves a tangent momentum") {
    const auto sys = spherical_pendulum();
    const State x{Vec{{0, 0, -1}}, Vec::Zero(3)};
    const Vec dW{{0.05, -0.03, 0.08}};
    const auto r = stochastic_variational_euler_step(sys, x, dW, 0.01);
    CHECK(std::abs(r.state.q.dot(r.velocity)) <= 1e-10);
    CHECK(std::abs(r.state.q.norm() - 1.0) <= 1e-12);
    CHECK(r.state.p.norm() > 0.01);
    const auto s = stochastic_vprk_step(sys, builtin_tableau("rattle_trapezoidal"), trapezoid_quad(), x, dW, 0.01);
    CHECK(std::abs(s.state.q.dot(s.velocity)) <= 1e-10);
}

TEST_CASE("stochastic schemes on a configuration-dependent mass model") {
    const auto bead = testmodels::ellipsoid_bead();
    std::mt19937_64 eng(32);
    const State x = testmodels::to_state(bead, testmodels::ellipsoid_sample(eng));
    const Vec dW = 0.1 * testmodels::gaussian(eng, 2);
    const auto a = stochastic_variational_euler_step(bead, x, dW, 0.01);
    const auto b = stochastic_vprk_step(bead, builtin_tableau("rattle_trapezoidal"), trapezoid_quad(), x, dW, 0.01);
    for (const auto* r : {&a, &b}) {
        const auto cr = constraint_residuals(bead, r->state.q, r->velocity);
        CHECK(cr.position <= 1e-11);
        CHECK(cr.velocity <= 1e-11);
    }
    CHECK(state_diff(a.state, b.state) <= 0.05);  // both are consistent with the same increment
}

TEST_CASE("Euler-Maruyama reference at the equilibrium") {
    const auto quiet = spherical_pendulum({1.0, 0.0});
    const Vec q{{0, 0, -1}};
    const auto r = euler_maruyama_reference_step(quiet, q, Vec::Zero(3), Vec{{0.1, 0.2, 0.3}}, 0.01);
    CHECK((r.q - q).norm() == 0.0);
    CHECK(r.p.norm() <= 1e-15);
}

TEST_CASE("Euler-Maruyama with zero increment is explicit Euler on the reduced ODE") {
    const auto sys = spherical_pendulum();
    const Vec q{{0.6, 0.0, -0.8}}, v{{0.3, 0.5, 0.225}};
    const double h = 0.01;
    const auto r = euler_maruyama_reference_step(sys, q, v, Vec::Zero(3), h);
    const auto rc = reduced_drift_diffusion(sys, q, v);
    CHECK((r.q - (q + h * v)).norm() == 0.0);
    CHECK((r.p - (v + h * rc.drift_p)).norm() <= 1e-16);
    CHECK((r.v - r.p).norm() <= 1e-16);
}

TEST_CASE("single step against Euler-Maruyama with a shared increment") {
    // Deterministic part of the difference is O(h^2). With dW = sqrt(h) xi the leading term
    // h (I - q q^T) dgamma . dW is O(h^1.5) and odd in dW, so the antithetic average is O(h^2).
    const auto sys = spherical_pendulum();
    const Vec q{{0.6, 0.0, -0.8}}, v{{0.3, 0.5, 0.225}};
    const Vec xi{{0.9, -0.4, 1.3}};
    auto diff = [&](double h, const Vec& dW) {
        const auto a = stochastic_variational_euler_step(sys, {q, v}, dW, h);
        const auto b = euler_maruyama_reference_step(sys, q, v, v, dW, h);
        Vec d(6);
        d << a.state.q - b.q, a.state.p - b.p;
        return d;
    };
    double prev_zero = 0.0, prev_sym = 0.0, prev_path = 0.0;
    for (int e = 5; e <= 12; ++e) {
        const double h = std::ldexp(1.0, -e);
        const Vec dW = std::sqrt(h) * xi;
        const double zero = diff(h, Vec::Zero(3)).norm();
        const Vec plus = diff(h, dW), minus = diff(h, Vec{-dW});
        const double sym = (0.5 * (plus + minus)).norm(), path = plus.norm();
        CHECK(zero <= 5.0 * h * h);
        CHECK(path <= 5.0 * std::pow(h, 1.5));
        if (prev_zero > 0.0) {
            CHECK(prev_zero / zero == Catch::Approx(4.0).margin(0.3));
            CHECK(prev_sym / sym == Catch::Approx(4.0).margin(0.5));
            CHECK(prev_path / path == Catch::Approx(std::pow(2.0, 1.5)).margin(0.3));
        }
        prev_zero = zero, prev_sym = sym, prev_path = path;
    }
}

TEST_CASE("Euler-Maruyama drifts off the sphere while the variational scheme does not") {
    const auto sys = spherical_pendulum();
    const auto paths = BrownianPaths::lazy(77, 1, 3, 1024, {0.0, 1.0});
    const State x0{Vec{{1, 0, 0}}, Vec::Zero(3)};
    const double h = paths.step_size();
    const auto em = drift_metrics(simulate_path(sys, IntegratorSpec::of(Method::euler_maruyama_ref), x0, paths, 0, h));
    const auto sve =
        drift_metrics(simulate_path(sys, IntegratorSpec::of(Method::stochastic_variational_euler), x0, paths, 0, h));
    CHECK(sve.max_constraint <= 1e-10);
    CHECK(sve.max_hidden <= 1e-10);
    CHECK(em.max_constraint > 1e-4);
    CHECK(em.max_constraint > 1e5 * sve.max_constraint);

    // halving h roughly halves the accumulated drift
    const auto em2 = drift_metrics(
        simulate_path(sys, IntegratorSpec::of(Method::euler_maruyama_ref), x0, paths.coarsen(2), 0, 2 * h));
    CHECK(em2.max_constraint / em.max_constraint == Catch::Approx(2.0).margin(0.6));
}

TEST_CASE("stochastic VPRK converges pathwise to a fine Euler-Maruyama reference") {
    const auto sys = spherical_pendulum();
    const long M = 16;
    const auto paths = BrownianPaths::lazy(99, M, 3, 1L << 13, {0.0, 1.0});
    const State x0{Vec{{1, 0, 0}}, Vec::Zero(3)};
    std::vector<double> hs, errs;
    for (int e = 3; e <= 5; ++e) {
        const long f = 1L << (13 - e);
        std::vector<double> sq(M);
        for (long p = 0; p < M; ++p) {
            const double hr = paths.step_size();
            const auto ref = simulate_path(sys, IntegratorSpec::of(Method::euler_maruyama_ref), x0, paths, p, hr).back();
            const auto s =
                simulate_path(sys, IntegratorSpec::of(Method::stochastic_vprk), x0, paths.coarsen(f), p, hr * f).back();
            sq[p] = (s.q - ref.q).squaredNorm() + (s.p - ref.p).squaredNorm();
        }
        hs.push_back(std::ldexp(1.0, -e));
        errs.push_back(std::sqrt(pairwise_mean(sq)));
    }
    const auto fit = fit_slope(hs, errs);
    CHECK(fit.slope >= 0.7);
    CHECK(errs.back() <= 0.1);
}
