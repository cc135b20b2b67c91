#include "test_models.hpp"

#include <svprk/analysis.hpp>
#include <svprk/det_integrators.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace svprk;

namespace {

const NewtonConfig kCfg{};

double state_diff(const State& a, const State& b) {
    return std::max((a.q - b.q).lpNorm<Eigen::Infinity>(), (a.p - b.p).lpNorm<Eigen::Infinity>());
}

State equilibrium() { return {Vec{{0, 0, -1}}, Vec::Zero(3)}; }

// Global error at T = 1 from x0 for each h against a fine RATTLE reference; returns fitted slope.
double global_order(const MechanicalSystem& sys, Method m, const State& x0, const std::vector<int>& exps,
                    int ref_extra) {
    const IntegratorSpec ref_spec = IntegratorSpec::of(Method::rattle);
    const int ref_exp = exps.back() + ref_extra;
    const auto ref = simulate_deterministic(sys, ref_spec, x0, 1L << ref_exp, std::ldexp(1.0, -ref_exp)).back();
    std::vector<double> hs, errs;
    for (int e : exps) {
        const auto end = simulate_deterministic(sys, IntegratorSpec::of(m), x0, 1L << e, std::ldexp(1.0, -e)).back();
        hs.push_back(std::ldexp(1.0, -e));
        Vec d(6);
        d << end.q - ref.q, end.p - ref.p;
        errs.push_back(d.norm());
    }
    return fit_slope(hs, errs).slope;
}

}  // namespace

TEST_CASE("equilibrium is a fixed point of every deterministic scheme") {
    const auto sys = spherical_pendulum();
    const State x = equilibrium();
    const double h = 0.01;

    const auto v = vprk_step(sys, builtin_tableau("rattle_trapezoidal"), x, h);
    CHECK(state_diff(v.state, x) <= 1e-12);
    const auto r = rattle_step(sys, x, h);
    CHECK(state_diff(r.state, x) <= 1e-12);
    // force balance -e3 + 2 q Lambda = 0 at q = -e3 gives Lambda = -1/2
    for (const auto& lam : r.multipliers_used) CHECK(std::abs(lam[0] + 0.5) <= 1e-10);
    for (const auto& lam : v.multipliers_used) CHECK(std::abs(lam[0] + 0.5) <= 1e-10);

    const auto a = variational_euler_a_step(sys, x, h);
    CHECK((a.q - x.q).norm() <= 1e-12);
    CHECK(a.p_hat.norm() <= 1e-12);
    CHECK(std::abs(a.lambda1[0] + 0.5) <= 1e-12);
    const auto b = variational_euler_b_step(sys, x, h);
    CHECK((b.q - x.q).norm() <= 1e-12);
    CHECK(b.p_hat.norm() <= 1e-12);
    CHECK(state_diff(euler_a_projected_step(sys, x, h).state, x) <= 1e-12);
    CHECK(state_diff(euler_b_projected_step(sys, x, h).state, x) <= 1e-12);
}

TEST_CASE("planar rotation without gravity stays on the sphere") {
    const auto sys = spherical_pendulum({0.0, 0.0});
    const double w = 2.0;
    const State x{Vec{{1, 0, 0}}, Vec{{0, w, 0}}};
    const auto v = vprk_step(sys, builtin_tableau("rattle_trapezoidal"), x, 0.01);
    CHECK(std::abs(v.state.q.norm() - 1.0) <= 1e-12);
    CHECK(std::abs(v.state.q[2]) <= 1e-14);
    const auto r = rattle_step(sys, x, 0.01);
    CHECK(std::abs(r.state.q.norm() - 1.0) <= 1e-12);
    CHECK(std::abs(r.state.p.norm() - w) <= 1e-10);
}

TEST_CASE("VPRK long run keeps the constraints and bounded energy") {
    const auto sys = spherical_pendulum();
    std::mt19937_64 eng(21);
    const State x0 = testmodels::to_state(sys, testmodels::sphere_sample(eng));
    const auto spec = IntegratorSpec::of(Method::vprk);
    const auto traj = simulate_deterministic(sys, spec, x0, 1000, 1e-3);
    const auto dm = drift_metrics(traj);
    CHECK(dm.max_constraint <= 1e-10);
    CHECK(dm.max_hidden <= 1e-10);
    double emin = 1e300, emax = -1e300;
    for (double e : dm.energy_series) emin = std::min(emin, e), emax = std::max(emax, e);
    CHECK(emax - emin <= 1e-5);
}

TEST_CASE("RATTLE agrees with VPRK on the trapezoidal tableau") {
    const auto tab = builtin_tableau("rattle_trapezoidal");
    std::mt19937_64 eng(22);
    const auto pend = spherical_pendulum();
    const auto bead = testmodels::ellipsoid_bead();
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const State xp = testmodels::to_state(pend, testmodels::sphere_sample(eng));
        worst = std::max(worst, state_diff(rattle_step(pend, xp, 1e-2).state, vprk_step(pend, tab, xp, 1e-2).state));
        const State xb = testmodels::to_state(bead, testmodels::ellipsoid_sample(eng));
        worst = std::max(worst, state_diff(rattle_step(bead, xb, 1e-2).state, vprk_step(bead, tab, xb, 1e-2).state));
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("VPRK internal stages satisfy the Legendre and constraint lines") {
    const auto bead = testmodels::ellipsoid_bead();
    std::mt19937_64 eng(23);
    const State x = testmodels::to_state(bead, testmodels::ellipsoid_sample(eng));
    const auto r = vprk_step(bead, builtin_tableau("rattle_trapezoidal"), x, 0.02);
    REQUIRE(r.stages.Q.size() == 2);
    for (int i = 0; i < 2; ++i) {
        CHECK((r.stages.P[i] - bead.dL_dv(r.stages.Q[i], r.stages.V[i])).lpNorm<Eigen::Infinity>() <= 1e-10);
        CHECK(inf_norm(bead.constraint(r.stages.Q[i])) <= 1e-10);
    }
    const auto cr = constraint_residuals(bead, r.state.q, r.velocity);
    CHECK(cr.position <= 1e-11);
    CHECK(cr.velocity <= 1e-11);
}

TEST_CASE("three-stage Lobatto IIIA VPRK stays on T*S") {
    const Mat a{{0, 0, 0}, {5.0 / 24, 1.0 / 3, -1.0 / 24}, {1.0 / 6, 2.0 / 3, 1.0 / 6}};
    const ButcherTableau t(a, Vec{{1.0 / 6, 2.0 / 3, 1.0 / 6}});
    const auto sys = spherical_pendulum();
    State x{Vec{{1, 0, 0}}, Vec{{0, 0.5, 0.3}}};
    for (int k = 0; k < 50; ++k) {
        const auto r = vprk_step(sys, t, x, 0.05);
        x = r.state;
        const auto cr = constraint_residuals(sys, x.q, r.velocity);
        REQUIRE(cr.position <= 1e-11);
        REQUIRE(cr.velocity <= 1e-11);
    }
}

TEST_CASE("VPRK rejects tableaux violating the coefficient condition") {
    const auto sys = spherical_pendulum();
    CHECK_THROWS_AS(vprk_step(sys, builtin_tableau("euler_a"), equilibrium(), 0.01), ConditionViolated);
    CHECK_THROWS_AS(vprk_step(sys, builtin_tableau("implicit_euler"), equilibrium(), 0.01), ConditionViolated);
}

TEST_CASE("Euler A leaves the hidden constraint violated until projection") {
    const auto sys = spherical_pendulum();
    const State x{Vec{{1, 0, 0}}, Vec{{0, 0.8, 0.6}}};
    const auto mid = variational_euler_a_step(sys, x, 0.05);
    CHECK(inf_norm(sys.constraint(mid.q)) <= 1e-12);
    const Vec v_unprojected = legendre_inverse(sys, mid.q, mid.p_hat);
    CHECK(std::abs((sys.dg_dq(mid.q) * v_unprojected)[0]) > 1e-3);
    const auto full = euler_a_projected_step(sys, x, 0.05);
    CHECK(constraint_residuals(sys, full.state.q, full.velocity).velocity <= 1e-12);
}

TEST_CASE("Euler A and Euler B agree to first order") {
    // identical on the pendulum (constant mass, constant dL/dq)
    const auto pend = spherical_pendulum();
    const State y{Vec{{0.6, 0, -0.8}}, Vec{{0.4, 0.5, 0.3}}};
    CHECK(state_diff(euler_a_projected_step(pend, y, 0.01).state, euler_b_projected_step(pend, y, 0.01).state) <= 1e-15);

    const auto sys = testmodels::ellipsoid_bead();
    std::mt19937_64 eng(21);
    const State x = testmodels::to_state(sys, testmodels::ellipsoid_sample(eng));
    double prev = 0.0;
    for (int e = 5; e <= 10; ++e) {
        const double h = std::ldexp(1.0, -e);
        const double d = state_diff(euler_a_projected_step(sys, x, h).state, euler_b_projected_step(sys, x, h).state);
        CHECK(d <= 10.0 * h * h);
        if (prev > 0.0) CHECK(prev / d == Catch::Approx(4.0).margin(0.5));
        prev = d;
    }
}

TEST_CASE("projection step examples") {
    const auto sys = spherical_pendulum();
    const Vec q{{0, 0, -1}};
    const auto tangent = projection_step(sys, q, Vec{{0.3, -0.2, 0}}, 0.01);
    CHECK(tangent.lambda2.norm() <= 1e-15);
    CHECK((tangent.state.p - Vec{{0.3, -0.2, 0}}).norm() <= 1e-15);

    const auto normal = projection_step(sys, q, Vec{{0, 0, 1}}, 0.01);
    CHECK(normal.state.p.norm() <= 1e-15);
    CHECK(std::abs((sys.dg_dq(q) * normal.velocity)[0]) <= 1e-15);

    const Vec qq = Vec{{1, 2, 2}} / 3.0;
    const auto once = projection_step(sys, qq, Vec{{0.5, -0.1, 0.7}}, 0.01);
    const auto twice = projection_step(sys, qq, once.state.p, 0.01);
    CHECK((once.state.p - twice.state.p).norm() <= 1e-15);
}

TEST_CASE("projection with configuration-dependent mass") {
    const auto bead = testmodels::ellipsoid_bead();
    std::mt19937_64 eng(24);
    const auto [q, v] = testmodels::ellipsoid_sample(eng);
    const Vec p_hat = bead.dL_dv(q, v) + Vec{{0.3, -0.4, 0.2}};
    const auto pr = projection_step(bead, q, p_hat, 0.01);
    CHECK(constraint_residuals(bead, q, pr.velocity).velocity <= 1e-12);
    CHECK((pr.state.p - bead.dL_dv(q, pr.velocity)).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((pr.state.p - p_hat - 0.01 * bead.dg_dq(q).transpose() * pr.lambda2).norm() <= 1e-12);
}

TEST_CASE("global orders on the pendulum") {
    const auto sys = spherical_pendulum();
    const State x0{Vec{{1, 0, 0}}, Vec::Zero(3)};
    const std::vector<int> exps{4, 5, 6, 7, 8, 9};
    const double rattle = global_order(sys, Method::rattle, x0, exps, 10);
    CHECK(rattle >= 1.8);
    CHECK(rattle <= 2.2);
    const double ea = global_order(sys, Method::euler_a, x0, exps, 10);
    CHECK(ea >= 0.8);
    CHECK(ea <= 1.2);
    const double eb = global_order(sys, Method::euler_b, x0, exps, 10);
    CHECK(eb >= 0.8);
    CHECK(eb <= 1.2);
}

TEST_CASE("deterministic schemes on the configuration-dependent mass model") {
    const auto bead = testmodels::ellipsoid_bead();
    std::mt19937_64 eng(25);
    const State x0 = testmodels::to_state(bead, testmodels::ellipsoid_sample(eng));
    for (Method m : {Method::rattle, Method::vprk, Method::euler_a, Method::euler_b}) {
        const auto dm = drift_metrics(simulate_deterministic(bead, IntegratorSpec::of(m), x0, 200, 0.01));
        CHECK(dm.max_constraint <= 1e-11);
        CHECK(dm.max_hidden <= 1e-11);
    }
}
