#include "test_models.hpp"

#include <svprk/det_integrators.hpp>
#include <svprk/reduction.hpp>
#include <svprk/stoch_integrators.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace svprk;

namespace {

double max_abs(const Mat& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Mass diag(1, 2, 4), linear constraint q1 + q2 + q3 = 0, harmonic potential.
MechanicalSystem linear_constraint_system() {
    MechanicalSystem s;
    s.name = "linear";
    s.dim_q = 3;
    s.dim_g = 1;
    s.num_noise = 0;
    const Vec m{{1.0, 2.0, 4.0}};
    s.lagrangian = [m](const Vec& q, const Vec& v) { return 0.5 * m.dot(v.cwiseProduct(v)) - 0.5 * q.squaredNorm(); };
    s.dL_dq = [](const Vec& q, const Vec&) { return Vec{-q}; };
    s.dL_dv = [m](const Vec&, const Vec& v) { return Vec{m.cwiseProduct(v)}; };
    s.d2L_dv2 = [m](const Vec&, const Vec&) { return Mat{m.asDiagonal()}; };
    s.d2L_dqdv = [](const Vec&, const Vec&) { return Mat{Mat::Zero(3, 3)}; };
    s.constraint = [](const Vec& q) { return Vec{{q.sum()}}; };
    s.dg_dq = [](const Vec&) { return Mat{Mat::Ones(1, 3)}; };
    s.d2g_dq2_vv = [](const Vec&, const Vec&) { return Vec{Vec::Zero(1)}; };
    return s;
}

}  // namespace

TEST_CASE("pendulum P is 4 and B is q q^T") {
    const auto sys = spherical_pendulum();
    std::mt19937_64 eng(3);
    for (int i = 0; i < 50; ++i) {
        const auto [q, v] = testmodels::sphere_sample(eng);
        const Mat P = compute_P(sys, q, v);
        REQUIRE(P.rows() == 1);
        CHECK(std::abs(P(0, 0) - 4.0) <= 1e-12);
        const Mat B = compute_B(sys, q, v);
        CHECK(max_abs(B - q * q.transpose()) <= 1e-12);
        CHECK((B * v).norm() <= 1e-12);  // v is tangent
    }
}

TEST_CASE("diagonal mass and linear constraint give P = G M^-1 G^T") {
    const auto sys = linear_constraint_system();
    const Vec q{{1.0, -0.5, -0.5}}, v{{0.2, 0.1, -0.3}};
    const Mat P = compute_P(sys, q, v);
    CHECK(std::abs(P(0, 0) - (1.0 + 0.5 + 0.25)) <= 1e-14);
    const Mat B = compute_B(sys, q, v);
    CHECK(max_abs(B * B - B) <= 1e-12);
}

TEST_CASE("rank-deficient constraint Jacobian") {
    const auto sys = spherical_pendulum();
    CHECK_THROWS_AS(compute_P(sys, Vec::Zero(3), Vec::Zero(3)), RankDeficient);
    CHECK_THROWS_AS(compute_B(sys, Vec::Zero(3), Vec::Zero(3)), RankDeficient);
}

TEST_CASE("projection identities at random on-manifold points") {
    std::mt19937_64 eng(4);
    const auto pend = spherical_pendulum();
    const auto bead = testmodels::ellipsoid_bead();
    for (int i = 0; i < 100; ++i) {
        for (int which = 0; which < 2; ++which) {
            const auto& sys = which ? bead : pend;
            const auto [q, v] = which ? testmodels::ellipsoid_sample(eng) : testmodels::sphere_sample(eng);
            const auto pm = projection_matrices(sys, q, v);
            const Mat I = Mat::Identity(3, 3);
            CHECK(max_abs((I - pm.B) * pm.B) <= 1e-10);
            CHECK(max_abs(pm.B * pm.B - pm.B) <= 1e-10);
            const Vec t = (I - pm.B) * pm.G.transpose() * pm.apply_Pinv(sys.d2g_dq2_vv(q, v));
            CHECK(t.lpNorm<Eigen::Infinity>() <= 1e-10);
            CHECK(max_abs(pm.P - pm.P.transpose()) <= 1e-12);
        }
    }
}

TEST_CASE("reduced drift vanishes at the equilibrium") {
    const auto sys = spherical_pendulum();
    const auto rc = reduced_drift_diffusion(sys, Vec{{0, 0, -1}}, Vec::Zero(3));
    CHECK(rc.drift_p.lpNorm<Eigen::Infinity>() <= 1e-15);
    REQUIRE(rc.diffusion_p.cols() == 3);
    // only the tangential parts of cos(q_i) e_i survive: columns 1 and 2 are e_1, e_2; column 3 is normal
    CHECK(std::abs(rc.diffusion_p(0, 0) - 1.0) <= 1e-15);
    CHECK(std::abs(rc.diffusion_p(1, 1) - 1.0) <= 1e-15);
    CHECK(rc.diffusion_p.col(2).norm() <= 1e-15);
}

TEST_CASE("no stochastic potential means no diffusion") {
    const auto sys = spherical_pendulum({1.0, 0.0});
    const auto rc = reduced_drift_diffusion(sys, Vec{{1, 0, 0}}, Vec{{0, 1, 0}});
    CHECK(rc.diffusion_p.norm() == 0.0);
}

TEST_CASE("centripetal drift on the equator") {
    // q = e1, v = e2, gravity off: the constrained acceleration is -|v|^2 q
    const auto sys = spherical_pendulum({0.0, 0.0});
    const auto rc = reduced_drift_diffusion(sys, Vec{{1, 0, 0}}, Vec{{0, 1, 0}});
    CHECK(std::abs(rc.drift_p[0] + 1.0) <= 1e-14);
    CHECK(std::abs(rc.drift_p[1]) <= 1e-14);
    CHECK(std::abs(rc.drift_p[2]) <= 1e-14);
}

TEST_CASE("reduced drift matches a short RATTLE step") {
    // one Euler-Maruyama step of the reduced ODE and one RATTLE step agree to O(h^2)
    const auto sys = spherical_pendulum({1.0, 0.0});
    const Vec q{{0.6, 0.0, -0.8}}, v{{0.3, 0.5, 0.225}};
    REQUIRE(std::abs(q.dot(v)) <= 1e-12);
    double prev = 0.0;
    for (int e = 6; e <= 10; ++e) {
        const double h = std::ldexp(1.0, -e);
        const auto em = euler_maruyama_reference_step(sys, q, v, Vec::Zero(3), h);
        const auto rt = rattle_step(sys, {q, v}, h);
        const double d = std::max((em.q - rt.state.q).norm(), (em.p - rt.state.p).norm());
        CHECK(d <= 5.0 * h * h);
        if (prev > 0.0) CHECK(prev / d == Catch::Approx(4.0).margin(0.4));
        prev = d;
    }
}

TEST_CASE("Stratonovich correction vanishes: Heun and Euler-Maruyama agree beyond first order") {
    // Both schemes share the Brownian increment. Their difference is h/2 (d sigma/dq . v) dW + O(h^2):
    // odd in dW, so the antithetic average is O(h^2) while a single path is O(h^1.5).
    const auto sys = spherical_pendulum();
    const Vec q{{0.6, 0.0, -0.8}}, v{{0.3, 0.5, 0.225}};
    const Vec xi{{0.7, -1.1, 0.4}};
    auto heun_minus_em = [&](double h, const Vec& dW) {
        const auto c0 = reduced_drift_diffusion(sys, q, v);
        const Vec qp = q + h * v;
        const Vec pp = v + h * c0.drift_p + c0.diffusion_p * dW;
        const Vec vp = legendre_inverse(sys, qp, pp);
        const auto c1 = reduced_drift_diffusion(sys, qp, vp);
        const Vec qh = q + 0.5 * h * (v + vp);
        const Vec ph = v + 0.5 * h * (c0.drift_p + c1.drift_p) + 0.5 * (c0.diffusion_p + c1.diffusion_p) * dW;
        Vec d(6);
        d << qh - qp, ph - pp;
        return d;
    };
    double prev_sym = 0.0, prev_path = 0.0;
    for (int e = 6; e <= 12; ++e) {
        const double h = std::ldexp(1.0, -e);
        const Vec dW = std::sqrt(h) * xi;
        const Vec a = heun_minus_em(h, dW), b = heun_minus_em(h, Vec{-dW});
        const double sym = (0.5 * (a + b)).norm(), path = a.norm();
        CHECK(path <= 10.0 * std::pow(h, 1.5));
        if (prev_sym > 0.0) {
            CHECK(prev_sym / sym == Catch::Approx(4.0).margin(0.4));
            CHECK(prev_path / path >= 2.6);
        }
        prev_sym = sym;
        prev_path = path;
    }
}
