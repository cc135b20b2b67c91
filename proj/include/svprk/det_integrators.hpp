#pragma once

#include <svprk/legendre.hpp>
#include <svprk/model.hpp>
#include <svprk/solver.hpp>
#include <svprk/tableau.hpp>

#include <optional>
#include <span>
#include <vector>

namespace svprk {

/// Internal stage values Q^i, V^i, P^i and multipliers Lambda^i of one step.
struct InternalStages {
    std::vector<Vec> Q;
    std::vector<Vec> V;
    std::vector<Vec> P;
    std::vector<Vec> Lambda;
};

struct StepResult {
    State state;
    Vec velocity;  ///< v_{k+1}, Legendre-consistent with state
    InternalStages stages;
    std::vector<Vec> multipliers_used;
    int newton_iters = 0;
};

/// Output of an Euler half step: (q_{k+1}, p_hat) before the projection.
struct IntermediateState {
    Vec q;
    Vec p_hat;
    Vec v_hat;
    Vec lambda1;
    int newton_iters = 0;
};

struct ProjectedState {
    State state;
    Vec velocity;
    Vec lambda2;
    int newton_iters = 0;
};

/// Optional warm start: multipliers of the previous step, in the order of multipliers_used.
using WarmStart = std::span<const Vec>;

namespace detail {

inline Vec warm_or_zero(WarmStart warm, std::size_t i, int k) {
    if (i < warm.size() && warm[i].size() == k) return warm[i];
    return Vec::Zero(k);
}

inline void check_dims(const MechanicalSystem& sys, const State& x) {
    if (x.q.size() != sys.dim_q || x.p.size() != sys.dim_q) throw InvalidArgument("state dimension mismatch");
}

}  // namespace detail

/**
 * @brief Projection (q, p_hat) -> (q, p) onto the hidden constraint:
 * p = p_hat + h G(q)^T Lambda2 with G(q) v = 0 and p = dL/dv(q, v).
 *
 * Each Newton correction is one saddle-point solve; for Lagrangians quadratic in v a
 * single correction is exact.
 */
inline ProjectedState projection_step(const MechanicalSystem& sys, const Vec& q, const Vec& p_hat, double h,
                                      const NewtonConfig& cfg = {}, const Vec* v_guess = nullptr) {
    const int k = sys.dim_g;
    const Mat G = sys.dg_dq(q);
    Vec v = v_guess ? *v_guess : legendre_inverse(sys, q, p_hat, cfg);
    Vec mu = Vec::Zero(k);  // mu = h Lambda2

    ProjectedState out;
    auto residual = [&](const Vec& vel, const Vec& m, Vec& r1, Vec& r2) {
        r1 = sys.dL_dv(q, vel) - p_hat - G.transpose() * m;
        r2 = G * vel;
        return std::max(inf_norm(r1), inf_norm(r2));
    };
    Vec r1, r2;
    double res = residual(v, mu, r1, r2);
    while (!(res <= cfg.tol_residual)) {
        if (out.newton_iters >= cfg.max_iter || !std::isfinite(res)) throw NoConvergence(res, out.newton_iters);
        // [M  -G^T; G 0] [dv; dmu] = -[r1; r2]  <=>  M dv + G^T (-dmu) = -r1, G dv = -r2
        const auto sol = schur_multiplier_solve(sys.d2L_dv2(q, v), G, -r1, -r2);
        v += sol.x;
        mu -= sol.lambda;
        ++out.newton_iters;
        res = residual(v, mu, r1, r2);
    }
    out.state = {q, p_hat + G.transpose() * mu};
    out.velocity = std::move(v);
    out.lambda2 = mu / h;
    return out;
}

/**
 * @brief Constrained variational Euler A half step:
 * q1 = q + h v_hat, p_hat = p + h (dL/dq(q, v_hat) + G(q)^T Lambda1),
 * g(q1) = 0, p_hat = dL/dv(q, v_hat).
 *
 * The result satisfies g(q1) = 0 but not the hidden velocity constraint.
 */
inline IntermediateState variational_euler_a_step(const MechanicalSystem& sys, const State& x, double h,
                                                  const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    detail::check_dims(sys, x);
    const int n = sys.dim_q, k = sys.dim_g;
    const Vec vk = legendre_inverse(sys, x.q, x.p, cfg);
    const Mat Gk = sys.dg_dq(x.q);

    // unknowns y = (v_hat, mu = h Lambda1)
    auto F = [&](const Vec& y) {
        const Vec vh = y.head(n);
        Vec r(n + k);
        const Vec p_hat = x.p + h * sys.dL_dq(x.q, vh) + Gk.transpose() * y.tail(k);
        r.head(n) = sys.dL_dv(x.q, vh) - p_hat;
        r.tail(k) = sys.constraint(Vec{x.q + h * vh});
        return r;
    };
    auto J = [&](const Vec& y) {
        const Vec vh = y.head(n);
        Mat jac = Mat::Zero(n + k, n + k);
        jac.topLeftCorner(n, n) = sys.d2L_dv2(x.q, vh) - h * sys.d2L_dqdv(x.q, vh).transpose();
        jac.topRightCorner(n, k) = -Gk.transpose();
        jac.bottomLeftCorner(k, n) = h * sys.dg_dq(Vec{x.q + h * vh});
        return jac;
    };
    Vec y0(n + k);
    y0 << vk, h * detail::warm_or_zero(warm, 0, k);
    const auto sol = newton_solve(F, y0, cfg, J);

    IntermediateState out;
    out.v_hat = sol.x.head(n);
    out.q = x.q + h * out.v_hat;
    out.p_hat = x.p + h * sys.dL_dq(x.q, out.v_hat) + Gk.transpose() * sol.x.tail(k);
    out.lambda1 = sol.x.tail(k) / h;
    out.newton_iters = sol.iterations;
    return out;
}

namespace detail {

// Euler B half step with an additional momentum impulse (zero in the deterministic case):
// q1 = q + h v_hat, p_hat = p + h dL/dq(q, v) + impulse + h G(q)^T Lambda1,
// g(q1) = 0, p_hat = dL/dv(q1, v_hat).
inline IntermediateState euler_b_core(const MechanicalSystem& sys, const State& x, const Vec& vk, const Vec& impulse,
                                      double h, const NewtonConfig& cfg, WarmStart warm) {
    const int n = sys.dim_q, k = sys.dim_g;
    const Mat Gk = sys.dg_dq(x.q);
    const Vec p_explicit = x.p + h * sys.dL_dq(x.q, vk) + impulse;

    auto F = [&](const Vec& y) {
        const Vec vh = y.head(n);
        const Vec q1 = x.q + h * vh;
        Vec r(n + k);
        r.head(n) = sys.dL_dv(q1, vh) - p_explicit - Gk.transpose() * y.tail(k);
        r.tail(k) = sys.constraint(q1);
        return r;
    };
    auto J = [&](const Vec& y) {
        const Vec vh = y.head(n);
        const Vec q1 = x.q + h * vh;
        Mat jac = Mat::Zero(n + k, n + k);
        jac.topLeftCorner(n, n) = sys.d2L_dv2(q1, vh) + h * sys.d2L_dqdv(q1, vh);
        jac.topRightCorner(n, k) = -Gk.transpose();
        jac.bottomLeftCorner(k, n) = h * sys.dg_dq(q1);
        return jac;
    };
    Vec y0(n + k);
    y0 << vk, h * warm_or_zero(warm, 0, k);
    const auto sol = newton_solve(F, y0, cfg, J);

    IntermediateState out;
    out.v_hat = sol.x.head(n);
    out.q = x.q + h * out.v_hat;
    out.p_hat = p_explicit + Gk.transpose() * sol.x.tail(k);
    out.lambda1 = sol.x.tail(k) / h;
    out.newton_iters = sol.iterations;
    return out;
}

inline StepResult compose_with_projection(const MechanicalSystem& sys, const State& x, const IntermediateState& mid,
                                          double h, const NewtonConfig& cfg) {
    // v_hat already satisfies p_hat = dL/dv(q1, v_hat) for Euler B; for Euler A it is a close guess
    auto proj = projection_step(sys, mid.q, mid.p_hat, h, cfg, &mid.v_hat);
    StepResult res;
    res.state = std::move(proj.state);
    res.velocity = std::move(proj.velocity);
    res.stages.Q = {x.q};
    res.stages.V = {mid.v_hat};
    res.stages.P = {mid.p_hat};
    res.stages.Lambda = {mid.lambda1};
    res.multipliers_used = {mid.lambda1, proj.lambda2};
    res.newton_iters = mid.newton_iters + proj.newton_iters;
    return res;
}

}  // namespace detail

/**
 * @brief Constrained variational Euler B half step (single-stage implicit Euler):
 * momentum update uses dL/dq(q_k, v_k), Legendre transform at (q_{k+1}, v_hat).
 * For a constant mass matrix and q-independent dL/dq this coincides with Euler A. When
 * d2L/dv2 depends on q the mixed evaluation points leave an O(h^2) symplecticity defect.
 */
inline IntermediateState variational_euler_b_step(const MechanicalSystem& sys, const State& x, double h,
                                                  const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    detail::check_dims(sys, x);
    const Vec vk = legendre_inverse(sys, x.q, x.p, cfg);
    return detail::euler_b_core(sys, x, vk, Vec::Zero(sys.dim_q), h, cfg, warm);
}

/// Euler A followed by the projection step; a symplectic map on T*S.
inline StepResult euler_a_projected_step(const MechanicalSystem& sys, const State& x, double h,
                                         const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    return detail::compose_with_projection(sys, x, variational_euler_a_step(sys, x, h, cfg, warm), h, cfg);
}

/// Euler B followed by the projection step; a symplectic map on T*S.
inline StepResult euler_b_projected_step(const MechanicalSystem& sys, const State& x, double h,
                                         const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    return detail::compose_with_projection(sys, x, variational_euler_b_step(sys, x, h, cfg, warm), h, cfg);
}

/**
 * @brief Variational RATTLE (implicit trapezoidal kinematics, two multipliers).
 *
 * Solves for (V1, V2, Lambda1) with analytic Jacobian:
 *   q1 = q + h/2 (V1 + V2),  P1 = p + h/2 (dL/dq(q, V1) + G(q)^T Lambda1),
 *   P1 = dL/dv(q, V1) = dL/dv(q1, V2),  g(q1) = 0,
 * then determines Lambda2 from p1 = P1 + h/2 (dL/dq(q1, V2) + G(q1)^T Lambda2),
 * G(q1) v1 = 0, p1 = dL/dv(q1, v1). Lambda2 does not feed back into the first block.
 */
inline StepResult rattle_step(const MechanicalSystem& sys, const State& x, double h, const NewtonConfig& cfg = {},
                              WarmStart warm = {}) {
    detail::check_dims(sys, x);
    const int n = sys.dim_q, k = sys.dim_g;
    const double hh = 0.5 * h;
    const Vec vk = legendre_inverse(sys, x.q, x.p, cfg);
    const Mat Gk = sys.dg_dq(x.q);

    // unknowns y = (V1, V2, mu = h/2 Lambda1)
    auto F = [&](const Vec& y) {
        const Vec V1 = y.segment(0, n), V2 = y.segment(n, n);
        const Vec q1 = x.q + hh * (V1 + V2);
        const Vec P1 = x.p + hh * sys.dL_dq(x.q, V1) + Gk.transpose() * y.tail(k);
        Vec r(2 * n + k);
        r.segment(0, n) = sys.dL_dv(x.q, V1) - P1;
        r.segment(n, n) = sys.dL_dv(q1, V2) - P1;
        r.tail(k) = sys.constraint(q1);
        return r;
    };
    auto J = [&](const Vec& y) {
        const Vec V1 = y.segment(0, n), V2 = y.segment(n, n);
        const Vec q1 = x.q + hh * (V1 + V2);
        const Mat dP1_dV1 = hh * sys.d2L_dqdv(x.q, V1).transpose();
        const Mat Lvq1 = sys.d2L_dqdv(q1, V2);
        const Mat G1 = sys.dg_dq(q1);
        Mat jac = Mat::Zero(2 * n + k, 2 * n + k);
        jac.block(0, 0, n, n) = sys.d2L_dv2(x.q, V1) - dP1_dV1;
        jac.block(0, 2 * n, n, k) = -Gk.transpose();
        jac.block(n, 0, n, n) = hh * Lvq1 - dP1_dV1;
        jac.block(n, n, n, n) = sys.d2L_dv2(q1, V2) + hh * Lvq1;
        jac.block(n, 2 * n, n, k) = -Gk.transpose();
        jac.block(2 * n, 0, k, n) = hh * G1;
        jac.block(2 * n, n, k, n) = hh * G1;
        return jac;
    };
    Vec y0(2 * n + k);
    y0 << vk, vk, hh * detail::warm_or_zero(warm, 0, k);
    const auto sol = newton_solve(F, y0, cfg, J);

    const Vec V1 = sol.x.segment(0, n), V2 = sol.x.segment(n, n);
    const Vec q1 = x.q + hh * (V1 + V2);
    const Vec lambda1 = sol.x.tail(k) / hh;
    const Vec P1 = x.p + hh * sys.dL_dq(x.q, V1) + Gk.transpose() * sol.x.tail(k);
    const Vec p_hat = P1 + hh * sys.dL_dq(q1, V2);
    auto proj = projection_step(sys, q1, p_hat, h, cfg);
    const Vec lambda2 = 2.0 * proj.lambda2;  // h G^T L_proj = h/2 G^T Lambda2

    StepResult res;
    res.state = std::move(proj.state);
    res.velocity = std::move(proj.velocity);
    res.stages.Q = {x.q, q1};
    res.stages.V = {V1, V2};
    res.stages.P = {P1, Vec{sys.dL_dv(q1, V2)}};
    res.stages.Lambda = {lambda1, lambda2};
    res.multipliers_used = {lambda1, lambda2};
    res.newton_iters = sol.iterations + proj.newton_iters;
    return res;
}

/// Per-step noise data for the stochastic VPRK scheme: weights nu (on phi_r = dW_r) and
/// precomputed dW. Null for the deterministic scheme.
struct StageNoise {
    const Vec* nu = nullptr;
    const Vec* dW = nullptr;
};

namespace detail {

/**
 * General constrained (stochastic) VPRK step. Unknowns y = (V^1..V^s, mu^1..mu^{s-1}),
 * mu^j = h Lambda^j. Residuals: dL/dv(Q^i, V^i) - P^i for all i and g(Q^i) for i >= 2.
 * Lambda^s only enters p_{k+1} (its coefficient in every P^i vanishes when a_si = b_i), so it
 * is determined by the hidden-constraint projection at q_{k+1}. Jacobian by forward differences.
 */
inline StepResult vprk_core(const MechanicalSystem& sys, const ButcherTableau& t, const State& x, double h,
                            const StageNoise& noise, const NewtonConfig& cfg, WarmStart warm) {
    check_dims(sys, x);
    const auto cond = check_condition_1(t);
    if (!cond.satisfied) throw ConditionViolated("tableau violates the VPRK coefficient condition: " + cond.reasons.front());

    const int n = sys.dim_q, k = sys.dim_g, s = t.stages();
    const Mat& a = t.a();
    const Vec& b = t.b();
    const Vec vk = legendre_inverse(sys, x.q, x.p, cfg);
    const bool stochastic = noise.nu && noise.dW;

    struct Eval {
        std::vector<Vec> Q, V, F, N;  // F^j = h dL/dq + G^T mu, N^j = nu_j sum_r dW_r dgamma_r(Q^j)
        std::vector<Mat> G;
    };
    auto evaluate = [&](const Vec& y) {
        Eval e;
        e.V.resize(s);
        for (int j = 0; j < s; ++j) e.V[j] = y.segment(j * n, n);
        e.Q.assign(s, x.q);
        for (int i = 0; i < s; ++i)
            for (int j = 0; j < s; ++j)
                if (a(i, j) != 0.0) e.Q[i] += h * a(i, j) * e.V[j];
        e.F.resize(s);
        e.G.resize(s);
        e.N.assign(s, Vec::Zero(n));
        for (int j = 0; j < s; ++j) {
            e.G[j] = sys.dg_dq(e.Q[j]);
            e.F[j] = h * sys.dL_dq(e.Q[j], e.V[j]);
            if (j < s - 1) e.F[j] += e.G[j].transpose() * y.segment(s * n + j * k, k);
            if (stochastic) e.N[j] = (*noise.nu)[j] * sys.noise_impulse(e.Q[j], *noise.dW);
        }
        return e;
    };
    auto stage_momentum = [&](const Eval& e, int i) {
        Vec P = x.p;
        for (int j = 0; j < s; ++j) {
            const double c = b[j] - b[j] * a(j, i) / b[i];
            if (c != 0.0) P += c * e.F[j];
            if (stochastic) {
                const double cn = 1.0 - a(j, i) / b[i];
                if (cn != 0.0) P += cn * e.N[j];
            }
        }
        return P;
    };

    const int dim = s * n + (s - 1) * k;
    auto F = [&](const Vec& y) {
        const Eval e = evaluate(y);
        Vec r(dim);
        for (int i = 0; i < s; ++i) r.segment(i * n, n) = sys.dL_dv(e.Q[i], e.V[i]) - stage_momentum(e, i);
        for (int i = 1; i < s; ++i) r.segment(s * n + (i - 1) * k, k) = sys.constraint(e.Q[i]);
        return r;
    };
    Vec y0(dim);
    for (int j = 0; j < s; ++j) y0.segment(j * n, n) = vk;
    for (int j = 0; j < s - 1; ++j) y0.segment(s * n + j * k, k) = h * warm_or_zero(warm, j, k);
    const auto sol = newton_solve(F, y0, cfg);

    const Eval e = evaluate(sol.x);
    Vec q1 = x.q;
    Vec p_hat = x.p;
    for (int j = 0; j < s; ++j) {
        q1 += h * b[j] * e.V[j];
        p_hat += b[j] * e.F[j] + e.N[j];
    }
    auto proj = projection_step(sys, q1, p_hat, h, cfg);

    StepResult res;
    res.state = std::move(proj.state);
    res.velocity = std::move(proj.velocity);
    res.stages.Q = e.Q;
    res.stages.V = e.V;
    for (int i = 0; i < s; ++i) res.stages.P.push_back(stage_momentum(e, i));
    for (int j = 0; j < s - 1; ++j) res.stages.Lambda.push_back(sol.x.segment(s * n + j * k, k) / h);
    res.stages.Lambda.push_back(proj.lambda2 / b[s - 1]);
    res.multipliers_used = res.stages.Lambda;
    res.newton_iters = sol.iterations + proj.newton_iters;
    return res;
}

}  // namespace detail

/**
 * @brief General constrained VPRK step for a tableau satisfying the coefficient condition.
 * Throws ConditionViolated otherwise.
 */
inline StepResult vprk_step(const MechanicalSystem& sys, const ButcherTableau& t, const State& x, double h,
                            const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    return detail::vprk_core(sys, t, x, h, StageNoise{}, cfg, warm);
}

}  // namespace svprk
