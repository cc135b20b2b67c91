#pragma once

#include <svprk/det_integrators.hpp>
#include <svprk/reduction.hpp>

namespace svprk {

enum class PhiSource { BrownianIncrement };
enum class PsiSource { Zero };

/**
 * @brief Stage weights of the stochastic-potential quadrature
 * sum_i (nu_i phi_r + kappa_i psi_r) gamma_r(Q^i).
 *
 * Only phi_r = dW_r and psi_r = 0 are realized, so kappa never contributes.
 */
struct StochasticQuadrature {
    Vec nu;
    Vec kappa;
    PhiSource phi_source = PhiSource::BrownianIncrement;
    PsiSource psi_source = PsiSource::Zero;

    static StochasticQuadrature from_weights(Vec nu) {
        StochasticQuadrature q;
        q.kappa = Vec::Zero(nu.size());
        q.nu = std::move(nu);
        return q;
    }

    void validate(int stages) const {
        if (nu.size() != stages || kappa.size() != stages)
            throw InvalidArgument("quadrature weights nu, kappa must have one entry per stage");
    }
};

/**
 * @brief Constrained stochastic VPRK step. The noise impulses
 * (1 - a_ji / b_i) nu_j dW_r dgamma_r/dq(Q^j) enter P^i and nu_j dW_r dgamma_r/dq(Q^j)
 * enters p_{k+1}; dW is a fixed constant inside the Newton residual.
 */
inline StepResult stochastic_vprk_step(const MechanicalSystem& sys, const ButcherTableau& t,
                                       const StochasticQuadrature& quad, const State& x, const Vec& dW, double h,
                                       const NewtonConfig& cfg = {}, WarmStart warm = {}) {
    quad.validate(t.stages());
    if (dW.size() != sys.num_noise) throw InvalidArgument("dW must have one entry per noise channel");
    return detail::vprk_core(sys, t, x, h, StageNoise{&quad.nu, &dW}, cfg, warm);
}

/**
 * @brief Constrained stochastic variational Euler followed by the projection step:
 *   q1 = q + h v_hat,
 *   p_hat = p + h dL/dq(q, v) + sum_r dgamma_r/dq(q) dW_r + h G(q)^T Lambda1,
 *   g(q1) = 0,  p_hat = dL/dv(q1, v_hat).
 * The drift uses v_k, so with dW = 0 this is exactly Euler B plus projection.
 * v_guess, if given, seeds the Legendre inverse for v_k.
 * With a single stage the noise weight inside the stage momentum plays no role: the
 * projection alone fixes p_{k+1}.
 */
inline StepResult stochastic_variational_euler_step(const MechanicalSystem& sys, const State& x, const Vec& dW,
                                                    double h, const NewtonConfig& cfg = {}, WarmStart warm = {},
                                                    const Vec* v_guess = nullptr) {
    detail::check_dims(sys, x);
    if (dW.size() != sys.num_noise) throw InvalidArgument("dW must have one entry per noise channel");
    const Vec vk = legendre_inverse(sys, x.q, x.p, cfg, v_guess);
    const auto mid = detail::euler_b_core(sys, x, vk, sys.noise_impulse(x.q, dW), h, cfg, warm);
    return detail::compose_with_projection(sys, x, mid, h, cfg);
}

struct ReferenceState {
    Vec q;
    Vec v;
    Vec p;
};

/**
 * @brief Euler-Maruyama step of the multiplier-eliminated Ito SDE:
 * q1 = q + h v, p1 = p + h drift_p(q, v) + diffusion_p(q, v) dW, v1 = Legendre inverse at (q1, p1).
 * Nothing pulls the iterate back onto the constraint manifold.
 */
inline ReferenceState euler_maruyama_reference_step(const MechanicalSystem& sys, const Vec& q, const Vec& v,
                                                    const Vec& p, const Vec& dW, double h,
                                                    const NewtonConfig& cfg = {}) {
    const auto rc = reduced_drift_diffusion(sys, q, v);
    ReferenceState out;
    out.q = q + h * v;
    out.p = p + h * rc.drift_p;
    if (sys.num_noise > 0) out.p += rc.diffusion_p * dW;
    out.v = legendre_inverse(sys, out.q, out.p, cfg, &v);
    return out;
}

/// Convenience overload taking (q, v) only; p is recovered as dL/dv(q, v).
inline ReferenceState euler_maruyama_reference_step(const MechanicalSystem& sys, const Vec& q, const Vec& v,
                                                    const Vec& dW, double h, const NewtonConfig& cfg = {}) {
    return euler_maruyama_reference_step(sys, q, v, sys.dL_dv(q, v), dW, h, cfg);
}

}  // namespace svprk
