#pragma once

#include <svprk/model.hpp>
#include <svprk/solver.hpp>

namespace svprk {

/// Inverts p = dL/dv(q, v) for v by Newton iteration on the mass matrix d2L/dv2.
/// With a Lagrangian quadratic in v this takes one iteration (zero when the guess is exact).
inline Vec legendre_inverse(const MechanicalSystem& sys, const Vec& q, const Vec& p, const NewtonConfig& cfg = {},
                            const Vec* guess = nullptr) {
    auto F = [&](const Vec& v) { return Vec{sys.dL_dv(q, v) - p}; };
    auto J = [&](const Vec& v) { return sys.d2L_dv2(q, v); };
    return newton_solve(F, guess ? *guess : p, cfg, J).x;
}

/// Energy <p, v> - L(q, v) with v Legendre-consistent with (q, p).
inline double energy(const MechanicalSystem& sys, const Vec& q, const Vec& p, const Vec& v) {
    return p.dot(v) - sys.lagrangian(q, v);
}

/// |g(q)|_inf and |dg/dq(q) v|_inf.
struct ConstraintResiduals {
    double position = 0.0;
    double velocity = 0.0;
};

inline ConstraintResiduals constraint_residuals(const MechanicalSystem& sys, const Vec& q, const Vec& v) {
    return {inf_norm(sys.constraint(q)), inf_norm(Vec{sys.dg_dq(q) * v})};
}

}  // namespace svprk
