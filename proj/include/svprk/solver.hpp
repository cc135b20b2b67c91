#pragma once

#include <svprk/types.hpp>

#include <cmath>
#include <functional>

namespace svprk {

struct NewtonConfig {
    double tol_residual = 1e-12;  ///< infinity-norm stopping tolerance
    int max_iter = 50;
    double fd_jacobian_eps = 1e-7;

    void validate() const {
        if (!(tol_residual > 0.0)) throw InvalidArgument("newton tol_residual must be positive");
        if (max_iter < 1) throw InvalidArgument("newton max_iter must be >= 1");
        if (!(fd_jacobian_eps > 0.0)) throw InvalidArgument("newton fd_jacobian_eps must be positive");
    }
};

struct NewtonResult {
    Vec x;
    int iterations = 0;
    double residual = 0.0;
};

using ResidualFn = std::function<Vec(const Vec&)>;
using JacobianFn = std::function<Mat(const Vec&)>;

/// Forward-difference Jacobian of F at x, given F(x).
inline Mat fd_jacobian(const ResidualFn& F, const Vec& x, const Vec& Fx, double eps) {
    Mat J(Fx.size(), x.size());
    Vec xp = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double step = eps * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + step;
        J.col(j) = (F(xp) - Fx) / step;
        xp[j] = x[j];
    }
    return J;
}

/// Solves J dx = rhs with partial-pivot LU; throws SingularJacobian when J is numerically singular.
namespace detail {

// Cheap singularity gauge: smallest over largest |U_ii| of the LU factors.
inline double pivot_ratio(const Eigen::PartialPivLU<Mat>& lu) {
    const auto d = lu.matrixLU().diagonal().cwiseAbs();
    if (d.size() == 0) return 1.0;
    const double mx = d.maxCoeff();
    return mx > 0.0 ? d.minCoeff() / mx : 0.0;
}

}  // namespace detail

inline Vec solve_linear(const Mat& J, const Vec& rhs) {
    Eigen::PartialPivLU<Mat> lu(J);
    const double rc = detail::pivot_ratio(lu);
    if (!(rc > 1e-15)) throw SingularJacobian("singular Newton Jacobian (pivot ratio " + std::to_string(rc) + ")");
    Vec dx = lu.solve(rhs);
    if (!dx.allFinite()) throw SingularJacobian("non-finite Newton step");
    return dx;
}

/**
 * @brief Damped Newton iteration for F(x) = 0.
 *
 * Stops when ||F(x)||_inf <= tol_residual. Each step is halved (at most 30 times) until
 * the residual decreases. Uses forward differences when no Jacobian is given.
 */
inline NewtonResult newton_solve(const ResidualFn& F, Vec x0, const NewtonConfig& cfg = {}, const JacobianFn& J = {}) {
    NewtonResult res;
    res.x = std::move(x0);
    Vec Fx = F(res.x);
    res.residual = inf_norm(Fx);
    while (!(res.residual <= cfg.tol_residual)) {
        if (!std::isfinite(res.residual)) throw NoConvergence(res.residual, res.iterations);
        if (res.iterations >= cfg.max_iter) throw NoConvergence(res.residual, res.iterations);
        const Mat Jx = J ? J(res.x) : fd_jacobian(F, res.x, Fx, cfg.fd_jacobian_eps);
        const Vec dx = solve_linear(Jx, -Fx);

        double scale = 1.0;
        Vec trial = res.x + dx;
        Vec Ft = F(trial);
        double rt = inf_norm(Ft);
        for (int halving = 0; !(rt < res.residual) && halving < 30; ++halving) {
            scale *= 0.5;
            trial = res.x + scale * dx;
            Ft = F(trial);
            rt = inf_norm(Ft);
        }
        ++res.iterations;
        if (!(rt < res.residual)) throw NoConvergence(res.residual, res.iterations);
        res.x = std::move(trial);
        Fx = std::move(Ft);
        res.residual = rt;
    }
    return res;
}

struct SaddleSolution {
    Vec x;
    Vec lambda;
};

/**
 * @brief Solves the saddle-point system M x + G^T lambda = r1, G x = r2 by Schur complement.
 *
 * Throws RankDeficient when G M^-1 G^T has condition number above 1e12, and
 * SingularJacobian when M itself is singular.
 */
inline SaddleSolution schur_multiplier_solve(const Mat& M, const Mat& G, const Vec& rhs_primal, const Vec& rhs_constraint) {
    Eigen::PartialPivLU<Mat> mlu(M);
    if (!(detail::pivot_ratio(mlu) > 1e-14)) throw SingularJacobian("singular primal block in saddle solve");
    const Mat MinvGt = mlu.solve(G.transpose());
    const Vec Minvr = mlu.solve(rhs_primal);
    const Mat S = G * MinvGt;

    // Condition is measured against ||G|| ||M^-1 G^T||, so a vanishing G (k = 1) counts as singular.
    const double scale = G.norm() * MinvGt.norm();
    double smin;
    if (S.rows() == 1) {
        smin = std::abs(S(0, 0));
    } else {
        Eigen::JacobiSVD<Mat> svd(S);
        smin = svd.singularValues()[S.rows() - 1];
    }
    const double cond = smin > 0.0 ? scale / smin : INFINITY;
    if (!(cond <= 1e12)) throw RankDeficient("Schur complement G M^-1 G^T is numerically singular");

    SaddleSolution sol;
    sol.lambda = S.partialPivLu().solve(G * Minvr - rhs_constraint);
    sol.x = Minvr - MinvGt * sol.lambda;
    return sol;
}

}  // namespace svprk
