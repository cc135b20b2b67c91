#pragma once

#include <svprk/model.hpp>
#include <svprk/solver.hpp>

namespace svprk {

/// P = G M^-1 G^T and B = G^T P^-1 G M^-1 at (q, v), with G = dg/dq(q), M = d2L/dv2(q, v).
struct ProjectionMatrices {
    Mat P;
    Mat B;
    Mat G;
    Mat Minv_Gt;        ///< M^-1 G^T
    Mat Pinv;            ///< formed only for k <= 8, empty otherwise
    Eigen::PartialPivLU<Mat> P_lu;

    Vec apply_Pinv(const Vec& x) const { return Pinv.size() ? Vec{Pinv * x} : Vec{P_lu.solve(x)}; }
};

namespace detail {

inline void check_row_rank(const Mat& G) {
    Eigen::ColPivHouseholderQR<Mat> qr(G.transpose());
    qr.setThreshold(1e-12);
    if (qr.rank() < G.rows()) throw RankDeficient("constraint Jacobian dg/dq is rank deficient");
}

}  // namespace detail

inline ProjectionMatrices projection_matrices(const MechanicalSystem& sys, const Vec& q, const Vec& v) {
    ProjectionMatrices pm;
    pm.G = sys.dg_dq(q);
    detail::check_row_rank(pm.G);
    Eigen::PartialPivLU<Mat> mlu(sys.d2L_dv2(q, v));
    if (!(detail::pivot_ratio(mlu) > 1e-14)) throw SingularJacobian("d2L/dv2 is singular");
    pm.Minv_Gt = mlu.solve(pm.G.transpose());
    pm.P = pm.G * pm.Minv_Gt;
    pm.P_lu.compute(pm.P);
    if (!(detail::pivot_ratio(pm.P_lu) > 1e-12)) throw RankDeficient("P = G M^-1 G^T is numerically singular");
    if (pm.P.rows() <= 8) pm.Pinv = pm.P_lu.inverse();
    // B = G^T P^-1 (M^-1 G^T)^T only when M is symmetric; use the general form G^T P^-1 G M^-1.
    const Mat G_Minv = pm.G * mlu.inverse();
    pm.B = pm.G.transpose() * (pm.Pinv.size() ? Mat{pm.Pinv * G_Minv} : Mat{pm.P_lu.solve(G_Minv)});
    return pm;
}

inline Mat compute_P(const MechanicalSystem& sys, const Vec& q, const Vec& v) { return projection_matrices(sys, q, v).P; }

inline Mat compute_B(const MechanicalSystem& sys, const Vec& q, const Vec& v) { return projection_matrices(sys, q, v).B; }

/// Ito coefficients of the multiplier-eliminated momentum equation:
/// dp = drift_p dt + sum_r diffusion_p.col(r) dW_r.
struct ReducedCoefficients {
    Vec drift_p;
    Mat diffusion_p;  ///< n x m
};

inline ReducedCoefficients reduced_drift_diffusion(const MechanicalSystem& sys, const Vec& q, const Vec& v) {
    const auto pm = projection_matrices(sys, q, v);
    const int n = sys.dim_q;
    const Mat IminusB = Mat::Identity(n, n) - pm.B;

    ReducedCoefficients rc;
    rc.drift_p = IminusB * sys.dL_dq(q, v) - pm.G.transpose() * pm.apply_Pinv(sys.d2g_dq2_vv(q, v)) +
                 pm.B * (sys.d2L_dqdv(q, v) * v);
    rc.diffusion_p.resize(n, sys.num_noise);
    for (int r = 0; r < sys.num_noise; ++r) rc.diffusion_p.col(r) = IminusB * sys.dgamma_dq[r](q);
    return rc;
}

}  // namespace svprk
