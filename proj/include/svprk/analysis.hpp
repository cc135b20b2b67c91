#pragma once

#include <svprk/integrator.hpp>

#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <thread>
#include <vector>

namespace svprk {

/// Deterministic pairwise (cascade) summation; the order depends only on the length.
inline double pairwise_sum(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

inline double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

inline double pairwise_mean(const std::vector<double>& x) {
    return x.empty() ? 0.0 : pairwise_sum(x) / static_cast<double>(x.size());
}

/// Sample standard deviation (n - 1 denominator) with pairwise sums.
inline double sample_stddev(const std::vector<double>& x) {
    if (x.size() < 2) return 0.0;
    const double m = pairwise_mean(x);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = (x[i] - m) * (x[i] - m);
    return std::sqrt(pairwise_sum(d) / static_cast<double>(x.size() - 1));
}

struct SlopeFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double slope_stderr = std::numeric_limits<double>::quiet_NaN();
};

/**
 * @brief Least-squares fit of log2(error) = intercept + slope * log2(h).
 *
 * Needs at least three points. If any error is not strictly positive the fit is
 * undefined and all fields are NaN.
 */
inline SlopeFit fit_slope(const std::vector<double>& h, const std::vector<double>& err) {
    if (h.size() != err.size()) throw InvalidArgument("step sizes and errors differ in length");
    if (h.size() < 3) throw LadderTooShort("need at least three ladder points");
    SlopeFit f;
    for (std::size_t i = 0; i < h.size(); ++i)
        if (!(h[i] > 0.0) || !(err[i] > 0.0) || !std::isfinite(err[i])) return f;

    const std::size_t n = h.size();
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::log2(h[i]);
        y[i] = std::log2(err[i]);
    }
    const double mx = pairwise_mean(x), my = pairwise_mean(y);
    std::vector<double> sxx(n), sxy(n);
    for (std::size_t i = 0; i < n; ++i) {
        sxx[i] = (x[i] - mx) * (x[i] - mx);
        sxy[i] = (x[i] - mx) * (y[i] - my);
    }
    const double Sxx = pairwise_sum(sxx);
    if (!(Sxx > 0.0)) throw InvalidArgument("step sizes must not all be equal");
    f.slope = pairwise_sum(sxy) / Sxx;
    f.intercept = my - f.slope * mx;
    std::vector<double> res2(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        res2[i] = r * r;
    }
    f.slope_stderr = std::sqrt(pairwise_sum(res2) / static_cast<double>(n - 2) / Sxx);
    return f;
}

struct ConvergenceReport {
    std::vector<double> step_sizes;
    std::vector<double> errors;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double slope_stderr = std::numeric_limits<double>::quiet_NaN();
    long num_paths = 0;
};

inline ConvergenceReport make_report(std::vector<double> h, std::vector<double> err, long num_paths) {
    ConvergenceReport r;
    const auto fit = fit_slope(h, err);
    r.step_sizes = std::move(h);
    r.errors = std::move(err);
    r.slope = fit.slope;
    r.slope_stderr = fit.slope_stderr;
    r.num_paths = num_paths;
    return r;
}

struct StudyOptions {
    long reference_factor = 64;  ///< h_ref = min(h_ladder) / reference_factor
    int threads = 1;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on `threads` workers; rethrows the exception of the lowest failing index.
template <class F>
void parallel_for(long n, int threads, F&& fn) {
    if (threads <= 1 || n <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    const long t = std::min<long>(threads, n);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t));
    for (long w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            for (long i = w; i < n; i += t) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct LadderPlan {
    double h_ref = 0.0;
    long ref_coarsen = 1;             ///< coarsening of `paths` that gives h_ref
    std::vector<long> ladder_factor;  ///< h / h_ref for every ladder entry
};

inline long dyadic_ratio(double num, double den, const char* what) {
    const double r = num / den;
    const long ri = std::lround(r);
    if (ri < 1 || std::abs(r - static_cast<double>(ri)) > 1e-9 * r || !is_power_of_two(ri))
        throw InvalidResolution(what);
    return ri;
}

inline LadderPlan plan_ladder(const BrownianPaths& paths, const std::vector<double>& ladder, long reference_factor) {
    if (ladder.size() < 3) throw LadderTooShort("need at least three ladder points");
    if (reference_factor < 1) throw InvalidArgument("reference_factor must be >= 1");
    LadderPlan plan;
    double hmin = ladder.front();
    for (double h : ladder) {
        if (!(h > 0.0)) throw InvalidArgument("step sizes must be positive");
        hmin = std::min(hmin, h);
    }
    plan.h_ref = hmin / static_cast<double>(reference_factor);
    plan.ref_coarsen = dyadic_ratio(plan.h_ref, paths.step_size(),
                                    "reference step is not a dyadic coarsening of the Brownian resolution");
    for (double h : ladder) {
        const long f = dyadic_ratio(h, plan.h_ref, "ladder step is not a dyadic multiple of the reference step");
        if (f == 1) throw InvalidArgument("ladder step equals the reference step; the study compares a method with itself");
        plan.ladder_factor.push_back(f);
    }
    return plan;
}

// Endpoints of one path at every ladder step and at the reference step.
struct PathEndpoints {
    std::vector<PhasePoint> at_h;
    PhasePoint ref;
};

inline PathEndpoints run_ladder_path(const Stepper& stepper, const PhasePoint& x0, const BrownianPaths& ref_view,
                                     const LadderPlan& plan, long p) {
    const PathIncrements fine = ref_view.path(p);
    PathEndpoints out;
    out.ref = integrate_endpoint(stepper, x0, fine, fine.cols(), plan.h_ref);
    for (long f : plan.ladder_factor) {
        const PathIncrements coarse = coarsen(fine, f);
        out.at_h.push_back(integrate_endpoint(stepper, x0, coarse, coarse.cols(), plan.h_ref * static_cast<double>(f)));
    }
    return out;
}

inline std::vector<PathEndpoints> run_ladder(const MechanicalSystem& sys, const IntegratorSpec& spec, const State& x0,
                                             const BrownianPaths& paths, const LadderPlan& plan, int threads) {
    const Stepper stepper(sys, spec);
    const PhasePoint start = make_phase_point(sys, x0, spec.newton);
    const BrownianPaths ref_view = paths.coarsen(plan.ref_coarsen);
    std::vector<PathEndpoints> ends(static_cast<std::size_t>(paths.num_paths()));
    parallel_for(paths.num_paths(), threads,
                 [&](long p) { ends[static_cast<std::size_t>(p)] = run_ladder_path(stepper, start, ref_view, plan, p); });
    return ends;
}

}  // namespace detail

struct StrongStudyReport {
    ConvergenceReport position;
    ConvergenceReport momentum;
    /// Standard error of the combined (q, p) RMS error per ladder point (delta method).
    std::vector<double> stderr_combined;
    double h_ref = 0.0;
};

/**
 * @brief Pathwise RMS endpoint error at T = horizon end for each h in the ladder,
 * measured against the same method at min(h) / reference_factor on the shared paths.
 */
inline StrongStudyReport strong_error_study(const MechanicalSystem& sys, const IntegratorSpec& spec, const State& x0,
                                            const BrownianPaths& paths, const std::vector<double>& h_ladder,
                                            const StudyOptions& opt = {}) {
    const auto plan = detail::plan_ladder(paths, h_ladder, opt.reference_factor);
    const auto ends = detail::run_ladder(sys, spec, x0, paths, plan, opt.threads);
    const long M = paths.num_paths();

    StrongStudyReport rep;
    rep.h_ref = plan.h_ref;
    std::vector<double> eq, ep;
    for (std::size_t i = 0; i < h_ladder.size(); ++i) {
        std::vector<double> sq(M), sp(M), sc(M);
        for (long p = 0; p < M; ++p) {
            const auto& e = ends[static_cast<std::size_t>(p)];
            sq[p] = (e.at_h[i].q - e.ref.q).squaredNorm();
            sp[p] = (e.at_h[i].p - e.ref.p).squaredNorm();
            sc[p] = sq[p] + sp[p];
        }
        eq.push_back(std::sqrt(pairwise_mean(sq)));
        ep.push_back(std::sqrt(pairwise_mean(sp)));
        const double ec = std::sqrt(pairwise_mean(sc));
        rep.stderr_combined.push_back(ec > 0.0 ? sample_stddev(sc) / std::sqrt(static_cast<double>(M)) / (2.0 * ec) : 0.0);
    }
    rep.position = make_report(h_ladder, std::move(eq), M);
    rep.momentum = make_report(h_ladder, std::move(ep), M);
    return rep;
}

using Observable = std::function<double(const State&)>;

struct WeakStudyReport {
    ConvergenceReport report;
    std::vector<double> mc_stderr;  ///< standard error of mean(phi_h - phi_ref) per ladder point
    /// true if the largest MC standard error is at least half the largest weak error
    bool inconclusive = false;
    double h_ref = 0.0;
};

/**
 * @brief Weak error |mean phi(X_h(T)) - mean phi(X_ref(T))| per ladder point.
 *
 * The error and its Monte Carlo standard error are computed from the paired
 * differences phi_h - phi_ref on shared paths. With throw_if_inconclusive the
 * study raises StatisticallyInconclusive instead of returning a noise-dominated fit.
 * Errors that are exactly zero everywhere (e.g. a constant observable) are not
 * inconclusive; the slope is then undefined (NaN).
 */
inline WeakStudyReport weak_error_study(const MechanicalSystem& sys, const IntegratorSpec& spec, const State& x0,
                                        const BrownianPaths& paths, const std::vector<double>& h_ladder,
                                        const Observable& phi, const StudyOptions& opt = {},
                                        bool throw_if_inconclusive = true) {
    const auto plan = detail::plan_ladder(paths, h_ladder, opt.reference_factor);
    const auto ends = detail::run_ladder(sys, spec, x0, paths, plan, opt.threads);
    const long M = paths.num_paths();

    WeakStudyReport rep;
    rep.h_ref = plan.h_ref;
    std::vector<double> err;
    double max_err = 0.0, max_se = 0.0;
    for (std::size_t i = 0; i < h_ladder.size(); ++i) {
        std::vector<double> d(M);
        for (long p = 0; p < M; ++p) {
            const auto& e = ends[static_cast<std::size_t>(p)];
            d[p] = phi({e.at_h[i].q, e.at_h[i].p}) - phi({e.ref.q, e.ref.p});
        }
        err.push_back(std::abs(pairwise_mean(d)));
        rep.mc_stderr.push_back(sample_stddev(d) / std::sqrt(static_cast<double>(M)));
        max_err = std::max(max_err, err.back());
        max_se = std::max(max_se, rep.mc_stderr.back());
    }
    rep.inconclusive = !(max_err == 0.0 && max_se == 0.0) && !(max_se < 0.5 * max_err);
    if (rep.inconclusive && throw_if_inconclusive)
        throw StatisticallyInconclusive("Monte Carlo error " + std::to_string(max_se) +
                                        " is not below half the largest weak error " + std::to_string(max_err));
    rep.report = make_report(h_ladder, std::move(err), M);
    return rep;
}

// ---------------------------------------------------------------------------
// Symplecticity

using StepMap = std::function<State(const State&)>;

struct SymplecticityResult {
    double residual = 0.0;
    Mat basis;  ///< 2n x 2(n-k) orthonormal tangent basis of T*S at x0
};

namespace detail {

/// Stacked constraints of T*S in (q, p): (g(q), G(q) v(q, p)).
inline Vec phase_constraints(const MechanicalSystem& sys, const Vec& y, const NewtonConfig& cfg) {
    const int n = sys.dim_q, k = sys.dim_g;
    const Vec q = y.head(n);
    const Vec v = legendre_inverse(sys, q, y.tail(n), cfg);
    Vec c(2 * k);
    c.head(k) = sys.constraint(q);
    c.tail(k) = sys.dg_dq(q) * v;
    return c;
}

/// Linearization of phase_constraints at (q, p).
inline Mat phase_constraint_jacobian(const MechanicalSystem& sys, const Vec& q, const Vec& p, const NewtonConfig& cfg) {
    const int n = sys.dim_q, k = sys.dim_g;
    const Vec v = legendre_inverse(sys, q, p, cfg);
    const Mat G = sys.dg_dq(q);
    const Eigen::PartialPivLU<Mat> mlu(sys.d2L_dv2(q, v));
    // H(i, j) = g_i''(e_j, v) by polarization of the quadratic form
    Mat H(k, n);
    for (int j = 0; j < n; ++j) {
        const Vec e = Vec::Unit(n, j);
        H.col(j) = 0.25 * (sys.d2g_dq2_vv(q, Vec{v + e}) - sys.d2g_dq2_vv(q, Vec{v - e}));
    }
    const Mat GMinv = G * mlu.inverse();
    Mat C = Mat::Zero(2 * k, 2 * n);
    C.topLeftCorner(k, n) = G;
    C.bottomLeftCorner(k, n) = H - GMinv * sys.d2L_dqdv(q, v);
    C.bottomRightCorner(k, n) = GMinv;
    return C;
}

inline Mat canonical_omega(int n) {
    Mat W = Mat::Zero(2 * n, 2 * n);
    W.topRightCorner(n, n) = Mat::Identity(n, n);
    W.bottomLeftCorner(n, n) = -Mat::Identity(n, n);
    return W;
}

}  // namespace detail

/// Orthonormal basis of the tangent space of T*S at x (null space of the constraint linearization).
inline Mat phase_tangent_basis(const MechanicalSystem& sys, const State& x, const NewtonConfig& cfg = {}) {
    const int n = sys.dim_q, k = sys.dim_g;
    const Mat C = detail::phase_constraint_jacobian(sys, x.q, x.p, cfg);
    Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    if (k > 0 && !(s[2 * k - 1] > 1e-10 * std::max(1.0, s[0])))
        throw RankDeficient("constraint linearization of T*S is rank deficient");
    return svd.matrixV().rightCols(2 * (n - k));
}

/**
 * @brief Closest-point style retraction onto T*S: y + C0^T mu with mu chosen so the
 * result satisfies both constraints; C0 is the linearization at the base point.
 */
inline Vec retract_to_phase_space(const MechanicalSystem& sys, const Vec& y, const Mat& C0, const NewtonConfig& cfg = {}) {
    const int n = sys.dim_q;
    if (C0.rows() == 0) return y;
    auto F = [&](const Vec& mu) { return detail::phase_constraints(sys, Vec{y + C0.transpose() * mu}, cfg); };
    auto J = [&](const Vec& mu) {
        const Vec z = y + C0.transpose() * mu;
        return Mat{detail::phase_constraint_jacobian(sys, z.head(n), z.tail(n), cfg) * C0.transpose()};
    };
    const auto sol = newton_solve(F, Vec::Zero(C0.rows()), cfg, J);
    return y + C0.transpose() * sol.x;
}

/**
 * @brief ||J^T Omega J - U^T Omega U||_inf, where U is an orthonormal basis of T_{x0}T*S and
 * J the central-difference derivative (step eps) of xi -> map(retract(x0 + U xi)) at 0.
 */
inline SymplecticityResult symplecticity_check(const MechanicalSystem& sys, const StepMap& map, const State& x0,
                                               double eps = 1e-5, const NewtonConfig& cfg = {}) {
    const int n = sys.dim_q;
    if (x0.q.size() != n || x0.p.size() != n) throw InvalidArgument("state dimension mismatch");
    if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
    const Vec c0 = detail::phase_constraints(sys, [&] {
        Vec y(2 * n);
        y << x0.q, x0.p;
        return y;
    }(), cfg);
    if (!(inf_norm(c0) <= 1e-8)) throw InvalidArgument("x0 is not on T*S");

    SymplecticityResult out;
    out.basis = phase_tangent_basis(sys, x0, cfg);
    const Mat& U = out.basis;
    const Mat C0 = detail::phase_constraint_jacobian(sys, x0.q, x0.p, cfg);
    Vec y0(2 * n);
    y0 << x0.q, x0.p;

    auto image = [&](const Vec& xi) {
        const Vec y = retract_to_phase_space(sys, Vec{y0 + U * xi}, C0, cfg);
        const State s = map({y.head(n), y.tail(n)});
        Vec z(2 * n);
        z << s.q, s.p;
        return z;
    };
    const Eigen::Index d = U.cols();
    Mat J(2 * n, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const Vec e = eps * Vec::Unit(d, j);
        J.col(j) = (image(e) - image(Vec{-e})) / (2.0 * eps);
    }
    const Mat W = detail::canonical_omega(n);
    const Mat defect = J.transpose() * W * J - U.transpose() * W * U;
    out.residual = defect.size() ? defect.cwiseAbs().maxCoeff() : 0.0;
    return out;
}

/// Step map of `spec` at fixed h and dW, suitable for symplecticity_check.
inline StepMap make_step_map(const MechanicalSystem& sys, const IntegratorSpec& spec, double h, Vec dW) {
    auto stepper = std::make_shared<Stepper>(sys, spec);
    return [&sys, stepper, h, dW = std::move(dW)](const State& x) {
        PhasePoint pt = make_phase_point(sys, x, stepper->spec().newton);
        stepper->step(pt, dW, h);
        return State{pt.q, pt.p};
    };
}

// ---------------------------------------------------------------------------
// Drift

struct DriftMetrics {
    double max_constraint = 0.0;
    double max_hidden = 0.0;
    std::vector<double> energy_series;
    double energy_slope = 0.0;  ///< least-squares slope of energy against step index
};

inline DriftMetrics drift_metrics(const Trajectory& traj) {
    DriftMetrics m;
    for (const auto& pt : traj) {
        m.max_constraint = std::max(m.max_constraint, pt.constraint);
        m.max_hidden = std::max(m.max_hidden, pt.hidden);
        m.energy_series.push_back(pt.energy);
    }
    const std::size_t n = m.energy_series.size();
    if (n >= 2) {
        std::vector<double> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<double>(i);
        const double mx = pairwise_mean(idx), my = pairwise_mean(m.energy_series);
        std::vector<double> sxx(n), sxy(n);
        for (std::size_t i = 0; i < n; ++i) {
            sxx[i] = (idx[i] - mx) * (idx[i] - mx);
            sxy[i] = (idx[i] - mx) * (m.energy_series[i] - my);
        }
        m.energy_slope = pairwise_sum(sxy) / pairwise_sum(sxx);
    }
    return m;
}

}  // namespace svprk
