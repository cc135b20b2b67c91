#pragma once

#include <svprk/types.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace svprk {

/**
 * @brief A Lagrangian system on R^n with holonomic constraint g(q) = 0 and
 * stochastic potentials gamma_r.
 *
 * All derivatives are supplied in closed form. Conventions:
 *  - d2L_dqdv(q, v)(i, j) = d/dq_j (dL/dv_i), so that d/dt(dL/dv) along dq = v dt
 *    contains d2L_dqdv * v.
 *  - d2g_dq2_vv(q, v) is the constraint Hessian contracted twice with v.
 *
 * Callbacks must be pure; a system may be shared read-only between threads.
 */
struct MechanicalSystem {
    std::string name;
    int dim_q = 0;
    int dim_g = 0;
    int num_noise = 0;

    std::function<double(const Vec&, const Vec&)> lagrangian;
    std::function<Vec(const Vec&, const Vec&)> dL_dq;
    std::function<Vec(const Vec&, const Vec&)> dL_dv;
    std::function<Mat(const Vec&, const Vec&)> d2L_dv2;
    std::function<Mat(const Vec&, const Vec&)> d2L_dqdv;

    std::function<Vec(const Vec&)> constraint;
    std::function<Mat(const Vec&)> dg_dq;
    std::function<Vec(const Vec&, const Vec&)> d2g_dq2_vv;

    std::vector<std::function<double(const Vec&)>> gamma;
    std::vector<std::function<Vec(const Vec&)>> dgamma_dq;

    /// Sum_r dgamma_r/dq(q) * dW_r.
    Vec noise_impulse(const Vec& q, const Vec& dW) const {
        Vec out = Vec::Zero(dim_q);
        for (int r = 0; r < num_noise; ++r) {
            if (dW[r] != 0.0) out += dgamma_dq[r](q) * dW[r];
        }
        return out;
    }
};

/// A point (q, p) of the cotangent bundle, intended to lie on T*S.
struct State {
    Vec q;
    Vec p;
};

struct SphericalPendulumParams {
    double gravity = 1.0;      ///< coefficient of q.e3 in the potential
    double noise_scale = 1.0;  ///< gamma_i(q) = noise_scale * sin(q.e_i)
};

/// Unit-length spherical pendulum: L = |v|^2/2 - gravity q.e3, g = |q|^2 - 1,
/// gamma_i = noise_scale sin(q.e_i), i = 1..3.
inline MechanicalSystem spherical_pendulum(SphericalPendulumParams params = {}) {
    const double grav = params.gravity;
    const double sigma = params.noise_scale;

    MechanicalSystem sys;
    sys.name = "spherical_pendulum";
    sys.dim_q = 3;
    sys.dim_g = 1;
    sys.num_noise = 3;

    sys.lagrangian = [grav](const Vec& q, const Vec& v) { return 0.5 * v.squaredNorm() - grav * q[2]; };
    sys.dL_dq = [grav](const Vec&, const Vec&) { return Vec{Vec::Unit(3, 2) * -grav}; };
    sys.dL_dv = [](const Vec&, const Vec& v) { return Vec{v}; };
    sys.d2L_dv2 = [](const Vec&, const Vec&) { return Mat{Mat::Identity(3, 3)}; };
    sys.d2L_dqdv = [](const Vec&, const Vec&) { return Mat{Mat::Zero(3, 3)}; };

    sys.constraint = [](const Vec& q) {
        Vec g(1);
        g[0] = q.squaredNorm() - 1.0;
        return g;
    };
    sys.dg_dq = [](const Vec& q) { return Mat{2.0 * q.transpose()}; };
    sys.d2g_dq2_vv = [](const Vec&, const Vec& v) {
        Vec h(1);
        h[0] = 2.0 * v.squaredNorm();
        return h;
    };

    for (int i = 0; i < 3; ++i) {
        sys.gamma.emplace_back([i, sigma](const Vec& q) { return sigma * std::sin(q[i]); });
        sys.dgamma_dq.emplace_back([i, sigma](const Vec& q) {
            Vec d = Vec::Zero(3);
            d[i] = sigma * std::cos(q[i]);
            return d;
        });
    }
    return sys;
}

/// Builtin models by name. Parameters are model specific; unknown names throw NameNotFound.
inline MechanicalSystem builtin_model(const std::string& name, SphericalPendulumParams params = {}) {
    if (name == "spherical_pendulum") return spherical_pendulum(params);
    throw NameNotFound(name);
}

struct CallbackCheck {
    std::string callback;
    double max_error = 0.0;
    bool passed = true;
};

struct ValidationReport {
    std::vector<CallbackCheck> checks;

    bool all_passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

namespace detail {

// Central difference of a vector-valued function along direction dir.
template <class F>
Vec central_diff(F&& f, const Vec& x, const Vec& dir, double eps) {
    return (f(Vec{x + eps * dir}) - f(Vec{x - eps * dir})) / (2.0 * eps);
}

inline double relative_mismatch(const Mat& approx, const Mat& exact) {
    const double scale = std::max(1.0, exact.size() ? exact.cwiseAbs().maxCoeff() : 0.0);
    return approx.size() ? (approx - exact).cwiseAbs().maxCoeff() / scale : 0.0;
}

}  // namespace detail

/**
 * @brief Finite-difference consistency check of every derivative callback.
 *
 * Each sample (q, v) must satisfy |g(q)| <= 1e-8. Throws DerivativeMismatch naming the
 * first failing callback; otherwise returns the per-callback report.
 */
inline ValidationReport validate_system(const MechanicalSystem& sys, const std::vector<std::pair<Vec, Vec>>& samples,
                                        double tol = 1e-5) {
    const int n = sys.dim_q;
    if (n <= 0 || sys.dim_g <= 0 || sys.dim_g >= n)
        throw InvalidArgument("system dimensions must satisfy 0 < dim_g < dim_q");
    if (static_cast<int>(sys.gamma.size()) != sys.num_noise || static_cast<int>(sys.dgamma_dq.size()) != sys.num_noise)
        throw InvalidArgument("gamma/dgamma_dq must have num_noise entries");

    constexpr double eps = 1e-6;
    std::vector<std::string> names = {"dL_dq", "dL_dv", "d2L_dv2", "d2L_dqdv", "dg_dq", "d2g_dq2_vv"};
    for (int r = 0; r < sys.num_noise; ++r) names.push_back("dgamma_dq[" + std::to_string(r) + "]");
    std::vector<double> worst(names.size(), 0.0);

    for (const auto& [q, v] : samples) {
        if (q.size() != n || v.size() != n) throw InvalidArgument("sample has wrong dimension");
        if (inf_norm(sys.constraint(q)) > 1e-8) throw InvalidArgument("sample q is not on the constraint manifold");

        Vec fd_Lq(n), fd_Lv(n);
        Mat fd_Lvv(n, n), fd_Lvq(n, n), fd_G(sys.dim_g, n);
        for (int j = 0; j < n; ++j) {
            const Vec e = Vec::Unit(n, j);
            fd_Lq[j] = (sys.lagrangian(q + eps * e, v) - sys.lagrangian(q - eps * e, v)) / (2 * eps);
            fd_Lv[j] = (sys.lagrangian(q, v + eps * e) - sys.lagrangian(q, v - eps * e)) / (2 * eps);
            fd_Lvv.col(j) = detail::central_diff([&](const Vec& w) { return sys.dL_dv(q, w); }, v, e, eps);
            fd_Lvq.col(j) = detail::central_diff([&](const Vec& x) { return sys.dL_dv(x, v); }, q, e, eps);
            fd_G.col(j) = detail::central_diff([&](const Vec& x) { return sys.constraint(x); }, q, e, eps);
        }
        const Vec fd_H = detail::central_diff([&](const Vec& x) { return Vec{sys.dg_dq(x) * v}; }, q, v, eps);

        std::size_t idx = 0;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_Lq, sys.dL_dq(q, v))), ++idx;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_Lv, sys.dL_dv(q, v))), ++idx;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_Lvv, sys.d2L_dv2(q, v))), ++idx;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_Lvq, sys.d2L_dqdv(q, v))), ++idx;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_G, sys.dg_dq(q))), ++idx;
        worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd_H, sys.d2g_dq2_vv(q, v))), ++idx;
        for (int r = 0; r < sys.num_noise; ++r, ++idx) {
            Vec fd(n);
            for (int j = 0; j < n; ++j) {
                const Vec e = Vec::Unit(n, j);
                fd[j] = (sys.gamma[r](q + eps * e) - sys.gamma[r](q - eps * e)) / (2 * eps);
            }
            worst[idx] = std::max(worst[idx], detail::relative_mismatch(fd, sys.dgamma_dq[r](q)));
        }
    }

    ValidationReport report;
    for (std::size_t i = 0; i < names.size(); ++i) report.checks.push_back({names[i], worst[i], worst[i] <= tol});
    for (const auto& c : report.checks)
        if (!c.passed) throw DerivativeMismatch(c.callback, c.max_error);
    return report;
}

}  // namespace svprk
