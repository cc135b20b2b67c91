#pragma once

#include <svprk/noise.hpp>
#include <svprk/stoch_integrators.hpp>

#include <optional>
#include <string>
#include <vector>

namespace svprk {

enum class Method {
    vprk,
    rattle,
    euler_a,
    euler_b,
    stochastic_variational_euler,
    stochastic_vprk,
    euler_maruyama_ref,
};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::vprk: return "vprk";
        case Method::rattle: return "rattle";
        case Method::euler_a: return "euler_a";
        case Method::euler_b: return "euler_b";
        case Method::stochastic_variational_euler: return "stochastic_variational_euler";
        case Method::stochastic_vprk: return "stochastic_vprk";
        case Method::euler_maruyama_ref: return "euler_maruyama_ref";
    }
    return "?";
}

inline Method parse_method(const std::string& name) {
    for (Method m : {Method::vprk, Method::rattle, Method::euler_a, Method::euler_b,
                     Method::stochastic_variational_euler, Method::stochastic_vprk, Method::euler_maruyama_ref})
        if (name == method_name(m)) return m;
    throw NameNotFound(name);
}

inline bool is_stochastic(Method m) {
    return m == Method::stochastic_variational_euler || m == Method::stochastic_vprk || m == Method::euler_maruyama_ref;
}

/// Integrator selection. tableau and quad are used by vprk / stochastic_vprk only.
struct IntegratorSpec {
    Method method = Method::stochastic_variational_euler;
    std::optional<ButcherTableau> tableau;
    StochasticQuadrature quad;
    NewtonConfig newton;

    static IntegratorSpec of(Method m) {
        IntegratorSpec s;
        s.method = m;
        if (m == Method::vprk || m == Method::stochastic_vprk) {
            s.tableau = builtin_tableau("rattle_trapezoidal");
            s.quad = StochasticQuadrature::from_weights(Vec{{0.5, 0.5}});
        }
        return s;
    }
};

/// (q, p) with the Legendre-consistent velocity and the last step's multipliers.
struct PhasePoint {
    Vec q;
    Vec p;
    Vec v;
    std::vector<Vec> multipliers;
};

inline PhasePoint make_phase_point(const MechanicalSystem& sys, const State& x, const NewtonConfig& cfg = {}) {
    return {x.q, x.p, legendre_inverse(sys, x.q, x.p, cfg), {}};
}

/// Advances a PhasePoint by one step of the selected method.
class Stepper {
public:
    Stepper(const MechanicalSystem& sys, IntegratorSpec spec) : sys_(sys), spec_(std::move(spec)) {
        spec_.newton.validate();
        if (spec_.method == Method::vprk || spec_.method == Method::stochastic_vprk) {
            if (!spec_.tableau) throw InvalidArgument("vprk methods need a tableau");
            const auto cond = check_condition_1(*spec_.tableau);
            if (!cond.satisfied) throw ConditionViolated("tableau violates the VPRK coefficient condition: " + cond.reasons.front());
            if (spec_.method == Method::stochastic_vprk) spec_.quad.validate(spec_.tableau->stages());
        }
    }

    const IntegratorSpec& spec() const { return spec_; }
    const MechanicalSystem& system() const { return sys_; }

    int step(PhasePoint& x, const Vec& dW, double h) const {
        const State s{x.q, x.p};
        const auto& cfg = spec_.newton;
        StepResult r;
        switch (spec_.method) {
            case Method::vprk: r = vprk_step(sys_, *spec_.tableau, s, h, cfg, x.multipliers); break;
            case Method::rattle: r = rattle_step(sys_, s, h, cfg, x.multipliers); break;
            case Method::euler_a: r = euler_a_projected_step(sys_, s, h, cfg, x.multipliers); break;
            case Method::euler_b: r = euler_b_projected_step(sys_, s, h, cfg, x.multipliers); break;
            case Method::stochastic_variational_euler:
                r = stochastic_variational_euler_step(sys_, s, dW, h, cfg, x.multipliers,
                                                      x.v.size() == x.q.size() ? &x.v : nullptr);
                break;
            case Method::stochastic_vprk:
                r = stochastic_vprk_step(sys_, *spec_.tableau, spec_.quad, s, dW, h, cfg, x.multipliers);
                break;
            case Method::euler_maruyama_ref: {
                auto e = euler_maruyama_reference_step(sys_, x.q, x.v, x.p, dW, h, cfg);
                x.q = std::move(e.q);
                x.p = std::move(e.p);
                x.v = std::move(e.v);
                return 0;
            }
        }
        x.q = std::move(r.state.q);
        x.p = std::move(r.state.p);
        x.v = std::move(r.velocity);
        x.multipliers = std::move(r.multipliers_used);
        return r.newton_iters;
    }

private:
    const MechanicalSystem& sys_;
    IntegratorSpec spec_;
};

struct TrajectoryPoint {
    double t = 0.0;
    Vec q;
    Vec p;
    Vec v;
    std::vector<Vec> multipliers;
    double constraint = 0.0;  ///< |g(q)|_inf
    double hidden = 0.0;      ///< |dg/dq(q) v|_inf
    double energy = 0.0;
};

using Trajectory = std::vector<TrajectoryPoint>;

inline TrajectoryPoint record(const MechanicalSystem& sys, const PhasePoint& x, double t) {
    const auto cr = constraint_residuals(sys, x.q, x.v);
    return {t, x.q, x.p, x.v, x.multipliers, cr.position, cr.velocity, energy(sys, x.q, x.p, x.v)};
}

namespace detail {

inline void check_step_matches(const BrownianPaths& view, double h) {
    if (std::abs(view.step_size() - h) > 1e-12 * h)
        throw InvalidResolution("step size does not match the Brownian increment resolution");
}

}  // namespace detail

/// Runs `steps` steps from x0 with the given increments (columns = steps; may be empty rows
/// for deterministic methods). Step errors are rethrown as StepFailure with the step index.
template <class Visitor>
PhasePoint integrate(const Stepper& stepper, PhasePoint x, const PathIncrements& dW, long steps, double h,
                     Visitor&& visit) {
    const int m = stepper.system().num_noise;
    const Vec zero = Vec::Zero(m);
    for (long k = 0; k < steps; ++k) {
        try {
            if (dW.cols() > k && dW.rows() == m)
                stepper.step(x, dW.col(k), h);
            else
                stepper.step(x, zero, h);
        } catch (const StepFailure&) {
            throw;
        } catch (const Error& e) {
            throw StepFailure(k, e.what());
        }
        visit(k + 1, x);
    }
    return x;
}

/// Endpoint only; no trajectory storage.
inline PhasePoint integrate_endpoint(const Stepper& stepper, const PhasePoint& x0, const PathIncrements& dW, long steps,
                                     double h) {
    return integrate(stepper, x0, dW, steps, h, [](long, const PhasePoint&) {});
}

/**
 * @brief Integrates path `path_index` of `paths` over its horizon at step h and records
 * q, p, v, multipliers, |g|, |dg/dq v| and energy at every step.
 */
inline Trajectory simulate_path(const MechanicalSystem& sys, const IntegratorSpec& spec, const State& x0,
                                const BrownianPaths& paths, long path_index, double h) {
    detail::check_step_matches(paths, h);
    const Stepper stepper(sys, spec);
    const auto [a, b] = paths.horizon();
    const PathIncrements dW = paths.path(path_index);
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(paths.base_steps()) + 1);
    PhasePoint x = make_phase_point(sys, x0, spec.newton);
    traj.push_back(record(sys, x, a));
    integrate(stepper, std::move(x), dW, paths.base_steps(), h,
              [&](long k, const PhasePoint& y) { traj.push_back(record(sys, y, a + h * static_cast<double>(k))); });
    return traj;
}

/// Deterministic trajectory of `steps` steps from t = 0.
inline Trajectory simulate_deterministic(const MechanicalSystem& sys, const IntegratorSpec& spec, const State& x0,
                                         long steps, double h) {
    const Stepper stepper(sys, spec);
    Trajectory traj;
    traj.reserve(static_cast<std::size_t>(steps) + 1);
    PhasePoint x = make_phase_point(sys, x0, spec.newton);
    traj.push_back(record(sys, x, 0.0));
    integrate(stepper, std::move(x), PathIncrements{}, steps, h,
              [&](long k, const PhasePoint& y) { traj.push_back(record(sys, y, h * static_cast<double>(k))); });
    return traj;
}

}  // namespace svprk
