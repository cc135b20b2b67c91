#pragma once

#include <svprk/analysis.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>

namespace svprk {

enum class Study { simulate, strong_order, weak_order, symplecticity, drift };

inline const char* study_name(Study s) {
    switch (s) {
        case Study::simulate: return "simulate";
        case Study::strong_order: return "strong_order";
        case Study::weak_order: return "weak_order";
        case Study::symplecticity: return "symplecticity";
        case Study::drift: return "drift";
    }
    return "?";
}

/// Fully resolved experiment description. to_json() of a parsed config parses back to itself.
struct ExperimentConfig {
    std::string model = "spherical_pendulum";
    SphericalPendulumParams model_params;

    Method method = Method::stochastic_variational_euler;
    // tableau by name, or inline (a, b) when tableau_name is empty
    std::string tableau_name;
    Mat tableau_a;
    Vec tableau_b;
    Vec quad_nu;
    Vec quad_kappa;
    NewtonConfig newton;

    Vec q0;
    Vec p0;
    double t0 = 0.0;
    double t1 = 1.0;
    double h = 0.0;                  ///< simulate / drift / symplecticity
    std::vector<double> h_ladder;    ///< strong_order / weak_order
    long reference_factor = 64;

    std::uint64_t seed = 0;
    long num_paths = 1;
    long base_steps = 1;
    long path_index = 0;

    Study study = Study::simulate;
    std::string observable = "q3";
    long random_states = 0;  ///< extra random on-manifold states for the symplecticity study
    int threads = 1;
    std::string output_dir = "out";
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& what) { throw ConfigInvalid(what); }

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) config_error(where + " must be an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) config_error("unknown key '" + it.key() + "' in " + where);
}

inline Vec json_vec(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) config_error(where + " must be an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) config_error(where + " must be an array of numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline Mat json_mat(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) config_error(where + " must be a non-empty array of rows");
    const auto cols = j[0].is_array() ? j[0].size() : 0;
    Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Vec row = json_vec(j[i], where);
        if (static_cast<std::size_t>(row.size()) != cols) config_error(where + " rows differ in length");
        m.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return m;
}

inline nlohmann::json vec_json(const Vec& v) {
    auto a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        config_error(where + "." + key + " has the wrong type");
    }
}

inline Study parse_study(const std::string& s) {
    for (Study st : {Study::simulate, Study::strong_order, Study::weak_order, Study::symplecticity, Study::drift})
        if (s == study_name(st)) return st;
    config_error("unknown study '" + s + "'");
}

inline std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

/// Parses and validates a config document (schema plus physics checks on the initial state).
inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using namespace detail;
    reject_unknown(j, "config",
                   {"model", "integrator", "initial_state", "horizon", "h", "h_ladder", "reference_factor", "noise",
                    "newton", "study", "observable", "random_states", "threads", "output_dir", "library_version",
                    "comment"});
    ExperimentConfig c;

    if (j.contains("model")) {
        const auto& m = j["model"];
        reject_unknown(m, "model", {"name", "gravity", "noise_scale"});
        c.model = get_or<std::string>(m, "name", c.model, "model");
        c.model_params.gravity = get_or<double>(m, "gravity", c.model_params.gravity, "model");
        c.model_params.noise_scale = get_or<double>(m, "noise_scale", c.model_params.noise_scale, "model");
    }
    MechanicalSystem sys;
    try {
        sys = builtin_model(c.model, c.model_params);
    } catch (const NameNotFound&) {
        config_error("unknown model '" + c.model + "'");
    }

    if (!j.contains("integrator")) config_error("missing integrator");
    {
        const auto& in = j["integrator"];
        reject_unknown(in, "integrator", {"method", "tableau", "quad"});
        try {
            c.method = parse_method(get_or<std::string>(in, "method", "", "integrator"));
        } catch (const NameNotFound& e) {
            config_error(std::string("unknown integrator method: ") + e.what());
        }
        const bool needs_tableau = c.method == Method::vprk || c.method == Method::stochastic_vprk;
        if (in.contains("tableau")) {
            const auto& t = in["tableau"];
            if (t.is_string()) {
                c.tableau_name = t.get<std::string>();
            } else {
                reject_unknown(t, "integrator.tableau", {"a", "b"});
                if (!t.contains("a") || !t.contains("b")) config_error("inline tableau needs a and b");
                c.tableau_a = json_mat(t["a"], "integrator.tableau.a");
                c.tableau_b = json_vec(t["b"], "integrator.tableau.b");
            }
        } else if (needs_tableau) {
            c.tableau_name = "rattle_trapezoidal";
        }
        if (in.contains("quad")) {
            const auto& q = in["quad"];
            reject_unknown(q, "integrator.quad", {"nu", "kappa"});
            if (q.contains("nu")) c.quad_nu = json_vec(q["nu"], "integrator.quad.nu");
            if (q.contains("kappa")) c.quad_kappa = json_vec(q["kappa"], "integrator.quad.kappa");
        }
    }

    if (j.contains("newton")) {
        const auto& n = j["newton"];
        reject_unknown(n, "newton", {"tol", "max_iter"});
        c.newton.tol_residual = get_or<double>(n, "tol", c.newton.tol_residual, "newton");
        c.newton.max_iter = get_or<int>(n, "max_iter", c.newton.max_iter, "newton");
    }
    try {
        c.newton.validate();
    } catch (const Error& e) {
        config_error(e.what());
    }

    if (!j.contains("initial_state")) config_error("missing initial_state");
    {
        const auto& s = j["initial_state"];
        reject_unknown(s, "initial_state", {"q", "p"});
        if (!s.contains("q")) config_error("initial_state.q is required");
        c.q0 = json_vec(s["q"], "initial_state.q");
        c.p0 = s.contains("p") ? json_vec(s["p"], "initial_state.p") : Vec::Zero(c.q0.size());
    }
    if (c.q0.size() != sys.dim_q || c.p0.size() != sys.dim_q)
        config_error("initial_state.q and .p must have " + std::to_string(sys.dim_q) + " entries");

    if (j.contains("horizon")) {
        const auto& hz = j["horizon"];
        if (hz.is_number()) {
            c.t1 = hz.get<double>();
        } else {
            const Vec v = json_vec(hz, "horizon");
            if (v.size() != 2) config_error("horizon must be T or [a, b]");
            c.t0 = v[0];
            c.t1 = v[1];
        }
    }
    if (!(c.t1 > c.t0)) config_error("horizon must satisfy a < b");

    c.study = parse_study(get_or<std::string>(j, "study", "simulate", "config"));
    c.h = get_or<double>(j, "h", 0.0, "config");
    if (j.contains("h_ladder")) {
        const Vec l = json_vec(j["h_ladder"], "h_ladder");
        c.h_ladder.assign(l.data(), l.data() + l.size());
    }
    c.reference_factor = get_or<long>(j, "reference_factor", c.reference_factor, "config");
    c.observable = get_or<std::string>(j, "observable", c.observable, "config");
    c.random_states = get_or<long>(j, "random_states", c.random_states, "config");
    c.threads = get_or<int>(j, "threads", c.threads, "config");
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir, "config");
    if (c.threads < 1) config_error("threads must be >= 1");
    if (c.random_states < 0) config_error("random_states must be >= 0");

    if (j.contains("noise")) {
        const auto& n = j["noise"];
        reject_unknown(n, "noise", {"seed", "paths", "base_steps", "path_index"});
        c.seed = get_or<std::uint64_t>(n, "seed", c.seed, "noise");
        c.num_paths = get_or<long>(n, "paths", c.num_paths, "noise");
        c.base_steps = get_or<long>(n, "base_steps", c.base_steps, "noise");
        c.path_index = get_or<long>(n, "path_index", c.path_index, "noise");
    }
    if (!is_power_of_two(c.base_steps)) config_error("noise.base_steps must be a power of two");
    if (c.num_paths < 1) config_error("noise.paths must be >= 1");
    if (c.path_index < 0 || c.path_index >= c.num_paths) config_error("noise.path_index out of range");

    const bool ladder_study = c.study == Study::strong_order || c.study == Study::weak_order;
    if (ladder_study && c.h_ladder.size() < 3) config_error("h_ladder needs at least three step sizes");
    if (!ladder_study && !(c.h > 0.0)) config_error("h must be positive for study " + std::string(study_name(c.study)));
    if (c.study == Study::weak_order &&
        !(c.observable == "q1" || c.observable == "q2" || c.observable == "q3" || c.observable == "energy" ||
          c.observable == "constant"))
        config_error("unknown observable '" + c.observable + "'");

    // the initial state must lie on T*S
    Vec v0;
    try {
        v0 = legendre_inverse(sys, c.q0, c.p0, c.newton);
    } catch (const Error& e) {
        config_error(std::string("initial momentum has no Legendre preimage: ") + e.what());
    }
    const auto cr = constraint_residuals(sys, c.q0, v0);
    if (!(cr.position <= 1e-8))
        config_error("initial q violates the constraint: |g(q0)| = " + fmt(cr.position) +
                     " > 1e-8; project q0 onto g(q) = 0 (for the sphere, q0 / |q0|)");
    if (!(cr.velocity <= 1e-8))
        config_error("initial p violates the hidden constraint: |dg/dq(q0) v0| = " + fmt(cr.velocity) +
                     " > 1e-8; remove the normal component of the velocity");
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigInvalid("cannot read config file " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

/// The resolved config as a document that parse_config accepts unchanged.
inline nlohmann::json to_json(const ExperimentConfig& c) {
    using detail::vec_json;
    nlohmann::json j;
    j["model"] = {{"name", c.model}, {"gravity", c.model_params.gravity}, {"noise_scale", c.model_params.noise_scale}};
    nlohmann::json in = {{"method", method_name(c.method)}};
    if (!c.tableau_name.empty()) {
        in["tableau"] = c.tableau_name;
    } else if (c.tableau_a.size()) {
        auto rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < c.tableau_a.rows(); ++i) rows.push_back(vec_json(c.tableau_a.row(i).transpose()));
        in["tableau"] = {{"a", rows}, {"b", vec_json(c.tableau_b)}};
    }
    if (c.quad_nu.size() || c.quad_kappa.size()) {
        in["quad"] = nlohmann::json::object();
        if (c.quad_nu.size()) in["quad"]["nu"] = vec_json(c.quad_nu);
        if (c.quad_kappa.size()) in["quad"]["kappa"] = vec_json(c.quad_kappa);
    }
    j["integrator"] = in;
    j["newton"] = {{"tol", c.newton.tol_residual}, {"max_iter", c.newton.max_iter}};
    j["initial_state"] = {{"q", vec_json(c.q0)}, {"p", vec_json(c.p0)}};
    j["horizon"] = {c.t0, c.t1};
    if (c.h > 0.0) j["h"] = c.h;
    if (!c.h_ladder.empty()) j["h_ladder"] = c.h_ladder;
    j["reference_factor"] = c.reference_factor;
    j["noise"] = {{"seed", c.seed}, {"paths", c.num_paths}, {"base_steps", c.base_steps}, {"path_index", c.path_index}};
    j["study"] = study_name(c.study);
    j["observable"] = c.observable;
    j["random_states"] = c.random_states;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    return j;
}

inline MechanicalSystem make_system(const ExperimentConfig& c) { return builtin_model(c.model, c.model_params); }

inline IntegratorSpec make_spec(const ExperimentConfig& c) {
    IntegratorSpec s = IntegratorSpec::of(c.method);
    if (!c.tableau_name.empty()) {
        s.tableau = builtin_tableau(c.tableau_name);
    } else if (c.tableau_a.size()) {
        s.tableau = ButcherTableau(c.tableau_a, c.tableau_b);
    }
    if (s.tableau) {
        const int st = s.tableau->stages();
        Vec nu = c.quad_nu.size() ? c.quad_nu : Vec{s.tableau->b()};
        s.quad = StochasticQuadrature::from_weights(nu);
        if (c.quad_kappa.size()) s.quad.kappa = c.quad_kappa;
        if (c.method == Method::stochastic_vprk) s.quad.validate(st);
    }
    s.newton = c.newton;
    return s;
}

inline Observable make_observable(const std::string& name, const MechanicalSystem& sys, const NewtonConfig& cfg) {
    if (name == "q1") return [](const State& x) { return x.q[0]; };
    if (name == "q2") return [](const State& x) { return x.q[1]; };
    if (name == "q3") return [](const State& x) { return x.q[2]; };
    if (name == "constant") return [](const State&) { return 1.0; };
    if (name == "energy")
        return [&sys, cfg](const State& x) { return energy(sys, x.q, x.p, legendre_inverse(sys, x.q, x.p, cfg)); };
    throw ConfigInvalid("unknown observable '" + name + "'");
}

/// Random state on the unit sphere's cotangent bundle: q uniform, v the tangential part of N(0, I).
inline State random_sphere_state(std::mt19937_64& eng) {
    std::normal_distribution<double> N;
    Vec q(3), v(3);
    for (int i = 0; i < 3; ++i) q[i] = N(eng);
    q.normalize();
    for (int i = 0; i < 3; ++i) v[i] = N(eng);
    v -= q * q.dot(v);
    return {q, v};
}

struct ExperimentResult {
    std::vector<std::filesystem::path> files;
    std::string summary;
};

namespace detail {

class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& file) : out_(file) {
        if (!out_) throw Error("cannot write " + file.string());
    }
    void header(std::initializer_list<std::string> cols) { header(std::vector<std::string>(cols)); }
    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
        out_ << '\n';
    }
    void row(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) out_ << (i ? "," : "") << fmt(vals[i]);
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline std::vector<std::string> vector_cols(const char* prefix, int n) {
    std::vector<std::string> c;
    for (int i = 1; i <= n; ++i) c.push_back(prefix + std::to_string(i));
    return c;
}

}  // namespace detail

/// Executes the configured study and writes its CSV, manifest.json and summary.txt into dir.
inline ExperimentResult run_experiment(const ExperimentConfig& c, const std::filesystem::path& dir) {
    using detail::fmt;
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const MechanicalSystem sys = make_system(c);
    const IntegratorSpec spec = make_spec(c);
    const State x0{c.q0, c.p0};
    const auto paths = BrownianPaths::lazy(c.seed, c.num_paths, sys.num_noise, c.base_steps, {c.t0, c.t1});
    StudyOptions opt;
    opt.reference_factor = c.reference_factor;
    opt.threads = c.threads;

    ExperimentResult res;
    std::ostringstream sum;
    sum << "study " << study_name(c.study) << "\nmethod " << method_name(c.method) << "\nmodel " << c.model
        << "\nseed " << c.seed << "\npaths " << c.num_paths << "\n";

    auto write_trajectory = [&](const Trajectory& traj, const fs::path& file) {
        detail::CsvWriter w(file);
        std::vector<std::string> cols{"t"};
        for (const char* pre : {"q", "p", "v"}) {
            auto vc = detail::vector_cols(pre, sys.dim_q);
            cols.insert(cols.end(), vc.begin(), vc.end());
        }
        cols.insert(cols.end(), {"constraint", "hidden", "energy"});
        w.header(cols);
        for (const auto& pt : traj) {
            std::vector<double> row{pt.t};
            for (const Vec* x : {&pt.q, &pt.p, &pt.v}) row.insert(row.end(), x->data(), x->data() + x->size());
            row.insert(row.end(), {pt.constraint, pt.hidden, pt.energy});
            w.row(row);
        }
        res.files.push_back(file);
    };

    switch (c.study) {
        case Study::simulate: {
            const auto view = paths.coarsen(detail::dyadic_ratio(c.h, paths.step_size(),
                                                                 "h is not a dyadic coarsening of the noise resolution"));
            const auto traj = simulate_path(sys, spec, x0, view, c.path_index, c.h);
            write_trajectory(traj, dir / "trajectory.csv");
            const auto dm = drift_metrics(traj);
            sum << "steps " << traj.size() - 1 << "\nmax_constraint " << fmt(dm.max_constraint) << "\nmax_hidden "
                << fmt(dm.max_hidden) << "\nfinal_q";
            for (Eigen::Index i = 0; i < traj.back().q.size(); ++i) sum << ' ' << fmt(traj.back().q[i]);
            sum << "\n";
            break;
        }
        case Study::drift: {
            const auto view = paths.coarsen(detail::dyadic_ratio(c.h, paths.step_size(),
                                                                 "h is not a dyadic coarsening of the noise resolution"));
            const auto traj = simulate_path(sys, spec, x0, view, c.path_index, c.h);
            const auto dm = drift_metrics(traj);
            detail::CsvWriter w(dir / "drift.csv");
            w.header({"step", "t", "constraint", "hidden", "energy"});
            for (std::size_t k = 0; k < traj.size(); ++k)
                w.row({static_cast<double>(k), traj[k].t, traj[k].constraint, traj[k].hidden, traj[k].energy});
            res.files.push_back(dir / "drift.csv");
            sum << "steps " << traj.size() - 1 << "\nmax_constraint " << fmt(dm.max_constraint) << "\nmax_hidden "
                << fmt(dm.max_hidden) << "\nenergy_slope_per_step " << fmt(dm.energy_slope) << "\n";
            break;
        }
        case Study::strong_order: {
            const auto rep = strong_error_study(sys, spec, x0, paths, c.h_ladder, opt);
            detail::CsvWriter w(dir / "strong.csv");
            w.header({"h", "error_q", "error_p", "stderr"});
            for (std::size_t i = 0; i < c.h_ladder.size(); ++i)
                w.row({c.h_ladder[i], rep.position.errors[i], rep.momentum.errors[i], rep.stderr_combined[i]});
            res.files.push_back(dir / "strong.csv");
            sum << "h_ref " << fmt(rep.h_ref) << "\nslope_q " << fmt(rep.position.slope) << "\nslope_q_stderr "
                << fmt(rep.position.slope_stderr) << "\nslope_p " << fmt(rep.momentum.slope) << "\nslope_p_stderr "
                << fmt(rep.momentum.slope_stderr) << "\n";
            break;
        }
        case Study::weak_order: {
            const auto phi = make_observable(c.observable, sys, c.newton);
            const auto rep = weak_error_study(sys, spec, x0, paths, c.h_ladder, phi, opt, false);
            detail::CsvWriter w(dir / "weak.csv");
            w.header({"h", "weak_error", "mc_stderr"});
            for (std::size_t i = 0; i < c.h_ladder.size(); ++i)
                w.row({c.h_ladder[i], rep.report.errors[i], rep.mc_stderr[i]});
            res.files.push_back(dir / "weak.csv");
            sum << "observable " << c.observable << "\nh_ref " << fmt(rep.h_ref) << "\nslope "
                << fmt(rep.report.slope) << "\nslope_stderr " << fmt(rep.report.slope_stderr) << "\ninconclusive "
                << (rep.inconclusive ? "true" : "false") << "\n";
            break;
        }
        case Study::symplecticity: {
            std::vector<State> states{x0};
            std::mt19937_64 eng(detail::splitmix64(c.seed ^ 0x53594D50ULL));
            for (long i = 0; i < c.random_states; ++i) {
                if (c.model != "spherical_pendulum") throw ConfigInvalid("random_states needs the spherical pendulum");
                states.push_back(random_sphere_state(eng));
            }
            // fixed noise: the first increment of the selected path at resolution h
            Vec dW = Vec::Zero(sys.num_noise);
            if (is_stochastic(c.method) && sys.num_noise > 0) {
                const auto view = paths.coarsen(detail::dyadic_ratio(
                    c.h, paths.step_size(), "h is not a dyadic coarsening of the noise resolution"));
                dW = view.path(c.path_index).col(0);
            }
            const auto map = make_step_map(sys, spec, c.h, dW);
            detail::CsvWriter w(dir / "symplecticity.csv");
            w.header({"state", "h", "residual"});
            double worst = 0.0;
            for (std::size_t i = 0; i < states.size(); ++i) {
                const double r = symplecticity_check(sys, map, states[i], 1e-5, c.newton).residual;
                worst = std::max(worst, r);
                w.row({static_cast<double>(i), c.h, r});
            }
            res.files.push_back(dir / "symplecticity.csv");
            sum << "states " << states.size() << "\nmax_residual " << fmt(worst) << "\n";
            break;
        }
    }

    nlohmann::json manifest = to_json(c);
    manifest["library_version"] = kVersion;
    {
        std::ofstream m(dir / "manifest.json");
        m << manifest.dump(2) << '\n';
    }
    res.files.push_back(dir / "manifest.json");
    res.summary = sum.str();
    {
        std::ofstream s(dir / "summary.txt");
        s << res.summary;
    }
    res.files.push_back(dir / "summary.txt");
    return res;
}

}  // namespace svprk
