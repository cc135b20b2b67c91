#pragma once

#include <svprk/types.hpp>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace svprk {

/// Runge-Kutta coefficients (a, b) with c_i = sum_j a_ij recomputed on construction.
class ButcherTableau {
public:
    ButcherTableau(Mat a, Vec b) : a_(std::move(a)), b_(std::move(b)) {
        if (a_.rows() == 0 || a_.rows() != a_.cols() || b_.size() != a_.rows())
            throw InvalidArgument("tableau needs a square s x s matrix a and an s-vector b");
        c_ = a_.rowwise().sum();
    }

    int stages() const { return static_cast<int>(b_.size()); }
    const Mat& a() const { return a_; }
    const Vec& b() const { return b_; }
    const Vec& c() const { return c_; }

private:
    Mat a_;
    Vec b_;
    Vec c_;
};

struct ConditionReport {
    bool satisfied = true;
    std::vector<std::string> reasons;
};

namespace detail {

inline std::string fmt_coeff(double x) {
    std::ostringstream os;
    os << x;
    return os.str();
}

}  // namespace detail

/**
 * @brief Checks the coefficient condition under which the constrained VPRK update
 * is well defined: a_1i = 0, a_si = b_i, b_i != 0, and the (s-1) x (s-1) matrix
 * (sum_k a_ik ahat_kj), i = 2..s, j = 1..s-1, with ahat_kj = b_j - a_jk b_j / b_k,
 * invertible (condition number below 1e12).
 */
inline ConditionReport check_condition_1(const ButcherTableau& t) {
    ConditionReport rep;
    const int s = t.stages();
    const Mat& a = t.a();
    const Vec& b = t.b();
    auto fail = [&](std::string why) {
        rep.satisfied = false;
        rep.reasons.push_back(std::move(why));
    };

    for (int i = 0; i < s; ++i)
        if (a(0, i) != 0.0)
            fail("a_{1" + std::to_string(i + 1) + "}=" + detail::fmt_coeff(a(0, i)) + " != 0 violates a_{1i}=0");
    for (int i = 0; i < s; ++i)
        if (std::abs(a(s - 1, i) - b[i]) > 1e-14)
            fail("a_{" + std::to_string(s) + std::to_string(i + 1) + "} != b_" + std::to_string(i + 1) +
                 " violates a_{si}=b_i");
    bool b_nonzero = true;
    for (int i = 0; i < s; ++i) {
        if (b[i] == 0.0) {
            fail("b_" + std::to_string(i + 1) + "=0");
            b_nonzero = false;
        }
    }

    if (b_nonzero && s > 1) {
        Mat ahat(s, s);
        for (int k = 0; k < s; ++k)
            for (int j = 0; j < s; ++j) ahat(k, j) = b[j] - a(j, k) * b[j] / b[k];
        const Mat prod = a * ahat;
        const Mat sub = prod.block(1, 0, s - 1, s - 1);
        Eigen::JacobiSVD<Mat> svd(sub);
        const auto& sv = svd.singularValues();
        const double smin = sv[sv.size() - 1];
        const double cond = smin > 0.0 ? sv[0] / smin : INFINITY;
        if (!(cond < 1e12)) fail("stage coupling matrix (a * ahat) is singular (condition " + detail::fmt_coeff(cond) + ")");
    }
    return rep;
}

/// Tableaux shipped with the library: "rattle_trapezoidal", "euler_a", "implicit_euler".
inline const std::map<std::string, ButcherTableau>& builtin_tableaux() {
    static const std::map<std::string, ButcherTableau> table = [] {
        std::map<std::string, ButcherTableau> m;
        Mat a(2, 2);
        a << 0.0, 0.0, 0.5, 0.5;
        m.emplace("rattle_trapezoidal", ButcherTableau(a, Vec{{0.5, 0.5}}));
        a << 0.0, 0.0, 1.0, 0.0;
        m.emplace("euler_a", ButcherTableau(a, Vec{{1.0, 0.0}}));
        m.emplace("implicit_euler", ButcherTableau(Mat::Constant(1, 1, 1.0), Vec::Constant(1, 1.0)));
        return m;
    }();
    return table;
}

inline const ButcherTableau& builtin_tableau(const std::string& name) {
    const auto& m = builtin_tableaux();
    auto it = m.find(name);
    if (it == m.end()) throw NameNotFound(name);
    return it->second;
}

}  // namespace svprk
