#pragma once

#include <svprk/types.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <memory>
#include <random>
#include <utility>
#include <vector>

namespace svprk {

/// Brownian increments of one path: rows are channels, columns are steps.
using PathIncrements = Mat;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline bool is_power_of_two(long x) { return x > 0 && (x & (x - 1)) == 0; }

// Uniform in (0, 1] from the top 53 bits.
inline double unit_open_closed(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53; }

}  // namespace detail

/// Sums adjacent pairs of columns log2(factor) times; exact associativity by construction.
inline PathIncrements coarsen(const PathIncrements& fine, long factor) {
    if (!detail::is_power_of_two(factor) || fine.cols() % factor != 0)
        throw InvalidResolution("coarsening factor must be a power of two dividing the step count");
    PathIncrements cur = fine;
    for (long f = factor; f > 1; f /= 2) {
        PathIncrements next(cur.rows(), cur.cols() / 2);
        for (Eigen::Index j = 0; j < next.cols(); ++j) next.col(j) = cur.col(2 * j) + cur.col(2 * j + 1);
        cur = std::move(next);
    }
    return cur;
}

/**
 * @brief Reproducible Brownian increments over [a, b] for many paths and channels.
 *
 * Channel r of path p is drawn from its own mt19937_64 stream seeded from
 * (seed, p, r), so any path can be regenerated independently of the others.
 * Gaussians come from the Box-Muller transform. A lazily generated set stores
 * nothing and regenerates paths on request; an eager one stores every increment.
 * Both return bitwise identical values.
 */
class BrownianPaths {
public:
    static BrownianPaths generate(std::uint64_t seed, long num_paths, int num_channels, long base_steps,
                                  std::pair<double, double> horizon) {
        BrownianPaths bp = lazy(seed, num_paths, num_channels, base_steps, horizon);
        auto store = std::make_shared<std::vector<PathIncrements>>();
        store->reserve(num_paths);
        for (long p = 0; p < num_paths; ++p) store->push_back(bp.generate_fine(p));
        bp.stored_ = std::move(store);
        return bp;
    }

    static BrownianPaths lazy(std::uint64_t seed, long num_paths, int num_channels, long base_steps,
                              std::pair<double, double> horizon) {
        if (!detail::is_power_of_two(base_steps)) throw InvalidResolution("base_steps must be a power of two");
        if (num_paths < 1 || num_channels < 0) throw InvalidArgument("need num_paths >= 1 and num_channels >= 0");
        if (!(horizon.second > horizon.first)) throw InvalidArgument("horizon must satisfy a < b");
        BrownianPaths bp;
        bp.seed_ = seed;
        bp.num_paths_ = num_paths;
        bp.num_channels_ = num_channels;
        bp.fine_steps_ = base_steps;
        bp.horizon_ = horizon;
        return bp;
    }

    std::uint64_t seed() const { return seed_; }
    long num_paths() const { return num_paths_; }
    int num_channels() const { return num_channels_; }
    /// Number of steps at this view's resolution.
    long base_steps() const { return fine_steps_ / factor_; }
    std::pair<double, double> horizon() const { return horizon_; }
    double step_size() const { return (horizon_.second - horizon_.first) / static_cast<double>(base_steps()); }
    bool materialized() const { return stored_ != nullptr; }

    /// Increments of path p at this view's resolution.
    PathIncrements path(long p) const {
        if (p < 0 || p >= num_paths_) throw InvalidArgument("path index out of range");
        PathIncrements fine = stored_ ? (*stored_)[p] : generate_fine(p);
        return factor_ == 1 ? fine : svprk::coarsen(fine, factor_);
    }

    /// A view at resolution base_steps() / factor sharing the same underlying paths.
    BrownianPaths coarsen(long factor) const {
        if (!detail::is_power_of_two(factor) || base_steps() % factor != 0)
            throw InvalidResolution("coarsening factor must be a power of two dividing base_steps");
        BrownianPaths out = *this;
        out.factor_ = factor_ * factor;
        return out;
    }

private:
    BrownianPaths() = default;

    PathIncrements generate_fine(long p) const {
        const double sd = std::sqrt((horizon_.second - horizon_.first) / static_cast<double>(fine_steps_));
        PathIncrements inc(num_channels_, fine_steps_);
        for (int r = 0; r < num_channels_; ++r) {
            std::uint64_t key = detail::splitmix64(seed_);
            key = detail::splitmix64(key ^ static_cast<std::uint64_t>(p));
            key = detail::splitmix64(key ^ (static_cast<std::uint64_t>(r) << 40));
            std::mt19937_64 eng(key);
            for (long j = 0; j < fine_steps_; j += 2) {
                const double u1 = detail::unit_open_closed(eng());
                const double u2 = detail::unit_open_closed(eng());
                const double rad = std::sqrt(-2.0 * std::log(u1));
                const double ang = 2.0 * std::numbers::pi * u2;
                inc(r, j) = sd * rad * std::cos(ang);
                if (j + 1 < fine_steps_) inc(r, j + 1) = sd * rad * std::sin(ang);
            }
        }
        return inc;
    }

    std::uint64_t seed_ = 0;
    long num_paths_ = 0;
    int num_channels_ = 0;
    long fine_steps_ = 0;
    long factor_ = 1;
    std::pair<double, double> horizon_{0.0, 1.0};
    std::shared_ptr<const std::vector<PathIncrements>> stored_;  // shared between views
};

/// Free-function form of BrownianPaths::coarsen.
inline BrownianPaths coarsen(const BrownianPaths& paths, long factor) { return paths.coarsen(factor); }

}  // namespace svprk
