#pragma once

#include "gctm/core.hpp"

#include <optional>

namespace gctm {

struct EdmParams {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;

    void validate() const {
        require(sigma_min > 0.0 && sigma_min < sigma_max, "schedule: need 0 < sigma_min < sigma_max");
        require(rho > 0.0, "schedule: rho must be positive");
    }
};

/// sigma_n = (sigma_min^(1/rho) + (n/N)(sigma_max^(1/rho) - sigma_min^(1/rho)))^rho, n = 0..N.
inline std::vector<double> edm_sigmas(int n_steps, const EdmParams& p = {}) {
    p.validate();
    require(n_steps >= 1, "edm_sigmas: N must be >= 1");
    const double a = std::pow(p.sigma_min, 1.0 / p.rho);
    const double b = std::pow(p.sigma_max, 1.0 / p.rho);
    std::vector<double> s(static_cast<std::size_t>(n_steps) + 1);
    for (int n = 0; n <= n_steps; ++n) s[n] = std::pow(a + (static_cast<double>(n) / n_steps) * (b - a), p.rho);
    s.front() = p.sigma_min;
    s.back() = p.sigma_max;
    return s;
}

/// Discretization 0 = t_0 < t_1 < ... < t_N = 1 of the unit interval.
class TimeGrid {
public:
    /// Interior points t_n = sigma_n / (1 + sigma_n); endpoints pinned to 0 and 1.
    static TimeGrid from_sigmas(const std::vector<double>& sigmas, std::optional<EdmParams> origin = std::nullopt) {
        require(sigmas.size() >= 2, "fm_grid: need at least two sigmas");
        std::vector<double> t(sigmas.size());
        t.front() = 0.0;
        t.back() = 1.0;
        for (std::size_t n = 1; n + 1 < sigmas.size(); ++n) t[n] = sigmas[n] / (1.0 + sigmas[n]);
        return TimeGrid(std::move(t), origin);
    }

    static TimeGrid edm(int n_steps, const EdmParams& p = {}) { return from_sigmas(edm_sigmas(n_steps, p), p); }

    static TimeGrid uniform(int n_steps) {
        require(n_steps >= 1, "uniform grid: N must be >= 1");
        std::vector<double> t(static_cast<std::size_t>(n_steps) + 1);
        for (int n = 0; n <= n_steps; ++n) t[n] = static_cast<double>(n) / n_steps;
        t.back() = 1.0;
        return TimeGrid(std::move(t), std::nullopt);
    }

    static TimeGrid from_points(std::vector<double> t) { return TimeGrid(std::move(t), std::nullopt); }

    int steps() const { return static_cast<int>(t_.size()) - 1; }
    const std::vector<double>& points() const { return t_; }
    double operator[](std::size_t n) const { return t_[n]; }
    const std::optional<EdmParams>& edm_params() const { return origin_; }

    /// Index of the grid point equal to t (within tol), if any.
    std::optional<int> index_of(double t, double tol = 1e-12) const {
        for (std::size_t n = 0; n < t_.size(); ++n)
            if (std::abs(t_[n] - t) <= tol) return static_cast<int>(n);
        return std::nullopt;
    }

private:
    TimeGrid(std::vector<double> t, std::optional<EdmParams> origin) : t_(std::move(t)), origin_(origin) {
        require(t_.size() >= 2, "TimeGrid: need at least one step");
        require(t_.front() == 0.0 && t_.back() == 1.0, "TimeGrid: endpoints must be 0 and 1");
        for (std::size_t n = 1; n < t_.size(); ++n) require(t_[n] > t_[n - 1], "TimeGrid: must be strictly increasing");
    }

    std::vector<double> t_;
    std::optional<EdmParams> origin_;
};

inline TimeGrid fm_grid(const std::vector<double>& sigmas) { return TimeGrid::from_sigmas(sigmas); }

// ---------------------------------------------------------------------------
// Training-time distributions

enum class ThatMode { unconditional, i2i };

/// unconditional: t = sigma/(1+sigma), log sigma ~ N(-1.2, 1.2^2); i2i: t ~ beta(3,1).
inline double sample_that(ThatMode mode, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double t = 0.0;
    do {
        if (mode == ThatMode::unconditional) {
            std::normal_distribution<double> n(-1.2, 1.2);
            const double sigma = std::exp(n(rng));
            t = sigma / (1.0 + sigma);
        } else {
            // inverse CDF of beta(3,1): F(x) = x^3
            t = std::cbrt(unif(rng));
        }
    } while (!(t > 0.0 && t < 1.0));
    return t;
}

/// Inverse CDF of the t-hat distribution, q in (0,1).
inline double that_quantile(ThatMode mode, double q) {
    require(q > 0.0 && q < 1.0, "that_quantile: q must lie in (0,1)");
    if (mode == ThatMode::i2i) return std::cbrt(q);
    // standard normal quantile by bisection on Phi(z) = erfc(-z / sqrt 2) / 2
    double lo = -40.0, hi = 40.0;
    for (int k = 0; k < 200 && hi - lo > 1e-15; ++k) {
        const double mid = 0.5 * (lo + hi);
        (0.5 * std::erfc(-mid / std::sqrt(2.0)) < q ? lo : hi) = mid;
    }
    const double sigma = std::exp(-1.2 + 1.2 * 0.5 * (lo + hi));
    return sigma / (1.0 + sigma);
}

struct Triplet {
    double t;
    double u;
    double s;
    int t_index;
    int s_index;
};

/// t = t_i with i uniform on 1..N, u = t_{i-1}, s = t_j with j uniform on 0..i-1.
inline Triplet sample_triplet(const TimeGrid& grid, Rng& rng) {
    const int n = grid.steps();
    require(n >= 1, "sample_triplet: N must be >= 1");
    std::uniform_int_distribution<int> pick_i(1, n);
    const int i = pick_i(rng);
    std::uniform_int_distribution<int> pick_j(0, i - 1);
    const int j = pick_j(rng);
    return Triplet{grid[i], grid[i - 1], grid[j], i, j};
}

/// Grid size at a training iteration: N_start doubled at each of `stages`
/// equal-length phases, so stages = 4 from N_start = 4 gives 4, 8, 16, 32.
inline int grid_size_at(std::int64_t iter, std::int64_t total_iters, int n_start, int stages) {
    require(n_start >= 1 && stages >= 1, "grid_size_at: need N_start >= 1 and stages >= 1");
    if (total_iters <= 0) return n_start;
    const std::int64_t phase_len = std::max<std::int64_t>(1, total_iters / stages);
    const std::int64_t phase = std::min<std::int64_t>(iter / phase_len, stages - 1);
    return n_start << phase;
}

}  // namespace gctm
