#pragma once

#include "gctm/core.hpp"
#include "gctm/schedule.hpp"

#include <functional>
#include <utility>

namespace gctm {

/// Posterior mean E[x0 | x_t] as a function of (x, t); the FM velocity is
/// derived from it. `endpoint`, when set, is the exact map G(x, t, 0) and is
/// used for the last hop into t = 0.
struct VelocityField {
    std::function<Points(const Points&, double)> posterior_mean;
    std::function<Points(const Points&, double)> endpoint;
};

/// (x - E[x0 | x_t]) / t.
inline Points velocity(const Points& x, double t, const VelocityField& field) {
    require(t > 0.0, "velocity: t must be > 0 (the ODE is singular at t = 0)");
    return (x - field.posterior_mean(x, t)) / t;
}

/// G(x, t, s) = (s/t) x + (1 - s/t) g.
inline Points big_g(const Points& x, double t, double s, const Points& g_value) {
    require(t > 0.0, "big_g: t must be > 0");
    require(s >= 0.0 && s <= t, "big_g: need 0 <= s <= t");
    require(x.rows() == g_value.rows() && x.cols() == g_value.cols(), "big_g: shape mismatch");
    if (s == t) return x;
    const double r = s / t;
    return r * x + (1.0 - r) * g_value;
}

/// Row-wise G with per-row times. Rows with s == t return x exactly.
inline Points big_g(const Points& x, std::span<const double> t, std::span<const double> s, const Points& g_value) {
    require(x.rows() == g_value.rows() && x.cols() == g_value.cols(), "big_g: shape mismatch");
    require(static_cast<Eigen::Index>(t.size()) == x.rows() && static_cast<Eigen::Index>(s.size()) == x.rows(),
            "big_g: time batch size mismatch");
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        require(t[i] > 0.0 && s[i] >= 0.0 && s[i] <= t[i], "big_g: need 0 <= s <= t, t > 0");
        if (s[i] == t[i]) {
            out.row(i) = x.row(i);
        } else {
            const double r = s[i] / t[i];
            out.row(i) = r * x.row(i) + (1.0 - r) * g_value.row(i);
        }
    }
    return out;
}

enum class Solver { euler, heun };

/// dx/dt = f(x, t) evaluated for a whole batch at one time.
using VelocityFn = std::function<Points(const Points&, double)>;

/// One step from t to u < t. Heun averages the slopes at both ends.
inline Points ode_step(const Points& x, double t, double u, const VelocityFn& f, Solver solver) {
    const double h = u - t;
    Points v1 = f(x, t);
    Points xe = x + h * v1;
    if (solver == Solver::euler) return xe;
    Points v2 = f(xe, u);
    return x + (0.5 * h) * (v1 + v2);
}

/// Integrates through consecutive entries of `times` (strictly decreasing).
/// The whole path is written to `path` when non-null.
inline Points integrate_times(Points x, const std::vector<double>& times, const VelocityFn& f, Solver solver,
                              std::vector<Points>* path = nullptr) {
    if (path) {
        path->clear();
        path->push_back(x);
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        require(times[k] < times[k - 1], "integrate: time sequence must be strictly decreasing");
        x = ode_step(x, times[k - 1], times[k], f, solver);
        if (path) path->push_back(x);
    }
    return x;
}

struct TraversalRequest {
    Points x;
    double t_from = 1.0;
    double t_to = 0.0;
    TimeGrid grid = TimeGrid::uniform(1);
    Solver solver = Solver::heun;
};

namespace detail {

inline int snap_to_grid(const TimeGrid& g, double t) {
    require(t >= 0.0 && t <= 1.0, "integrate: times must lie in [0,1]");
    int best = 0;
    for (int n = 1; n <= g.steps(); ++n)
        if (std::abs(g[n] - t) < std::abs(g[best] - t)) best = n;
    return best;
}

}  // namespace detail

/// Solves the FM ODE from t_from down to t_to through the grid points in
/// between (both ends snapped to the nearest grid point). The velocity is
/// never evaluated at t = 0: the final hop uses field.endpoint when present,
/// otherwise an Euler step, which lands exactly on E[x0 | x_{t_1}].
inline Points integrate(const TraversalRequest& req, const VelocityField& field, std::vector<Points>* path = nullptr) {
    const int from = detail::snap_to_grid(req.grid, req.t_from);
    const int to = detail::snap_to_grid(req.grid, req.t_to);
    require(from >= to, "integrate: t_from must not be below t_to (non-monotone segment)");
    if (path) {
        path->clear();
        path->push_back(req.x);
    }
    Points x = req.x;
    const VelocityFn vel = [&](const Points& y, double t) { return velocity(y, t, field); };
    for (int n = from; n > to; --n) {
        const double t = req.grid[n], u = req.grid[n - 1];
        if (u == 0.0) {
            x = field.endpoint ? field.endpoint(x, t) : ode_step(x, t, u, vel, Solver::euler);
        } else {
            x = ode_step(x, t, u, vel, req.solver);
        }
        if (path) path->push_back(x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Diffusion (CTM) <-> FM (GCTM) variables

struct FmState {
    Points x;
    double t;
};

/// t' = t / (1 + t), x' = x / (1 + t).
inline FmState ctm_to_gctm(const Points& x, double t) {
    require(t > 0.0 && std::isfinite(t), "ctm_to_gctm: t must be positive and finite");
    return FmState{x / (1.0 + t), t / (1.0 + t)};
}

/// Inverse of ctm_to_gctm: t = t'/(1 - t'), x = x' (1 + t).
inline std::pair<Points, double> gctm_to_ctm(const Points& x_bar, double t_prime) {
    require(t_prime > 0.0 && t_prime < 1.0, "gctm_to_ctm: t' must lie in (0,1)");
    const double t = t_prime / (1.0 - t_prime);
    return {x_bar * (1.0 + t), t};
}

inline double fm_time(double sigma) { return sigma / (1.0 + sigma); }

/// PFODE velocity (x - E_p[x0 | x_t]) / t for the kernel N(x0, t^2 I).
inline Points pfode_velocity(const Points& x, double t,
                             const std::function<Points(const Points&, double)>& diffusion_posterior_mean) {
    require(t > 0.0, "pfode_velocity: t must be > 0");
    return (x - diffusion_posterior_mean(x, t)) / t;
}

}  // namespace gctm
