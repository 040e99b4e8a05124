#pragma once

#include "gctm/couplings.hpp"
#include "gctm/flow_ode.hpp"

namespace gctm {

/// Independent diagonal-Gaussian endpoints q(x0) = N(mu0, var0), q(x1) = N(mu1, var1).
struct GaussianSpec {
    Eigen::VectorXd mu0, mu1, var0, var1;

    static GaussianSpec standard(int d) {
        return {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d), Eigen::VectorXd::Ones(d)};
    }

    Eigen::Index dim() const { return mu0.size(); }

    void validate() const {
        const auto d = mu0.size();
        require(d > 0 && mu1.size() == d && var0.size() == d && var1.size() == d, "GaussianSpec: size mismatch");
        require((var0.array() > 0.0).all() && (var1.array() > 0.0).all(), "GaussianSpec: variances must be positive");
    }

    /// Marginal of x_t = (1-t) x0 + t x1: mean and variance per coordinate.
    Eigen::VectorXd mean_at(double t) const { return (1.0 - t) * mu0 + t * mu1; }
    Eigen::VectorXd var_at(double t) const {
        return (1.0 - t) * (1.0 - t) * var0.array() + t * t * var1.array();
    }

    Sampler source_sampler() const { return diag_sampler(mu0, var0); }
    Sampler target_sampler() const { return diag_sampler(mu1, var1); }

    static Sampler diag_sampler(Eigen::VectorXd mu, Eigen::VectorXd var) {
        return [mu = std::move(mu), sd = var.cwiseSqrt().eval()](Eigen::Index m, Rng& rng) {
            Points z = standard_normal(m, mu.size(), rng);
            for (Eigen::Index i = 0; i < m; ++i) z.row(i) = mu.transpose() + z.row(i).cwiseProduct(sd.transpose());
            return z;
        };
    }
};

/// E[x0 | x_t] per coordinate: mu0 + (1-t) var0 / v_t (x - m_t).
inline Points fm_posterior_mean(const Points& x, double t, const GaussianSpec& g) {
    require(t > 0.0 && t <= 1.0, "fm_posterior_mean: t must lie in (0,1]");
    require(x.cols() == g.dim(), "fm_posterior_mean: dimension mismatch");
    const Eigen::VectorXd m = g.mean_at(t), v = g.var_at(t);
    const Eigen::VectorXd gain = ((1.0 - t) * g.var0.array() / v.array()).matrix();
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = g.mu0.transpose() + (x.row(i) - m.transpose()).cwiseProduct(gain.transpose());
    return out;
}

/// E[x1 | x_t] per coordinate, from conditioning on x1 directly.
inline Points fm_target_posterior_mean(const Points& x, double t, const GaussianSpec& g) {
    require(t > 0.0 && t <= 1.0, "fm_target_posterior_mean: t must lie in (0,1]");
    const Eigen::VectorXd m = g.mean_at(t), v = g.var_at(t);
    const Eigen::VectorXd gain = (t * g.var1.array() / v.array()).matrix();
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = g.mu1.transpose() + (x.row(i) - m.transpose()).cwiseProduct(gain.transpose());
    return out;
}

/// E_p[x0 | x_t] under p(x_t | x0) = N(x0, t^2 I), x0 ~ N(mu0, var0).
inline Points diffusion_posterior_mean(const Points& x, double t, const Eigen::VectorXd& mu0,
                                       const Eigen::VectorXd& var0) {
    require(t > 0.0, "diffusion_posterior_mean: t must be > 0");
    require(x.cols() == mu0.size() && var0.size() == mu0.size(), "diffusion_posterior_mean: dimension mismatch");
    const Eigen::VectorXd gain = (var0.array() / (var0.array() + t * t)).matrix();
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = mu0.transpose() + (x.row(i) - mu0.transpose()).cwiseProduct(gain.transpose());
    return out;
}

/// Exact FM flow map for independent Gaussian endpoints. The marginal of
/// x_t stays N(m_t, v_t) and the velocity is affine, so
/// x_s = m_s + sqrt(v_s / v_t) (x_t - m_t).
inline Points gaussian_flow_map(const Points& x, double t, double s, const GaussianSpec& g) {
    require(t >= 0.0 && t <= 1.0 && s >= 0.0 && s <= 1.0, "gaussian_flow_map: times must lie in [0,1]");
    const Eigen::VectorXd mt = g.mean_at(t), ms = g.mean_at(s);
    const Eigen::VectorXd ratio = (g.var_at(s).array() / g.var_at(t).array()).sqrt().matrix();
    Points out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out.row(i) = ms.transpose() + (x.row(i) - mt.transpose()).cwiseProduct(ratio.transpose());
    return out;
}

inline VelocityField oracle_field(const GaussianSpec& g) {
    VelocityField f;
    f.posterior_mean = [g](const Points& x, double t) { return fm_posterior_mean(x, t, g); };
    return f;
}

struct ReferenceTrajectory {
    std::vector<double> times;  // 1 = times[0] > ... > times.back() = 0
    std::vector<Points> path;   // state at each time
    Points endpoint;
};

/// Heun on a uniform grid of `steps` intervals from t = 1 to 0 using the
/// closed-form posterior mean. The final hop lands on E[x0 | x_{t_1}].
inline ReferenceTrajectory reference_trajectory(const Points& x1, const GaussianSpec& g, int steps = 4096) {
    g.validate();
    require(steps >= 64, "reference_trajectory: need at least 64 steps");
    TraversalRequest req{x1, 1.0, 0.0, TimeGrid::uniform(steps), Solver::heun};
    ReferenceTrajectory out;
    out.endpoint = integrate(req, oracle_field(g), &out.path);
    for (int n = steps; n >= 0; --n) out.times.push_back(req.grid[n]);
    return out;
}

}  // namespace gctm
