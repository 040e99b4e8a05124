#pragma once

#include "gctm/couplings.hpp"
#include "gctm/model.hpp"
#include "gctm/schedule.hpp"

namespace gctm {

/// x0 = G(x1, 1, 0), NFE = 1.
inline Points one_step_sample(const Regressor& g, const Points& x1) { return apply_g(g, x1, 1.0, 0.0); }

/// x <- G(x, t_i, t_{i-1}) for i = N..1, NFE = N.
inline Points multistep_sample(const Regressor& g, const Points& x1, const TimeGrid& grid) {
    Points x = x1;
    for (int i = grid.steps(); i >= 1; --i) x = apply_g(g, x, grid[i], grid[i - 1]);
    return x;
}

enum class GuidanceMethod { dps, cm, gctm };

inline const char* to_string(GuidanceMethod m) {
    switch (m) {
    case GuidanceMethod::dps: return "dps";
    case GuidanceMethod::cm: return "cm";
    case GuidanceMethod::gctm: return "gctm";
    }
    return "?";
}

struct GuidanceConfig {
    GuidanceMethod method = GuidanceMethod::gctm;
    /// Step size. When `adaptive`, the per-sample step is
    /// lambda / (||x1 - H x0_hat|| + 1e-8).
    double lambda = 1.0;
    bool adaptive = true;
    CorruptionOperator op;
    TimeGrid grid = TimeGrid::edm(32);  // M = grid.steps()
    std::uint64_t seed = 0;

    void validate(Eigen::Index d) const {
        require(lambda >= 0.0, "GuidanceConfig: lambda must be non-negative");
        require(grid.steps() >= 1, "GuidanceConfig: need at least one step");
        op.validate(d);
    }
};

struct RestoreResult {
    Points x0;
    int skipped_steps = 0;  // guidance steps dropped for non-finite gradients
};

/// Zero-shot restoration from a measurement x1 = H x0.
///
/// Per step: DPS re-noises and measures with g(x, t, t); CM uses G(x, t, 0)
/// for both; GCTM evaluates g(x, t, t) and G(x, t, 0) in one batch, re-noises
/// with the former and measures with the latter. The guidance gradient is
/// taken w.r.t. x_{t_i} and applied to x_{t_{i-1}}.
inline RestoreResult restore(const Regressor& g, const Points& measurement, const GuidanceConfig& cfg) {
    const Eigen::Index d = g.data_dim();
    cfg.validate(d);
    require(measurement.cols() == cfg.op.output_dim(d), "restore: measurement width does not match operator");
    const Eigen::Index b = measurement.rows();
    Rng rng(cfg.seed);
    RestoreResult res;
    Points x = standard_normal(b, d, rng);
    for (int i = cfg.grid.steps(); i >= 1; --i) {
        const double t = cfg.grid[i], tp = cfg.grid[i - 1];
        const Points eps = standard_normal(b, d, rng);
        const auto tv = filled(b, t);
        const double s_hat = cfg.method == GuidanceMethod::dps ? t : 0.0;
        const auto sv = filled(b, s_hat);

        Points renoise_base, x0_hat;
        if (cfg.method == GuidanceMethod::gctm) {
            Points both(2 * b, d);
            both << x, x;
            std::vector<double> t2(2 * b, t), s2(2 * b, t);
            std::fill(s2.begin() + b, s2.end(), 0.0);
            const Points out = g.predict(both, t2, s2);
            renoise_base = out.topRows(b);
            x0_hat = out.bottomRows(b);  // G(x, t, 0) = g(x, t, 0)
        } else {
            x0_hat = g.predict(x, tv, sv);
            renoise_base = x0_hat;
        }
        Points next = (1.0 - tp) * renoise_base + tp * eps;

        if (cfg.lambda > 0.0) {
            const Points resid = cfg.op.apply_mean(x0_hat) - measurement;  // H x0_hat - x1
            const Points grad = g.input_vjp(x, tv, sv, 2.0 * cfg.op.adjoint(resid));
            if (!all_finite(grad)) {
                res.skipped_steps += 1;
            } else {
                for (Eigen::Index r = 0; r < b; ++r) {
                    const double step = cfg.adaptive ? cfg.lambda / (resid.row(r).norm() + 1e-8) : cfg.lambda;
                    next.row(r) -= step * grad.row(r);
                }
            }
        }
        x = std::move(next);
    }
    res.x0 = std::move(x);
    return res;
}

/// Default editing time: 0.95 for supervised couplings, 0.4 otherwise.
inline double default_edit_time(Coupling::Kind k) { return k == Coupling::Kind::supervised ? 0.95 : 0.4; }

using EditFn = std::function<Points(const Points&)>;

/// G(x_hat, t, 0) with x_hat = (1 - t) edit(x0) + t x1.
inline Points edit(const Regressor& g, const Points& x0, const Points& x1, double t_edit, const EditFn& edit_fn) {
    require(t_edit > 0.0 && t_edit <= 1.0, "edit: t_edit must lie in (0,1]");
    require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), "edit: pair shape mismatch");
    const Points edited = edit_fn ? edit_fn(x0) : x0;
    require(edited.rows() == x0.rows() && edited.cols() == x0.cols(), "edit: edit_fn changed the shape");
    const Points xt = t_edit == 1.0 ? x1 : Points((1.0 - t_edit) * edited + t_edit * x1);
    return apply_g(g, xt, t_edit, 0.0);
}

/// G(x1 + gamma * eps, 1, 0).
inline Points latent_manip(const Regressor& g, const Points& x1, const Points& eps, double gamma) {
    require(x1.rows() == eps.rows() && x1.cols() == eps.cols(), "latent_manip: shape mismatch");
    return one_step_sample(g, gamma == 0.0 ? x1 : Points(x1 + gamma * eps));
}

}  // namespace gctm
