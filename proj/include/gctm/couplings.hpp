#pragma once

#include "gctm/core.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>

namespace gctm {

/// Draws a batch of m points.
using Sampler = std::function<Points(Eigen::Index m, Rng& rng)>;

/// Row-aligned (x0, x1) pairs.
struct PairBatch {
    Points x0;
    Points x1;

    Eigen::Index size() const { return x0.rows(); }
    Eigen::Index dim() const { return x0.cols(); }
};

/// Corruption H applied to clean data x0. Mask indices are zero-based.
struct CorruptionOperator {
    enum class Kind { identity, coordinate_mask, linear };

    Kind kind = Kind::identity;
    std::vector<int> mask_indices;
    Points matrix;            // rows x d, used by Kind::linear
    double noise_std = 0.0;   // additive measurement noise for Kind::linear
    std::uint64_t seed = 0;   // stream for the one-argument sample_supervised

    static CorruptionOperator identity() { return {}; }

    static CorruptionOperator mask(std::vector<int> indices) {
        CorruptionOperator op;
        op.kind = Kind::coordinate_mask;
        op.mask_indices = std::move(indices);
        return op;
    }

    static CorruptionOperator linear(Points a, double noise_std = 0.0) {
        CorruptionOperator op;
        op.kind = Kind::linear;
        op.matrix = std::move(a);
        op.noise_std = noise_std;
        return op;
    }

    bool is_masking() const { return kind == Kind::coordinate_mask; }

    Eigen::Index output_dim(Eigen::Index d) const { return kind == Kind::linear ? matrix.rows() : d; }

    void validate(Eigen::Index d) const {
        require(d > 0, "operator: dimension must be positive");
        switch (kind) {
        case Kind::identity:
            break;
        case Kind::coordinate_mask:
            for (int i : mask_indices) require(i >= 0 && i < d, "operator: mask index out of range");
            break;
        case Kind::linear:
            require(matrix.cols() == d && matrix.rows() > 0, "operator: matrix must have d columns");
            require(noise_std >= 0.0, "operator: noise_std must be non-negative");
            break;
        }
    }

    /// Noise-free H x, row by row.
    Points apply_mean(const Points& x) const {
        validate(x.cols());
        switch (kind) {
        case Kind::identity:
            return x;
        case Kind::coordinate_mask: {
            Points y = x;
            for (int i : mask_indices) y.col(i).setZero();
            return y;
        }
        case Kind::linear:
            return x * matrix.transpose();
        }
        return x;
    }

    /// H x with measurement noise drawn from rng.
    Points apply(const Points& x, Rng& rng) const {
        Points y = apply_mean(x);
        if (kind == Kind::linear && noise_std > 0.0) y += noise_std * standard_normal(y.rows(), y.cols(), rng);
        return y;
    }

    /// H^T r for the noise-free operator.
    Points adjoint(const Points& r) const {
        switch (kind) {
        case Kind::identity:
            return r;
        case Kind::coordinate_mask: {
            Points y = r;
            for (int i : mask_indices) y.col(i).setZero();
            return y;
        }
        case Kind::linear:
            require(r.cols() == matrix.rows(), "operator: residual width mismatch");
            return r * matrix;
        }
        return r;
    }
};

struct Coupling {
    enum class Kind { independent, ot, supervised };

    Kind kind = Kind::independent;
    double ot_tau_rel = 0.05;              // tau = ot_tau_rel * mean(C) per batch
    std::optional<double> ot_tau;          // absolute tau, overrides ot_tau_rel
    CorruptionOperator op;                 // supervised only
    double perturb_scale = 0.05;

    static Coupling independent() { return {}; }
    static Coupling optimal_transport(double tau_rel = 0.05) {
        Coupling c;
        c.kind = Kind::ot;
        c.ot_tau_rel = tau_rel;
        return c;
    }
    static Coupling supervised(CorruptionOperator op, double perturb_scale = 0.05) {
        Coupling c;
        c.kind = Kind::supervised;
        c.op = std::move(op);
        c.perturb_scale = perturb_scale;
        return c;
    }

    /// Masking operators are trained without x1 perturbation.
    double training_perturbation() const {
        if (kind == Kind::supervised && op.is_masking()) return 0.0;
        return perturb_scale;
    }

    void validate() const {
        require(perturb_scale >= 0.0, "coupling: perturb_scale must be non-negative");
        if (kind == Kind::ot) {
            require(ot_tau_rel > 0.0, "coupling: ot_tau_rel must be positive");
            if (ot_tau) require(*ot_tau > 0.0, "coupling: ot tau must be positive");
        }
    }
};

inline const char* to_string(Coupling::Kind k) {
    switch (k) {
    case Coupling::Kind::independent: return "independent";
    case Coupling::Kind::ot: return "ot";
    case Coupling::Kind::supervised: return "supervised";
    }
    return "?";
}

// ---------------------------------------------------------------------------

inline PairBatch sample_independent(const Sampler& source, const Sampler& target, Eigen::Index m, Rng& rng) {
    require(m >= 1, "sample_independent: batch size must be >= 1");
    PairBatch b{source(m, rng), target(m, rng)};
    require(b.x0.rows() == m && b.x1.rows() == m, "sample_independent: sampler returned wrong batch size");
    require(b.x0.cols() == b.x1.cols(), "sample_independent: endpoint dimensions differ");
    return b;
}

/// Squared Euclidean cost C_ij = ||x0_i - x1_j||^2.
inline Points cost_matrix(const Points& x0, const Points& x1) {
    require(x0.cols() == x1.cols(), "cost_matrix: dimension mismatch");
    Points c(x0.rows(), x1.rows());
    for (Eigen::Index i = 0; i < x0.rows(); ++i)
        for (Eigen::Index j = 0; j < x1.rows(); ++j) c(i, j) = (x0.row(i) - x1.row(j)).squaredNorm();
    return c;
}

struct TransportPlan {
    Points plan;                          // M x M, rows and columns sum to 1/M
    double tau = 0.0;
    int iterations_used = 0;
    bool converged = false;
    double marginal_residual = 0.0;       // max |row/col sum - 1/M|
    std::vector<double> residual_history; // one entry per iteration
};

struct SinkhornOptions {
    int max_iterations = 10000;
    double tolerance = 1e-6;
    /// Warm-start through tau_k = max C / 2^k down to tau, each stage run to
    /// tolerance. Small tau otherwise converges sublinearly.
    bool anneal = true;
    double stage_tolerance = 1e-4;  // marginal residual that ends an intermediate stage
};

/// Entropic OT plan for uniform marginals, computed with log-domain
/// Sinkhorn updates on the dual potentials.
inline TransportPlan sinkhorn_plan(const Points& x0, const Points& x1, double tau, SinkhornOptions opt = {}) {
    const Eigen::Index m = x0.rows();
    require(m >= 1 && x1.rows() == m, "sinkhorn_plan: need two batches of equal size >= 1");
    require(tau > 0.0 && std::isfinite(tau), "sinkhorn_plan: tau must be positive");
    require(opt.max_iterations >= 1, "sinkhorn_plan: max_iterations must be >= 1");

    using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Arr cost = cost_matrix(x0, x1).array();
    const double log_marg = -std::log(static_cast<double>(m));
    const double target = 1.0 / static_cast<double>(m);
    // dual potentials in cost units; the iterations work with f / tau
    Eigen::ArrayXd pf = Eigen::ArrayXd::Zero(m), pg = Eigen::ArrayXd::Zero(m);

    Arr neg(m, m), neg_t(m, m);
    Eigen::ArrayXd buf(m);
    // out_i = log sum_j exp(k_ij + p_j), one contiguous row at a time
    auto lse = [&](const Arr& k, const Eigen::ArrayXd& p) {
        Eigen::ArrayXd r(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            buf = k.row(i).transpose() + p;
            const double mx = buf.maxCoeff();
            r[i] = mx + std::log((buf - mx).exp().sum());
        }
        return r;
    };

    TransportPlan out;
    out.tau = tau;
    std::vector<double> stages;
    if (opt.anneal)
        for (double s = cost.maxCoeff(); s > tau; s *= 0.5) stages.push_back(s);
    stages.push_back(tau);

    Eigen::ArrayXd f, g;
    int used = 0;
    for (std::size_t k = 0; k < stages.size(); ++k) {
        const double eps = stages[k];
        const bool last = k + 1 == stages.size();
        neg = -cost / eps;
        neg_t = neg.transpose();
        f = pf / eps;
        g = pg / eps;
        Eigen::ArrayXd row_lse = lse(neg, g);
        double resid = std::numeric_limits<double>::infinity();
        while (used < opt.max_iterations) {
            f = log_marg - row_lse;
            g = log_marg - lse(neg_t, f);
            // columns are exact after the g update; rows carry the violation
            row_lse = lse(neg, g);
            resid = ((f + row_lse).exp() - target).abs().maxCoeff();
            ++used;
            if (last) out.residual_history.push_back(resid);
            if (resid < (last ? opt.tolerance : opt.stage_tolerance)) break;
        }
        pf = eps * f;
        pg = eps * g;
        if (last) {
            out.marginal_residual = resid;
            out.converged = resid < opt.tolerance;
        }
        if (used >= opt.max_iterations && !last) {
            // budget spent while annealing: report the state at the target tau
            neg = -cost / tau;
            f = pf / tau;
            g = pg / tau;
            out.marginal_residual = ((f + lse(neg, g)).exp() - target).abs().maxCoeff();
            out.residual_history.push_back(out.marginal_residual);
            break;
        }
    }
    out.iterations_used = used;

    out.plan = (neg.colwise() + f).rowwise() + g.transpose();
    out.plan = out.plan.array().exp().matrix();
    return out;
}

/// Index pairs drawn i.i.d. with probability proportional to the plan.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> sample_plan_indices(const Points& plan, Eigen::Index count,
                                                                             Rng& rng) {
    require(plan.size() > 0, "sample_plan_indices: empty plan");
    std::vector<double> cum(static_cast<std::size_t>(plan.size()));
    double acc = 0.0;
    for (Eigen::Index k = 0; k < plan.size(); ++k) {
        const double p = plan.data()[k];
        if (!(p >= 0.0) || !std::isfinite(p)) throw Fault("sample_ot_pairs: plan has negative or non-finite mass");
        acc += p;
        cum[k] = acc;
    }
    if (!(acc > 0.0)) throw Fault("sample_ot_pairs: degenerate plan with zero mass");
    std::uniform_real_distribution<double> unif(0.0, acc);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index n = 0; n < count; ++n) {
        const double u = unif(rng);
        // first cell whose cumulative mass exceeds u; never a zero-mass cell
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        if (it == cum.end()) it = std::lower_bound(cum.begin(), cum.end(), acc);
        const auto k = static_cast<Eigen::Index>(it - cum.begin());
        out.emplace_back(k / plan.cols(), k % plan.cols());
    }
    return out;
}

inline PairBatch sample_ot_pairs(const TransportPlan& tp, const Points& x0, const Points& x1, Eigen::Index m, Rng& rng) {
    require(tp.plan.rows() == x0.rows() && tp.plan.cols() == x1.rows(), "sample_ot_pairs: plan shape mismatch");
    require(x0.cols() == x1.cols(), "sample_ot_pairs: dimension mismatch");
    const auto idx = sample_plan_indices(tp.plan, m, rng);
    PairBatch b{Points(m, x0.cols()), Points(m, x1.cols())};
    for (Eigen::Index n = 0; n < m; ++n) {
        b.x0.row(n) = x0.row(idx[n].first);
        b.x1.row(n) = x1.row(idx[n].second);
    }
    return b;
}

inline PairBatch sample_supervised(const Points& x0, const CorruptionOperator& op, Rng& rng) {
    require(op.output_dim(x0.cols()) == x0.cols(), "sample_supervised: operator must preserve dimension");
    return PairBatch{x0, op.apply(x0, rng)};
}

inline PairBatch sample_supervised(const Points& x0, const CorruptionOperator& op) {
    Rng rng(op.seed);
    return sample_supervised(x0, op, rng);
}

/// x1 <- x1 + scale * eps, eps standard normal per element.
inline PairBatch perturb_x1(PairBatch b, double scale, Rng& rng) {
    require(scale >= 0.0, "perturb_x1: scale must be non-negative");
    if (scale == 0.0) return b;
    b.x1 += scale * standard_normal(b.x1.rows(), b.x1.cols(), rng);
    return b;
}

/// One coupled batch. For OT the plan is computed on an independent draw and
/// resampled; `plan_out` receives it when non-null.
inline PairBatch sample_coupling(const Coupling& c, const Sampler& source, const Sampler& target, Eigen::Index m,
                                 Rng& rng, TransportPlan* plan_out = nullptr) {
    c.validate();
    switch (c.kind) {
    case Coupling::Kind::independent:
        return sample_independent(source, target, m, rng);
    case Coupling::Kind::ot: {
        require(m >= 2, "OT coupling needs batch size >= 2");
        PairBatch raw = sample_independent(source, target, m, rng);
        double tau = 0.0;
        if (c.ot_tau) {
            tau = *c.ot_tau;
        } else {
            tau = c.ot_tau_rel * cost_matrix(raw.x0, raw.x1).mean();
            if (!(tau > 0.0)) tau = 1e-12;
        }
        TransportPlan tp = sinkhorn_plan(raw.x0, raw.x1, tau);
        PairBatch b = sample_ot_pairs(tp, raw.x0, raw.x1, m, rng);
        if (plan_out) *plan_out = std::move(tp);
        return b;
    }
    case Coupling::Kind::supervised:
        return sample_supervised(source(m, rng), c.op, rng);
    }
    return {};
}

}  // namespace gctm
