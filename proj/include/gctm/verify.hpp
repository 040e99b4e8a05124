#pragma once

// Fast numerical self-checks: posterior-mean identities, the diffusion/FM
// change of variables, Sinkhorn against exact OT, Heun order, backward pass
// against finite differences, and the G(x,t,t) = x wrapper identity.

#include "gctm/couplings.hpp"
#include "gctm/model.hpp"
#include "gctm/oracle.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace gctm {

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;       // measured quantity
    double limit = 0.0;       // tolerance it is compared against
    double seconds = 0.0;
    double time_budget = 0.0; // 0 means unbounded
    std::string detail;
};

inline std::string format_check(const CheckResult& r) {
    char head[256];
    std::snprintf(head, sizeof head, "value=%.6g limit=%.6g time=%.2fs", r.value, r.limit, r.seconds);
    std::string out = std::string(r.passed ? "[PASS] " : "[FAIL] ") + r.name + ": " + head;
    if (r.time_budget > 0) out += " budget=" + std::to_string(static_cast<int>(r.time_budget)) + "s";
    if (!r.detail.empty()) out += "  " + r.detail;
    return out;
}

namespace detail {

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline CheckResult finish(std::string name, double value, double limit, const Stopwatch& sw, double budget,
                          std::string detail = {}) {
    CheckResult r{std::move(name), false, value, limit, sw.seconds(), budget, std::move(detail)};
    r.passed = std::isfinite(value) && value < limit && (budget <= 0 || r.seconds < budget);
    return r;
}

inline GaussianSpec random_spec(int d, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> v(0.2, 2.0);
    GaussianSpec g{Eigen::VectorXd(d), Eigen::VectorXd(d), Eigen::VectorXd(d), Eigen::VectorXd(d)};
    for (int k = 0; k < d; ++k) {
        g.mu0[k] = n(rng);
        g.mu1[k] = n(rng);
        g.var0[k] = v(rng);
        g.var1[k] = v(rng);
    }
    return g;
}

}  // namespace detail

/// E[x1 - x0 | x_t] from direct Gaussian conditioning against (x_t - E[x0|x_t]) / t.
inline CheckResult check_velocity_identity(int n = 1000, std::uint64_t seed = 1) {
    detail::Stopwatch sw;
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        const GaussianSpec g = detail::random_spec(3, rng);
        const double t = 1.0 - unit(rng);  // (0, 1]
        const Points x = standard_normal(1, 3, rng) * 3.0;
        const Points direct = fm_target_posterior_mean(x, t, g) - fm_posterior_mean(x, t, g);
        const Points via_x0 = velocity(x, t, oracle_field(g));
        worst = std::max(worst, (direct - via_x0).cwiseAbs().maxCoeff());
    }
    return detail::finish("velocity identity E[x1-x0|x_t] = (x_t - E[x0|x_t])/t", worst, 1e-10, sw, 1.0,
                          std::to_string(n) + " random (x,t)");
}

/// Diffusion posterior mean under N(x0, t^2 I) against the FM posterior mean
/// at (x / (1+t), t / (1+t)) with q(x1) = N(0, I).
inline CheckResult check_score_equivalence(int n = 1000, std::uint64_t seed = 2) {
    detail::Stopwatch sw;
    Rng rng(seed);
    std::uniform_real_distribution<double> tdist(0.0, 50.0);
    double worst = 0.0;
    for (int k = 0; k < n; ++k) {
        GaussianSpec g = detail::random_spec(3, rng);
        g.mu1.setZero();
        g.var1.setOnes();
        const double t = 50.0 - tdist(rng);  // (0, 50]
        const Points x = standard_normal(1, 3, rng) * (1.0 + t);
        const Points diff = diffusion_posterior_mean(x, t, g.mu0, g.var0);
        const FmState fm = ctm_to_gctm(x, t);
        const Points flow = fm_posterior_mean(fm.x, fm.t, g);
        worst = std::max(worst, (diff - flow).cwiseAbs().maxCoeff());
    }
    return detail::finish("diffusion vs FM posterior mean under t' = t/(1+t)", worst, 1e-12, sw, 1.0,
                          std::to_string(n) + " random (x,t), t in (0,50]");
}

/// PFODE trajectory over sigma in [sigma_min, sigma_max] against (1 + sigma)
/// times the FM trajectory on the matched grid t' = sigma / (1 + sigma).
inline CheckResult check_trajectory_equivalence(int steps = 4096, std::uint64_t seed = 3) {
    detail::Stopwatch sw;
    Rng rng(seed);
    GaussianSpec g;
    g.mu0 = Eigen::Vector2d(1.0, -1.0);
    g.var0 = Eigen::Vector2d(0.25, 0.5);
    g.mu1 = Eigen::Vector2d::Zero();
    g.var1 = Eigen::Vector2d::Ones();
    const EdmParams p;
    const auto sig = edm_sigmas(steps, p);
    std::vector<double> sigma_desc(sig.rbegin(), sig.rend()), tp_desc(sig.size());
    for (std::size_t n = 0; n < sig.size(); ++n) tp_desc[n] = fm_time(sigma_desc[n]);

    // x ~ p_sigma_max: data plus N(0, sigma_max^2)
    Points x = GaussianSpec::diag_sampler(g.mu0, g.var0)(64, rng) + p.sigma_max * standard_normal(64, 2, rng);
    const VelocityFn pf = [&](const Points& y, double s) {
        return pfode_velocity(y, s, [&](const Points& z, double tt) { return diffusion_posterior_mean(z, tt, g.mu0, g.var0); });
    };
    const VelocityField field = oracle_field(g);
    const VelocityFn fm = [&](const Points& y, double t) { return velocity(y, t, field); };

    std::vector<Points> path_ctm, path_fm;
    integrate_times(x, sigma_desc, pf, Solver::heun, &path_ctm);
    integrate_times(ctm_to_gctm(x, p.sigma_max).x, tp_desc, fm, Solver::heun, &path_fm);
    double worst = 0.0;
    for (std::size_t n = 0; n < path_ctm.size(); ++n)
        worst = std::max(worst, (path_ctm[n] - (1.0 + sigma_desc[n]) * path_fm[n]).cwiseAbs().maxCoeff());
    return detail::finish("PFODE trajectory = (1+sigma) x FM trajectory", worst, 1e-3, sw, 10.0,
                          std::to_string(steps) + " steps, sigma in [0.002, 80], max over path");
}

/// Exact OT cost for uniform marginals by enumerating permutations.
inline double exact_assignment_cost(const Points& c) {
    std::vector<int> perm(static_cast<std::size_t>(c.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double acc = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) acc += c(static_cast<Eigen::Index>(i), perm[i]);
        best = std::min(best, acc);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(c.rows());
}

/// Marginal residuals and cost gap to exact OT at tau = 1e-3 max C, M = 2..6.
inline CheckResult check_sinkhorn(int instances_per_size = 20, std::uint64_t seed = 4) {
    detail::Stopwatch sw;
    Rng rng(seed);
    double worst_gap = 0.0, worst_resid = 0.0;
    int unconverged = 0, most_iterations = 0;
    // run each instance to convergence; near-tied assignments need >1e4 sweeps
    SinkhornOptions opt;
    opt.max_iterations = 100000;
    for (int m = 2; m <= 6; ++m)
        for (int k = 0; k < instances_per_size; ++k) {
            const Points a = standard_normal(m, 2, rng), b = standard_normal(m, 2, rng);
            const Points c = cost_matrix(a, b);
            const TransportPlan tp = sinkhorn_plan(a, b, 1e-3 * c.maxCoeff(), opt);
            if (!tp.converged) ++unconverged;
            most_iterations = std::max(most_iterations, tp.iterations_used);
            const double target = 1.0 / m;
            worst_resid = std::max({worst_resid, (tp.plan.rowwise().sum().array() - target).abs().maxCoeff(),
                                    (tp.plan.colwise().sum().array() - target).abs().maxCoeff()});
            const double exact = exact_assignment_cost(c);
            const double cost = (tp.plan.array() * c.array()).sum();
            worst_gap = std::max(worst_gap, (cost - exact) / exact);
        }
    std::ostringstream d;
    d << "max marginal residual " << worst_resid << " (< 1e-6), unconverged " << unconverged << ", most sweeps "
      << most_iterations;
    CheckResult r = detail::finish("Sinkhorn cost gap to exact OT, M <= 6", worst_gap, 0.01, sw, 5.0, d.str());
    r.passed = r.passed && worst_resid < 1e-6 && unconverged == 0;
    return r;
}

/// Least-squares slope of log(error) against log(1/N).
inline double loglog_slope(const std::vector<int>& ns, const std::vector<double>& errs) {
    const std::size_t k = ns.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double x = std::log(1.0 / ns[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

/// Heun endpoint error against the 4096-step reference, N = 8..64.
inline CheckResult check_solver_order(std::uint64_t seed = 5) {
    detail::Stopwatch sw;
    Rng rng(seed);
    GaussianSpec g;
    g.mu0 = Eigen::Vector2d(1.0, -1.0);
    g.var0 = Eigen::Vector2d(0.25, 0.5);
    g.mu1 = Eigen::Vector2d::Zero();
    g.var1 = Eigen::Vector2d::Ones();
    const Points x1 = g.target_sampler()(256, rng);
    const Points ref = reference_trajectory(x1, g, 4096).endpoint;
    const std::vector<int> ns{8, 16, 32, 64};
    std::vector<double> errs;
    std::ostringstream d;
    for (int n : ns) {
        const Points end = integrate({x1, 1.0, 0.0, TimeGrid::uniform(n), Solver::heun}, oracle_field(g));
        errs.push_back((end - ref).cwiseAbs().maxCoeff());
        d << "N=" << n << ":" << errs.back() << " ";
    }
    const double slope = loglog_slope(ns, errs);
    CheckResult r = detail::finish("Heun log-log slope in [1.8, 2.2]", std::abs(slope - 2.0), 0.2, sw, 10.0, d.str());
    r.value = slope;
    r.limit = 2.2;
    r.passed = r.passed && slope >= 1.8 && slope <= 2.2;
    return r;
}

// ---------------------------------------------------------------------------
// Backward pass against finite differences

/// Straight-loop network evaluation, independent of the Eigen code path.
template <typename Real>
std::vector<Real> naive_forward(const std::vector<int>& dims, const std::vector<Real>& w, int freqs, double scale,
                                const std::vector<Real>& x, double t, double s) {
    std::vector<Real> a = x;
    for (double tau : {t, s})
        for (int k = 0; k < freqs; ++k) {
            const Real om = static_cast<Real>(scale) * std::pow(Real(2), Real(k));
            a.push_back(std::sin(om * static_cast<Real>(tau)));
            a.push_back(std::cos(om * static_cast<Real>(tau)));
        }
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fi = dims[l], fo = dims[l + 1];
        std::vector<Real> z(static_cast<std::size_t>(fo), Real(0));
        for (int o = 0; o < fo; ++o) {
            Real acc = w[off + static_cast<std::size_t>(fi * fo + o)];
            for (int i = 0; i < fi; ++i) acc += w[off + static_cast<std::size_t>(o * fi + i)] * a[i];
            z[o] = acc;
        }
        off += static_cast<std::size_t>(fi + 1) * fo;
        if (l + 2 < dims.size())
            for (Real& v : z) v = v / (Real(1) + std::exp(-v));
        a = std::move(z);
    }
    return a;
}

struct GradientCheckReport {
    double worst_weight_error = 0.0;  // Richardson-extrapolated central differences
    double worst_input_error = 0.0;
    double worst_plain_error = 0.0;   // single central difference at h, for reference
    std::size_t coordinates = 0;
};

inline double relative_error(double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m == 0.0 ? 0.0 : std::abs(a - b) / m;
}

/// Random small networks in double precision. The backward pass is compared
/// against central differences of <cot, g> at step h = 1e-3, combined over h
/// and h/2 (Richardson) so the O(h^2) truncation term cancels.
inline GradientCheckReport gradient_check_sweep(int configurations, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> width(2, 12), depth(1, 3), dim(1, 3), batch(1, 4), freqs(0, 3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    GradientCheckReport rep;
    const double h = 1e-3;

    for (int c = 0; c < configurations; ++c) {
        TimeEmbedding emb{freqs(rng), 1.0};
        const int d = dim(rng);
        const auto dims = mlp_layer_dims(d, width(rng), depth(rng), emb);
        std::vector<double> w(parameter_count(dims));
        for (double& v : w) v = 0.7 * n01(rng);
        const int m = batch(rng);
        Points x(m, d), cot(m, d);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = n01(rng);
            cot.data()[i] = n01(rng);
        }
        std::vector<double> t(m), s(m);
        for (int i = 0; i < m; ++i) {
            t[i] = unit(rng);
            s[i] = unit(rng) * t[i];
        }

        Gradients g;
        {
            NetworkView<double> net(dims, emb, w);
            Tape<double> tape;
            net.forward(x, t, s, &tape);
            g = net.backward(tape, cot);
        }

        std::vector<double> xs(x.data(), x.data() + x.size());
        auto objective = [&] {
            double acc = 0;
            for (int i = 0; i < m; ++i) {
                const std::vector<double> xi(xs.begin() + i * d, xs.begin() + (i + 1) * d);
                const auto out = naive_forward<double>(dims, w, emb.num_frequencies, emb.scale, xi, t[i], s[i]);
                for (int k = 0; k < d; ++k) acc += cot(i, k) * out[k];
            }
            return acc;
        };
        auto central = [&](double& coord, double step) {
            const double keep = coord;
            coord = keep + step;
            const double up = objective();
            coord = keep - step;
            const double dn = objective();
            coord = keep;
            return (up - dn) / (2 * step);
        };
        auto check = [&](double& coord, double analytic, double& worst) {
            const double coarse = central(coord, h);
            const double fine = central(coord, h / 2);
            worst = std::max(worst, relative_error(analytic, (4 * fine - coarse) / 3));
            rep.worst_plain_error = std::max(rep.worst_plain_error, relative_error(analytic, coarse));
            ++rep.coordinates;
        };

        for (std::size_t j = 0; j < w.size(); ++j) check(w[j], g.weights[j], rep.worst_weight_error);
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < d; ++k) check(xs[static_cast<std::size_t>(i * d + k)], g.input(i, k), rep.worst_input_error);
    }
    return rep;
}

inline CheckResult check_gradients(int configurations = 100, std::uint64_t seed = 6) {
    detail::Stopwatch sw;
    const GradientCheckReport r = gradient_check_sweep(configurations, seed);
    std::ostringstream d;
    d << r.coordinates << " coordinates; weights " << r.worst_weight_error << ", inputs " << r.worst_input_error
      << "; single-step CD at h=1e-3 " << r.worst_plain_error;
    return detail::finish("backward vs finite differences, worst relative error",
                          std::max(r.worst_weight_error, r.worst_input_error), 1e-4, sw, 30.0, d.str());
}

/// G(x, t, t) through the network wrapper returns x bit-for-bit.
inline CheckResult check_boundary_identity(int n = 10000, std::uint64_t seed = 7) {
    detail::Stopwatch sw;
    Rng rng(seed);
    TimeEmbedding emb;
    const ParamStore p = init_params(mlp_layer_dims(2, 64, 3, emb), emb, seed);
    const auto net = online_regressor(p);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Points x = standard_normal(n, 2, rng) * 5.0;
    std::vector<double> t(static_cast<std::size_t>(n));
    for (auto& v : t) v = 1.0 - unit(rng);
    const Points out = apply_g(net, x, t, t);
    Eigen::Index mismatches = 0;
    for (Eigen::Index i = 0; i < out.size(); ++i) mismatches += out.data()[i] != x.data()[i];
    return detail::finish("G(x,t,t) = x exactly", static_cast<double>(mismatches), 0.5, sw, 0.0,
                          std::to_string(n) + " random (x,t), count of non-identical coordinates");
}

inline std::vector<CheckResult> run_fast_checks() {
    return {check_velocity_identity(), check_score_equivalence(), check_trajectory_equivalence(), check_sinkhorn(),
            check_solver_order(), check_gradients(), check_boundary_identity()};
}

}  // namespace gctm
