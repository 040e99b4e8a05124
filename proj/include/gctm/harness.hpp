#pragma once

#include "gctm/config.hpp"
#include "gctm/metrics.hpp"

namespace gctm {

/// 1-NFE samples from the EMA network on eval_seed-fixed x1 draws.
inline Points eval_samples(const ParamStore& p, const RunConfig& c, int nfe = 1) {
    Rng rng(c.eval_seed);
    const TrainingTask task = c.task();
    const Points x1 = task.x1_sampler(c.eval_samples, rng);
    const auto net = ema_regressor(p);
    if (nfe == 1) return one_step_sample(net, x1);
    return multistep_sample(net, x1, TimeGrid::edm(nfe, c.train.edm));
}

/// Held-out data drawn with a stream disjoint from the x1 draws.
inline Points eval_reference(const RunConfig& c) {
    Rng rng(mix_seed(c.eval_seed, 0xDA7A));
    return c.data.sampler()(c.eval_samples, rng);
}

/// The 1/16 .. 15/16 quantiles of the FM time distribution.
inline std::vector<double> that_quantile_times(ThatMode mode) {
    std::vector<double> t;
    for (int q = 1; q <= 15; ++q) t.push_back(that_quantile(mode, q / 16.0));
    return t;
}

/// Test grid for g(x, t, t) on Gaussian data: x on a 7x7 lattice over +-1.5
/// marginal standard deviations of x_t, at each of the given times.
inline std::vector<std::pair<double, Points>> posterior_test_grid(const GaussianSpec& g, const std::vector<double>& times) {
    std::vector<std::pair<double, Points>> out;
    for (const double t : times) {
        const Eigen::VectorXd m = g.mean_at(t), sd = g.var_at(t).cwiseSqrt();
        Points x(49, g.dim());
        int k = 0;
        for (int a = -3; a <= 3; ++a)
            for (int b = -3; b <= 3; ++b, ++k) {
                x.row(k) = m.transpose();
                x(k, 0) += 0.5 * a * sd[0];
                if (g.dim() > 1) x(k, 1) += 0.5 * b * sd[1];
            }
        out.emplace_back(t, std::move(x));
    }
    return out;
}

/// RMS of g(x, t, t) - E[x0 | x_t] over the test grid. The oracle uses the
/// effective target variance var1 + perturb^2 seen in training.
inline double posterior_rms(const Regressor& g, const GaussianSpec& spec, double perturb, const std::vector<double>& times) {
    GaussianSpec eff = spec;
    eff.var1 = (spec.var1.array() + perturb * perturb).matrix();
    double acc = 0.0;
    Eigen::Index n = 0;
    for (const auto& [t, x] : posterior_test_grid(spec, times)) {
        const auto tv = filled(x.rows(), t);
        acc += (g.predict(x, tv, tv) - fm_posterior_mean(x, t, eff)).rowwise().squaredNorm().sum();
        n += x.rows();
    }
    return std::sqrt(acc / static_cast<double>(n));
}

/// Default grid: times where training actually puts its FM samples.
inline double posterior_rms(const Regressor& g, const GaussianSpec& spec, double perturb, ThatMode mode) {
    return posterior_rms(g, spec, perturb, that_quantile_times(mode));
}

inline MetricValue evaluate_metric(const ParamStore& p, const RunConfig& c) {
    if (c.eval_metric == "posterior_rms")
        return {c.eval_metric, posterior_rms(ema_regressor(p), c.gaussian_spec(), c.train_config().coupling.training_perturbation(),
                                             c.train.that_mode)};
    const Points samples = eval_samples(p, c);
    const Points ref = eval_reference(c);
    if (c.eval_metric == "sliced_wasserstein") return {c.eval_metric, sliced_wasserstein(samples, ref, c.sw_projections, c.eval_seed)};
    return {c.eval_metric, energy_distance(samples, ref)};
}

}  // namespace gctm
