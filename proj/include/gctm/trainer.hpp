#pragma once

#include "gctm/checkpoint.hpp"
#include "gctm/couplings.hpp"
#include "gctm/model.hpp"
#include "gctm/schedule.hpp"

#include <chrono>
#include <ostream>

namespace gctm {

struct TrainConfig {
    std::int64_t total_iters = 20000;
    int batch_size = 128;
    double lambda_fm = 0.1;
    Coupling coupling;
    EdmParams edm;
    int n_start = 4;
    int n_stages = 4;  // N_start, 2 N_start, ... over equal phases
    ThatMode that_mode = ThatMode::unconditional;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 1000;
    std::int64_t checkpoint_every = 0;
    std::int64_t log_every = 100;
    int hidden = 256;
    int depth = 3;
    TimeEmbedding embedding;
    double ema_decay = 0.999;
    std::optional<double> learning_rate;  // defaults to 0.0002 / (128 / batch_size)

    void validate() const {
        require(total_iters >= 0, "TrainConfig: total_iters must be >= 0");
        require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
        require(coupling.kind != Coupling::Kind::ot || batch_size >= 2, "TrainConfig: OT coupling needs batch_size >= 2");
        require(lambda_fm >= 0.0, "TrainConfig: lambda_fm must be >= 0");
        require(hidden >= 1 && depth >= 0, "TrainConfig: invalid network shape");
        require(eval_every >= 0 && checkpoint_every >= 0 && log_every >= 0, "TrainConfig: intervals must be >= 0");
        coupling.validate();
        edm.validate();
    }
};

/// Endpoint samplers for the task: x0 ~ q(x0) (data), x1 ~ q(x1).
struct TrainingTask {
    Sampler x0_sampler;
    Sampler x1_sampler;
    int dim = 2;
};

struct LossReport {
    std::int64_t iter = 0;
    double gctm_loss = 0.0;
    double fm_loss = 0.0;
    double total = 0.0;
    int grid_n = 0;
    double wallclock = 0.0;  // seconds spent in the step
};

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Per-row x_t = (1 - t) x0 + t x1.
inline Points interpolate(const PairBatch& b, std::span<const double> t) {
    require(static_cast<Eigen::Index>(t.size()) == b.size(), "interpolate: time batch size mismatch");
    Points x(b.x0.rows(), b.x0.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) x.row(i) = (1.0 - t[i]) * b.x0.row(i) + t[i] * b.x1.row(i);
    return x;
}

/// mean_m ||x0 - g(x_that, that, that)||^2 and its exact weight gradient.
template <typename Scalar>
LossAndGrad fm_loss(const NetworkView<Scalar>& net, const PairBatch& b, std::span<const double> that) {
    const Points x = interpolate(b, that);
    Tape<Scalar> tape;
    const Points pred = net.forward(x, that, that, &tape);
    const Points diff = pred - b.x0;
    const double m = static_cast<double>(b.size());
    LossAndGrad out;
    out.loss = diff.rowwise().squaredNorm().sum() / m;
    out.grad = net.backward(tape, (2.0 / m) * diff).weights;
    return out;
}

struct TripletBatch {
    std::vector<double> t, u, s;

    Eigen::Index size() const { return static_cast<Eigen::Index>(t.size()); }

    static TripletBatch sample(const TimeGrid& grid, Eigen::Index m, Rng& rng) {
        TripletBatch b;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Triplet tr = sample_triplet(grid, rng);
            b.t.push_back(tr.t);
            b.u.push_back(tr.u);
            b.s.push_back(tr.s);
        }
        return b;
    }
};

/// One Heun step t -> u of the FM ODE whose posterior mean is g(x, t, t).
/// Rows with u = 0 take the Euler step, which equals g(x_t, t, t).
inline Points heun_step_rows(const Regressor& g, const Points& x, std::span<const double> t,
                             std::span<const double> u) {
    const Points m1 = g.predict(x, t, t);
    Points v1(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        require(t[i] > 0.0 && u[i] < t[i], "heun_step_rows: need 0 <= u < t");
        v1.row(i) = (x.row(i) - m1.row(i)) / t[i];
    }
    Points xe(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) xe.row(i) = x.row(i) + (u[i] - t[i]) * v1.row(i);
    const Points m2 = g.predict(xe, u, u);
    Points out = xe;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (u[i] == 0.0) {
            out.row(i) = m1.row(i);
            continue;
        }
        const Eigen::RowVectorXd v2 = (xe.row(i) - m2.row(i)) / u[i];
        out.row(i) = x.row(i) + 0.5 * (u[i] - t[i]) * (v1.row(i) + v2);
    }
    return out;
}

/// Distillation targets G_target(x_{t->u}, u, s), where x_{t->u} is one Heun
/// step driven by `solver` (the EMA network during training).
inline Points gctm_targets(const Regressor& solver, const Regressor& target, const PairBatch& b,
                           const TripletBatch& tr) {
    require(tr.size() == b.size(), "gctm_targets: triplet batch size mismatch");
    const Points xt = interpolate(b, tr.t);
    const Points xu = heun_step_rows(solver, xt, tr.t, tr.u);
    // G(x, u, s) with G(x, u, u) = x, which also covers u = s = 0
    std::vector<double> u_safe(tr.u.size());
    for (std::size_t i = 0; i < u_safe.size(); ++i) u_safe[i] = tr.u[i] == tr.s[i] ? 1.0 : tr.u[i];
    const Points gv = target.predict(xu, tr.u, tr.s);
    Points out(xu.rows(), xu.cols());
    for (Eigen::Index i = 0; i < xu.rows(); ++i) {
        if (tr.u[i] == tr.s[i]) {
            out.row(i) = xu.row(i);
        } else {
            const double r = tr.s[i] / u_safe[i];
            out.row(i) = r * xu.row(i) + (1.0 - r) * gv.row(i);
        }
    }
    if (!all_finite(out)) throw Fault("gctm_targets: non-finite target");
    return out;
}

/// mean_m pseudo_huber(G(x_t, t, s), target) for an arbitrary regressor (no gradient).
inline double gctm_loss_value(const Regressor& g, const PairBatch& b, const TripletBatch& tr, const Points& targets) {
    const Points xt = interpolate(b, tr.t);
    const Points pred = apply_g(g, xt, tr.t, tr.s);
    const auto ph = pseudo_huber(pred, targets, static_cast<int>(b.dim()));
    double acc = 0.0;
    for (double v : ph) acc += v;
    return acc / static_cast<double>(b.size());
}

/// Distillation loss against fixed targets, with the gradient flowing only
/// through G_theta(x_t, t, s).
template <typename Scalar>
LossAndGrad gctm_loss(const NetworkView<Scalar>& net, const PairBatch& b, const TripletBatch& tr,
                      const Points& targets) {
    require(targets.rows() == b.size() && targets.cols() == b.dim(), "gctm_loss: target shape mismatch");
    const Points xt = interpolate(b, tr.t);
    Tape<Scalar> tape;
    const Points gv = net.forward(xt, tr.t, tr.s, &tape);
    const Points pred = big_g(xt, tr.t, tr.s, gv);
    const double c = pseudo_huber_c(static_cast<int>(b.dim()));
    const double m = static_cast<double>(b.size());
    Points cot(pred.rows(), pred.cols());
    LossAndGrad out;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const Eigen::RowVectorXd diff = pred.row(i) - targets.row(i);
        const double sq = diff.squaredNorm();
        const double root = std::sqrt(sq + c * c);
        out.loss += sq / (root + c);
        const double r = tr.s[i] / tr.t[i];
        cot.row(i) = ((1.0 - r) / (m * root)) * diff;
    }
    out.loss /= m;
    if (!std::isfinite(out.loss)) throw Fault("gctm_loss: non-finite loss");
    out.grad = net.backward(tape, cot).weights;
    return out;
}

// ---------------------------------------------------------------------------

struct TrainState {
    ParamStore params;
    OptimizerState opt;
    std::int64_t iter = 0;
};

inline TrainState init_train_state(const TrainConfig& cfg, int dim) {
    cfg.validate();
    TrainState st;
    st.params = init_params(mlp_layer_dims(dim, cfg.hidden, cfg.depth, cfg.embedding), cfg.embedding,
                            mix_seed(cfg.seed, 0xC0FFEE), cfg.ema_decay);
    st.opt = OptimizerState::for_params(st.params, cfg.batch_size);
    if (cfg.learning_rate) st.opt.lr = *cfg.learning_rate;
    return st;
}

inline TimeGrid grid_for_iter(const TrainConfig& cfg, std::int64_t iter) {
    return TimeGrid::edm(grid_size_at(iter, cfg.total_iters, cfg.n_start, cfg.n_stages), cfg.edm);
}

/// One iteration: coupled batch, both losses, Adam on the weighted sum, EMA.
/// Randomness depends only on (seed, iteration index).
inline LossReport train_step(TrainState& st, const TrainConfig& cfg, const TrainingTask& task) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(st.iter) + 1));
    const TimeGrid grid = grid_for_iter(cfg, st.iter);
    const Eigen::Index m = cfg.batch_size;

    PairBatch pairs = sample_coupling(cfg.coupling, task.x0_sampler, task.x1_sampler, m, rng);
    pairs = perturb_x1(std::move(pairs), cfg.coupling.training_perturbation(), rng);

    std::vector<double> that(static_cast<std::size_t>(m));
    for (auto& v : that) v = sample_that(cfg.that_mode, rng);
    const TripletBatch tr = TripletBatch::sample(grid, m, rng);

    const auto solver = ema_regressor(st.params);
    const auto target = online_regressor(st.params);  // sg(theta)
    const Points targets = gctm_targets(solver, target, pairs, tr);

    const auto net = online_view(st.params);
    LossAndGrad fm = fm_loss(net, pairs, that);
    LossAndGrad gc = gctm_loss(net, pairs, tr, targets);

    std::vector<double> grad(gc.grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = gc.grad[i] + cfg.lambda_fm * fm.grad[i];
    try {
        adam_step(st.params, st.opt, grad);
    } catch (const Fault& e) {
        throw Fault("train_step: iteration " + std::to_string(st.iter) + " gctm_loss=" + std::to_string(gc.loss) +
                    " fm_loss=" + std::to_string(fm.loss) + ": " + e.what());
    }
    ema_update(st.params);

    LossReport rep;
    rep.iter = st.iter;
    rep.gctm_loss = gc.loss;
    rep.fm_loss = fm.loss;
    rep.total = gc.loss + cfg.lambda_fm * fm.loss;
    rep.grid_n = grid.steps();
    rep.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.iter += 1;
    return rep;
}

struct MetricValue {
    std::string name;
    double value = 0.0;
};

struct TrainLoopHooks {
    std::function<MetricValue(const ParamStore&)> evaluate;  // called every eval_every and at the end
    std::ostream* csv = nullptr;                             // metric log
    std::string checkpoint_path;                             // written every checkpoint_every and at the end
    std::map<std::string, std::string> checkpoint_meta;
    std::function<void(const LossReport&)> on_step;
};

struct TrainResult {
    ParamStore params;
    std::vector<LossReport> log;
    std::vector<std::pair<std::int64_t, MetricValue>> metrics;
};

inline void write_csv_header(std::ostream& os) { os << "iter,gctm_loss,fm_loss,total,N,metric_name,metric_value\n"; }

inline void write_csv_row(std::ostream& os, const LossReport& r, const MetricValue* metric) {
    os << r.iter + 1 << ',' << detail::format_double(r.gctm_loss) << ',' << detail::format_double(r.fm_loss) << ','
       << detail::format_double(r.total) << ',' << r.grid_n << ',';
    if (metric) os << metric->name << ',' << detail::format_double(metric->value);
    else os << ',';
    os << '\n';
}

/// Runs total_iters steps with the N-doubling grid schedule, periodic
/// evaluation, logging and checkpointing.
inline TrainResult train_loop(const TrainConfig& cfg, const TrainingTask& task, const TrainLoopHooks& hooks = {}) {
    cfg.validate();
    TrainState st = init_train_state(cfg, task.dim);
    TrainResult res;
    if (hooks.csv) write_csv_header(*hooks.csv);
    for (std::int64_t it = 0; it < cfg.total_iters; ++it) {
        const LossReport rep = train_step(st, cfg, task);
        res.log.push_back(rep);
        if (hooks.on_step) hooks.on_step(rep);
        const bool last = it + 1 == cfg.total_iters;
        const bool do_eval = hooks.evaluate && ((cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0) || last);
        std::optional<MetricValue> metric;
        if (do_eval) {
            metric = hooks.evaluate(st.params);
            res.metrics.emplace_back(it + 1, *metric);
        }
        if (hooks.csv && (metric || (cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) || last))
            write_csv_row(*hooks.csv, rep, metric ? &*metric : nullptr);
        const bool do_ckpt =
            !hooks.checkpoint_path.empty() && ((cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) || last);
        if (do_ckpt) {
            try {
                save_checkpoint(hooks.checkpoint_path, st.params, hooks.checkpoint_meta);
            } catch (const Fault&) {
                if (hooks.csv) hooks.csv->flush();
                throw;
            }
        }
    }
    if (hooks.csv) hooks.csv->flush();
    res.params = std::move(st.params);
    return res;
}

}  // namespace gctm
