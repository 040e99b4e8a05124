#include "gctm/config.hpp"
#include "gctm/datasets.hpp"
#include "gctm/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace gctm;

namespace {

GaussianSpec toy() {
    GaussianSpec g;
    g.mu0 = Eigen::Vector2d(1.0, -1.0);
    g.var0 = Eigen::Vector2d(0.25, 0.5);
    g.mu1 = Eigen::Vector2d::Zero();
    g.var1 = Eigen::Vector2d::Ones();
    return g;
}

TrainConfig small_config(std::int64_t iters) {
    TrainConfig cfg;
    cfg.total_iters = iters;
    cfg.batch_size = 16;
    cfg.hidden = 16;
    cfg.depth = 2;
    cfg.seed = 5;
    cfg.log_every = 10;
    cfg.eval_every = 0;
    return cfg;
}

TrainingTask toy_task() {
    const auto g = toy();
    return {g.source_sampler(), g.target_sampler(), 2};
}

struct DoubleNet {
    std::vector<int> dims;
    TimeEmbedding emb;
    std::vector<double> w;
    NetworkView<double> view() const { return NetworkView<double>(dims, emb, w); }
};

DoubleNet tiny_net(std::uint64_t seed, bool zero = false) {
    DoubleNet n;
    n.emb.num_frequencies = 2;
    n.dims = mlp_layer_dims(2, 8, 2, n.emb);
    const ParamStore p = init_params(n.dims, n.emb, seed);
    n.w.assign(p.weights.begin(), p.weights.end());
    if (zero) std::fill(n.w.begin(), n.w.end(), 0.0);
    return n;
}

class NanRegressor final : public Regressor {
public:
    Eigen::Index data_dim() const override { return 2; }
    Points predict(const Points& x, std::span<const double>, std::span<const double>) const override {
        return Points::Constant(x.rows(), x.cols(), std::nan(""));
    }
    Points input_vjp(const Points& x, std::span<const double>, std::span<const double>, const Points&) const override {
        return Points::Zero(x.rows(), x.cols());
    }
};

bool same_reports(const std::vector<LossReport>& a, const std::vector<LossReport>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].iter != b[i].iter || a[i].gctm_loss != b[i].gctm_loss || a[i].fm_loss != b[i].fm_loss ||
            a[i].total != b[i].total || a[i].grid_n != b[i].grid_n)
            return false;
    return true;
}

}  // namespace

TEST(FmLoss, ZeroNetworkWithConstantPair) {
    const auto net = tiny_net(1, true);
    Points c(3, 2);
    c << 1, 2, 1, 2, 1, 2;
    const std::vector<double> that{0.1, 0.5, 0.9};
    const auto r = fm_loss(net.view(), PairBatch{c, c}, that);
    EXPECT_DOUBLE_EQ(r.loss, 5.0);
}

TEST(FmLoss, InterpolationIsRowwise) {
    Points x0(2, 1), x1(2, 1);
    x0 << 0, 4;
    x1 << 2, 0;
    const std::vector<double> t{0.5, 0.25};
    const Points x = interpolate(PairBatch{x0, x1}, t);
    EXPECT_EQ(x(0, 0), 1.0);
    EXPECT_EQ(x(1, 0), 3.0);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
    Rng rng(2);
    const auto g = toy();
    const auto net = tiny_net(3);
    const PairBatch b{g.source_sampler()(12, rng), g.target_sampler()(12, rng)};
    const auto tr = TripletBatch::sample(TimeGrid::edm(8), 12, rng);
    std::vector<double> that(12);
    for (auto& v : that) v = sample_that(ThatMode::unconditional, rng);
    // stop-gradient targets, fixed for the check
    const Points targets = b.x0 + 0.3 * standard_normal(12, 2, rng);

    auto total = [&](const std::vector<double>& w) {
        NetworkView<double> v(net.dims, net.emb, w);
        return gctm_loss(v, b, tr, targets).loss + 0.1 * fm_loss(v, b, that).loss;
    };
    const auto gc = gctm_loss(net.view(), b, tr, targets);
    const auto fm = fm_loss(net.view(), b, that);

    for (int dir = 0; dir < 5; ++dir) {
        const Points v = standard_normal(static_cast<Eigen::Index>(net.w.size()), 1, rng);
        double analytic = 0.0;
        for (std::size_t i = 0; i < net.w.size(); ++i)
            analytic += (gc.grad[i] + 0.1 * fm.grad[i]) * v(static_cast<Eigen::Index>(i), 0);
        const double h = 1e-5;
        std::vector<double> wp = net.w, wm = net.w;
        for (std::size_t i = 0; i < net.w.size(); ++i) {
            wp[i] += h * v(static_cast<Eigen::Index>(i), 0);
            wm[i] -= h * v(static_cast<Eigen::Index>(i), 0);
        }
        const double numeric = (total(wp) - total(wm)) / (2 * h);
        EXPECT_LT(std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)), 1e-3);
    }
}

TEST(GctmLoss, OracleStubIsWithinHeunTruncation) {
    const auto g = toy();
    const OracleRegressor oracle(g);
    Rng rng(4);
    const Eigen::Index m = 512;
    const PairBatch b{g.source_sampler()(m, rng), g.target_sampler()(m, rng)};
    const auto tr = TripletBatch::sample(TimeGrid::edm(8), m, rng);
    const Points targets = gctm_targets(oracle, oracle, b, tr);
    const double loss = gctm_loss_value(oracle, b, tr, targets);

    // one Heun step t -> u against the exact flow map, per row
    const Points xt = interpolate(b, tr.t);
    const Points heun = heun_step_rows(oracle, xt, tr.t, tr.u);
    double trunc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const Points exact = gaussian_flow_map(xt.row(i), tr.t[i], tr.u[i], g);
        trunc += (heun.row(i) - exact.row(0)).norm();
    }
    trunc /= static_cast<double>(m);
    EXPECT_GT(loss, 0.0);
    EXPECT_GT(trunc, 0.0);
    EXPECT_LE(loss, 10.0 * trunc);
}

TEST(GctmLoss, SingleStepGridTargetIsTheEulerHop) {
    const auto g = toy();
    const OracleRegressor oracle(g);
    Rng rng(5);
    const PairBatch b{g.source_sampler()(6, rng), g.target_sampler()(6, rng)};
    const auto tr = TripletBatch::sample(TimeGrid::edm(1), 6, rng);
    const Points targets = gctm_targets(oracle, oracle, b, tr);
    // x_{1->0} = g(x1, 1, 1), the prior mean under independent coupling
    for (Eigen::Index i = 0; i < 6; ++i) EXPECT_LT((targets.row(i) - g.mu0.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GctmLoss, NonNegativeAndFaultsOnNonFiniteTargets) {
    Rng rng(6);
    const auto g = toy();
    const auto net = tiny_net(7);
    for (int k = 0; k < 20; ++k) {
        const PairBatch b{g.source_sampler()(8, rng), g.target_sampler()(8, rng)};
        const auto tr = TripletBatch::sample(TimeGrid::edm(4), 8, rng);
        EXPECT_GE(gctm_loss(net.view(), b, tr, standard_normal(8, 2, rng)).loss, 0.0);
    }
    const PairBatch b{g.source_sampler()(4, rng), g.target_sampler()(4, rng)};
    const auto tr = TripletBatch::sample(TimeGrid::edm(4), 4, rng);
    EXPECT_THROW(gctm_targets(NanRegressor{}, NanRegressor{}, b, tr), Fault);
}

TEST(TrainStep, DeterministicUnderSeed) {
    const auto cfg = small_config(30);
    const auto a = train_loop(cfg, toy_task()), b = train_loop(cfg, toy_task());
    EXPECT_TRUE(same_reports(a.log, b.log));
    EXPECT_EQ(a.params.weights, b.params.weights);
    EXPECT_EQ(a.params.ema_weights, b.params.ema_weights);
    auto other = cfg;
    other.seed = 6;
    EXPECT_FALSE(same_reports(a.log, train_loop(other, toy_task()).log));
}

TEST(TrainStep, TotalCombinesLosses) {
    auto cfg = small_config(5);
    for (const auto& r : train_loop(cfg, toy_task()).log) {
        EXPECT_EQ(cfg.lambda_fm, 0.1);
        EXPECT_NEAR(r.total, r.gctm_loss + 0.1 * r.fm_loss, 1e-15);
    }
    cfg.lambda_fm = 0.0;
    for (const auto& r : train_loop(cfg, toy_task()).log) EXPECT_EQ(r.total, r.gctm_loss);
}

TEST(TrainStep, OtCouplingRuns) {
    auto cfg = small_config(5);
    cfg.coupling = Coupling::optimal_transport();
    const auto res = train_loop(cfg, {eight_gaussians(), standard_normal_sampler(2), 2});
    EXPECT_EQ(res.log.size(), 5u);
    cfg.batch_size = 1;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(TrainLoop, ZeroIterationsReturnsInitialization) {
    const auto cfg = small_config(0);
    const auto res = train_loop(cfg, toy_task());
    const auto init = init_train_state(cfg, 2);
    EXPECT_TRUE(res.log.empty());
    EXPECT_EQ(res.params.weights, init.params.weights);
    EXPECT_EQ(res.params.ema_weights, init.params.ema_weights);
}

TEST(TrainLoop, GridDoublesAcrossStages) {
    const auto res = train_loop(small_config(40), toy_task());
    std::vector<int> seen;
    for (const auto& r : res.log)
        if (seen.empty() || seen.back() != r.grid_n) seen.push_back(r.grid_n);
    EXPECT_EQ(seen, (std::vector<int>{4, 8, 16, 32}));
}

TEST(TrainLoop, CsvLogIsByteDeterministic) {
    auto cfg = small_config(25);
    cfg.eval_every = 10;
    auto run = [&] {
        std::ostringstream os;
        TrainLoopHooks h;
        h.csv = &os;
        h.evaluate = [](const ParamStore& p) { return MetricValue{"weight_sum", std::abs(p.weights[0])}; };
        const auto res = train_loop(cfg, toy_task(), h);
        EXPECT_EQ(res.metrics.size(), 3u);  // 10, 20 and the final iteration
        return os.str();
    };
    const std::string a = run();
    EXPECT_EQ(a, run());
    EXPECT_EQ(a.substr(0, a.find('\n')), "iter,gctm_loss,fm_loss,total,N,metric_name,metric_value");
    EXPECT_NE(a.find(",weight_sum,"), std::string::npos);
}

TEST(TrainLoop, CheckpointFailureAbortsWithLogPreserved) {
    auto cfg = small_config(20);
    cfg.checkpoint_every = 10;
    std::ostringstream os;
    TrainLoopHooks h;
    h.csv = &os;
    h.checkpoint_path = "/nonexistent-dir/ckpt.bin";
    EXPECT_THROW(train_loop(cfg, toy_task(), h), Fault);
    // header plus the rows up to the failing checkpoint
    const std::string log = os.str();
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
}

TEST(TrainLoop, CheckpointRoundTripsFinalParams) {
    auto cfg = small_config(10);
    const auto path = (std::filesystem::temp_directory_path() / "gctm_trainer_test.ckpt").string();
    TrainLoopHooks h;
    h.checkpoint_path = path;
    h.checkpoint_meta = {{"seed", "5"}};
    const auto res = train_loop(cfg, toy_task(), h);
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.params.weights, res.params.weights);
    EXPECT_EQ(ck.params.ema_weights, res.params.ema_weights);
    EXPECT_EQ(ck.meta.at("seed"), "5");
    std::filesystem::remove(path);
}

// First 10k iterations of the pinned Gaussian-toy run. The FM objective has a
// nonzero minimum E||E[x0|x_t] - x0||^2, computed here from the oracle; once
// the loss reaches it only minibatch noise is left, so 1k-block averages are
// required to fall while clearly above the floor and to stay near it after.
TEST(FmLoss, DescendsToTheIrreducibleFloorOnTheGaussianToy) {
    const RunConfig c = load_config(std::string(GCTM_TEST_DATA_DIR) + "/../../configs/gaussian_toy.conf");
    const TrainConfig tc = c.train_config();
    const TrainingTask task = c.task();

    // floor = E_t sum_k Var(x0_k | x_t), Var = v0 t^2 v1 / ((1-t)^2 v0 + t^2 v1),
    // averaged over t-hat by its quantiles
    const GaussianSpec g = c.gaussian_spec();
    const double perturb = tc.coupling.training_perturbation();
    const int nq = 20000;
    double floor = 0.0;
    for (int q = 0; q < nq; ++q) {
        const double t = that_quantile(tc.that_mode, (q + 0.5) / nq);
        for (Eigen::Index k = 0; k < g.dim(); ++k) {
            const double v0 = g.var0[k], v1 = g.var1[k] + perturb * perturb;
            floor += v0 * t * t * v1 / ((1 - t) * (1 - t) * v0 + t * t * v1) / nq;
        }
    }
    EXPECT_NEAR(floor, 0.2329279, 1e-5);

    TrainState st = init_train_state(tc, task.dim);
    std::vector<double> block(10, 0.0);
    for (int it = 0; it < 10000; ++it) block[it / 1000] += train_step(st, tc, task).fm_loss / 1000.0;

    const double near = 0.015;
    bool reached = false;
    for (int k = 0; k < 10; ++k) {
        SCOPED_TRACE("block " + std::to_string(k) + " = " + std::to_string(block[k]) + ", floor " + std::to_string(floor));
        EXPECT_GT(block[k], floor - 0.006);  // ~5 sd of a 1k-block mean
        if (!reached && k > 0) EXPECT_LT(block[k], block[k - 1]);
        reached = reached || block[k] < floor + near;
        if (reached) EXPECT_LT(block[k], floor + near);
    }
    EXPECT_TRUE(reached);
}
