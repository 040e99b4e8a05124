// gctm command-line driver. Exit codes: 0 ok, 1 usage or config error,
// 2 a check failed, 3 runtime fault.

#include "gctm/gctm.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#ifndef GCTM_VERSION
#define GCTM_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace gctm;

namespace {

constexpr int kUsage = 1;
constexpr int kCheckFailed = 2;
constexpr int kFault = 3;

struct Common {
    std::string out = "out";
    std::vector<std::string> overrides;
};

std::string command_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

std::string prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Fault("cannot create output directory " + dir + ": " + ec.message());
    return dir;
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

RunConfig with_overrides(RunConfig c, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) apply_override(c, o);
    c.validate();
    return c;
}

struct Loaded {
    Checkpoint ck;
    RunConfig cfg;
};

Loaded load_model(const std::string& path, const std::vector<std::string>& overrides) {
    Loaded l{load_checkpoint(path), {}};
    l.cfg = with_overrides(config_from_meta(l.ck.meta), overrides);
    return l;
}

// grey reference layer under the blue result layer
void plot_over(const Points& back, const Points& front, const std::string& path) {
    emit_plot(std::vector<PlotLayer>{PlotLayer{back, {200, 200, 200}}, PlotLayer{front}}, path);
}

void print_metric(const std::string& name, double value) { std::cout << name << '=' << detail::format_double(value) << '\n'; }

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed, const Common& common,
              const std::string& cmdline) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.train.seed = *seed;
    cfg = with_overrides(cfg, common.overrides);
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), cfg, cmdline, GCTM_VERSION);

    std::ofstream csv(join_path(out, "metrics.csv"));
    if (!csv) throw Fault("cannot write metrics.csv in " + out);
    TrainLoopHooks hooks;
    hooks.csv = &csv;
    hooks.checkpoint_path = join_path(out, "model.ckpt");
    hooks.checkpoint_meta = config_meta(cfg);
    hooks.checkpoint_meta["version"] = GCTM_VERSION;
    hooks.evaluate = [&](const ParamStore& p) { return evaluate_metric(p, cfg); };
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train_loop(cfg.train_config(), cfg.task(), hooks);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (cfg.data.dim == 2) {
        const Points samples = eval_samples(res.params, cfg);
        save_points(join_path(out, "samples.txt"), samples);
        plot_over(eval_reference(cfg), samples, join_path(out, "samples.ppm"));
    }
    if (!res.metrics.empty()) print_metric(res.metrics.back().second.name, res.metrics.back().second.value);
    std::cout << "iterations=" << res.log.size() << " seconds=" << secs << '\n';
    return 0;
}

int cmd_sample(const std::string& ckpt, int nfe, int n, std::optional<std::uint64_t> seed, const Common& common,
               const std::string& cmdline) {
    Loaded m = load_model(ckpt, common.overrides);
    if (n > 0) m.cfg.eval_samples = n;
    if (seed) m.cfg.eval_seed = *seed;
    require(nfe >= 1, "sample: --nfe must be >= 1");
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), m.cfg, cmdline, GCTM_VERSION);
    const Points samples = eval_samples(m.ck.params, m.cfg, nfe);
    save_points(join_path(out, "samples.txt"), samples);
    if (samples.cols() == 2) plot_over(eval_reference(m.cfg), samples, join_path(out, "samples.ppm"));
    const Points ref = eval_reference(m.cfg);
    print_metric("energy_distance", energy_distance(samples, ref));
    print_metric("sliced_wasserstein", sliced_wasserstein(samples, ref, m.cfg.sw_projections, m.cfg.eval_seed));
    return 0;
}

int cmd_restore(const std::string& ckpt, const std::string& method, const std::string& measurement_path, int n,
                std::optional<double> lambda, bool raw, std::uint64_t seed, const Common& common,
                const std::string& cmdline) {
    Loaded m = load_model(ckpt, common.overrides);
    if (!method.empty()) set_config_value(m.cfg, "guidance_method", method);
    if (lambda) m.cfg.guidance_lambda = *lambda;
    if (raw) m.cfg.guidance_adaptive = false;
    m.cfg.validate();
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), m.cfg, cmdline, GCTM_VERSION);

    GuidanceConfig g;
    g.method = m.cfg.guidance_method;
    g.lambda = m.cfg.guidance_lambda;
    g.adaptive = m.cfg.guidance_adaptive;
    g.op = m.cfg.corruption();
    g.grid = TimeGrid::edm(m.cfg.train.n_start << std::max(0, m.cfg.train.n_stages - 1), m.cfg.train.edm);
    g.seed = seed;

    Points measurement;
    if (!measurement_path.empty()) {
        measurement = load_points(measurement_path);
    } else {
        Rng rng(mix_seed(seed, 0x3EA5));
        measurement = sample_supervised(m.cfg.data.sampler()(n, rng), g.op, rng).x1;
    }
    const auto net = ema_regressor(m.ck.params);
    const RestoreResult r = restore(net, measurement, g);
    save_points(join_path(out, "measurements.txt"), measurement);
    save_points(join_path(out, "restored.txt"), r.x0);
    if (r.x0.cols() == 2) plot_over(measurement, r.x0, join_path(out, "restored.ppm"));
    print_metric("measurement_residual", measurement_residual(measurement, g.op, r.x0));
    std::cout << "skipped_steps=" << r.skipped_steps << '\n';
    return 0;
}

int cmd_edit(const std::string& ckpt, std::optional<double> t_edit, int n, std::uint64_t seed, const Common& common,
             const std::string& cmdline) {
    Loaded m = load_model(ckpt, common.overrides);
    if (t_edit) m.cfg.edit_time = *t_edit;
    m.cfg.validate();
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), m.cfg, cmdline, GCTM_VERSION);
    const TrainConfig tc = m.cfg.train_config();
    const TrainingTask task = m.cfg.task();
    Rng rng(seed);
    const PairBatch pairs = sample_coupling(tc.coupling, task.x0_sampler, task.x1_sampler, n, rng);
    const double t = m.cfg.edit_time.value_or(default_edit_time(tc.coupling.kind));
    const double shift = m.cfg.edit_shift;
    const Points edited =
        edit(ema_regressor(m.ck.params), pairs.x0, pairs.x1, t, [shift](const Points& x) { return Points(x.array() + shift); });
    save_points(join_path(out, "source.txt"), pairs.x0);
    save_points(join_path(out, "edited.txt"), edited);
    if (edited.cols() == 2) plot_over(pairs.x0, edited, join_path(out, "edited.ppm"));
    print_metric("edit_time", t);
    print_metric("mse_to_source", mse_to_pairs(edited, pairs.x0));
    return 0;
}

int cmd_manip(const std::string& ckpt, double gamma, int n, std::uint64_t seed, const Common& common,
              const std::string& cmdline) {
    Loaded m = load_model(ckpt, common.overrides);
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), m.cfg, cmdline, GCTM_VERSION);
    const TrainConfig tc = m.cfg.train_config();
    const TrainingTask task = m.cfg.task();
    Rng rng(seed);
    // one x1, n latent perturbations
    const PairBatch one = sample_coupling(tc.coupling, task.x0_sampler, task.x1_sampler, 1, rng);
    const Points x1 = one.x1.replicate(n, 1);
    const Points eps = standard_normal(n, x1.cols(), rng);
    const Points outp = latent_manip(ema_regressor(m.ck.params), x1, eps, gamma);
    save_points(join_path(out, "manip.txt"), outp);
    if (outp.cols() == 2) plot_over(x1, outp, join_path(out, "manip.ppm"));
    const Eigen::RowVectorXd mean = outp.colwise().mean();
    print_metric("spread", std::sqrt((outp.rowwise() - mean).rowwise().squaredNorm().mean()));
    return 0;
}

int cmd_verify() {
    bool ok = true;
    for (const auto& r : run_fast_checks()) {
        std::cout << format_check(r) << '\n';
        ok = ok && r.passed;
    }
    std::cout << (ok ? "all checks passed" : "some checks FAILED") << '\n';
    return ok ? 0 : kCheckFailed;
}

int cmd_bench_ot(const std::string& config_path, std::int64_t iters, const Common& common, const std::string& cmdline) {
    RunConfig base = with_overrides(config_path.empty() ? RunConfig{} : load_config(config_path), common.overrides);
    if (iters > 0) base.train.total_iters = iters;
    // fixed grid N = n_start for the whole run
    base.train.n_stages = 1;
    const std::string out = prepare_out(common.out);
    write_manifest(join_path(out, "manifest.txt"), base, cmdline, GCTM_VERSION);
    std::ofstream csv(join_path(out, "bench_ot.csv"));
    if (!csv) throw Fault("cannot write bench_ot.csv in " + out);
    csv << "iter,coupling,metric_name,metric_value\n";
    std::map<std::string, double> last;
    for (const auto kind : {Coupling::Kind::independent, Coupling::Kind::ot}) {
        RunConfig c = base;
        c.train.coupling.kind = kind;
        c.validate();
        TrainLoopHooks hooks;
        hooks.evaluate = [&](const ParamStore& p) { return evaluate_metric(p, c); };
        const TrainResult res = train_loop(c.train_config(), c.task(), hooks);
        for (const auto& [it, mv] : res.metrics)
            csv << it << ',' << to_string(kind) << ',' << mv.name << ',' << detail::format_double(mv.value) << '\n';
        last[to_string(kind)] = res.metrics.back().second.value;
        std::cout << to_string(kind) << ' ' << res.metrics.back().second.name << '='
                  << detail::format_double(res.metrics.back().second.value) << '\n';
    }
    const bool ot_better = last["ot"] < last["independent"];
    std::cout << "ot_better=" << (ot_better ? "true" : "false") << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized consistency trajectory models at desk scale"};
    app.require_subcommand(1);
    app.set_version_flag("--version", GCTM_VERSION);
    const std::string cmdline = command_line(argc, argv);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", common.out, "output directory")->capture_default_str();
        sub->add_option("--set", common.overrides, "config override key=value (repeatable)");
    };

    std::string config_path, ckpt, method, measurement_path;
    std::optional<std::uint64_t> seed_opt;
    std::uint64_t seed = 0;
    int nfe = 1, n = 0;
    std::int64_t iters = 0;
    std::optional<double> lambda, t_edit;
    double gamma = 0.05;
    bool raw = false;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--seed", seed_opt, "override the training seed");
    add_common(train);

    auto* sample = app.add_subcommand("sample", "draw samples from a checkpoint");
    sample->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    sample->add_option("--nfe", nfe, "network evaluations (1 = one-step)")->capture_default_str();
    sample->add_option("--n", n, "number of samples (default: eval_samples)");
    sample->add_option("--seed", seed_opt, "seed of the x1 draws (default: eval_seed)");
    add_common(sample);

    auto* rest = app.add_subcommand("restore", "zero-shot guided restoration");
    rest->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    rest->add_option("--method", method, "dps | cm | gctm")->check(CLI::IsMember({"dps", "cm", "gctm"}));
    rest->add_option("--measurements", measurement_path, "measurement rows; synthesized from the data when absent");
    rest->add_option("--n", n, "synthesized measurements (default: 500)");
    rest->add_option("--lambda", lambda, "guidance step size");
    rest->add_flag("--raw", raw, "use lambda as is instead of dividing by the residual norm");
    rest->add_option("--seed", seed, "sampling seed")->capture_default_str();
    add_common(rest);

    auto* ed = app.add_subcommand("edit", "edit source points through G(x_t, t, 0)");
    ed->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    ed->add_option("--t", t_edit, "editing time in (0,1]");
    ed->add_option("--n", n, "number of pairs (default: 500)");
    ed->add_option("--seed", seed, "pair seed")->capture_default_str();
    add_common(ed);

    auto* manip = app.add_subcommand("manip", "latent manipulation G(x1 + gamma eps, 1, 0)");
    manip->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    manip->add_option("--gamma", gamma, "perturbation scale")->capture_default_str();
    manip->add_option("--n", n, "number of perturbations (default: 500)");
    manip->add_option("--seed", seed, "seed")->capture_default_str();
    add_common(manip);

    app.add_subcommand("verify", "run the fast oracle and property checks");

    auto* bench = app.add_subcommand("bench-ot", "independent vs OT coupling at a fixed grid N");
    bench->add_option("--config", config_path, "key=value config file");
    bench->add_option("--iters", iters, "iterations per coupling (default: total_iters)");
    add_common(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsage;
    }

    try {
        const int count = n > 0 ? n : 500;
        if (*train) return cmd_train(config_path, seed_opt, common, cmdline);
        if (*sample) return cmd_sample(ckpt, nfe, n, seed_opt, common, cmdline);
        if (*rest) return cmd_restore(ckpt, method, measurement_path, count, lambda, raw, seed, common, cmdline);
        if (*ed) return cmd_edit(ckpt, t_edit, count, seed, common, cmdline);
        if (*manip) return cmd_manip(ckpt, gamma, count, seed, common, cmdline);
        if (app.got_subcommand("verify")) return cmd_verify();
        if (*bench) return cmd_bench_ot(config_path, iters, common, cmdline);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n' << app.help() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "fault: " << e.what() << '\n';
        return kFault;
    }
    return kUsage;
}
