#pragma once

#include "gctm/checkpoint.hpp"
#include "gctm/datasets.hpp"
#include "gctm/inference.hpp"
#include "gctm/trainer.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gctm {

/// Everything a CLI run needs: data, coupling, training, evaluation and
/// guidance settings. Read from and written back to plain key=value text.
struct RunConfig {
    Dataset data;
    std::string target = "standard_normal";  // standard_normal | gaussian (x1 ~ N(mu1, var1))
    Eigen::VectorXd target_mu, target_var;
    std::string op_kind = "identity";  // identity | mask | linear, for supervised coupling and restoration
    std::vector<int> mask_indices;
    Points op_matrix;
    double op_noise = 0.0;

    TrainConfig train;

    int eval_samples = 2000;
    std::uint64_t eval_seed = 99;
    std::string eval_metric = "energy_distance";  // energy_distance | sliced_wasserstein | posterior_rms
    int sw_projections = 128;

    GuidanceMethod guidance_method = GuidanceMethod::gctm;
    double guidance_lambda = 1.0;
    bool guidance_adaptive = true;

    std::optional<double> edit_time;
    double edit_shift = 0.5;

    CorruptionOperator corruption() const {
        if (op_kind == "identity") return CorruptionOperator::identity();
        if (op_kind == "mask") return CorruptionOperator::mask(mask_indices);
        if (op_kind == "linear") return CorruptionOperator::linear(op_matrix, op_noise);
        throw std::invalid_argument("config: unknown operator " + op_kind);
    }

    /// The training config with the coupling's operator resolved.
    TrainConfig train_config() const {
        TrainConfig t = train;
        if (t.coupling.kind == Coupling::Kind::supervised) t.coupling.op = corruption();
        return t;
    }

    GaussianSpec gaussian_spec() const {
        GaussianSpec g = data.gaussian;
        if (target == "gaussian") {
            g.mu1 = target_mu;
            g.var1 = target_var;
        } else {
            g.mu1 = Eigen::VectorXd::Zero(data.dim);
            g.var1 = Eigen::VectorXd::Ones(data.dim);
        }
        return g;
    }

    TrainingTask task() const {
        TrainingTask t;
        t.dim = data.dim;
        t.x0_sampler = data.sampler();
        if (train.coupling.kind == Coupling::Kind::supervised) {
            // x1 is a function of x0; the sampler below is unused by sample_coupling
            t.x1_sampler = standard_normal_sampler(data.dim);
        } else if (target == "gaussian") {
            t.x1_sampler = GaussianSpec::diag_sampler(target_mu, target_var);
        } else {
            t.x1_sampler = standard_normal_sampler(data.dim);
        }
        return t;
    }

    void validate() const {
        require(data.dim >= 1, "config: dim must be >= 1");
        require(target == "standard_normal" || target == "gaussian", "config: target must be standard_normal or gaussian");
        if (data.kind == Dataset::Kind::gaussian) {
            require(data.gaussian.mu0.size() == data.dim && data.gaussian.var0.size() == data.dim,
                    "config: data_mu/data_var need dim entries");
        } else if (data.kind != Dataset::Kind::file) {
            require(data.dim == 2, "config: the 2D toy datasets need dim = 2");
        }
        if (target == "gaussian")
            require(target_mu.size() == data.dim && target_var.size() == data.dim,
                    "config: target_mu/target_var need dim entries");
        require(eval_samples >= 2, "config: eval_samples must be >= 2");
        require(sw_projections >= 1, "config: sw_projections must be >= 1");
        require(eval_metric == "energy_distance" || eval_metric == "sliced_wasserstein" ||
                    eval_metric == "posterior_rms",
                "config: unknown eval_metric " + eval_metric);
        require(eval_metric != "posterior_rms" || data.kind == Dataset::Kind::gaussian,
                "config: posterior_rms needs dataset = gaussian");
        require(guidance_lambda >= 0.0, "config: guidance_lambda must be >= 0");
        require(!edit_time || (*edit_time > 0.0 && *edit_time <= 1.0), "config: edit_time must lie in (0,1]");
        corruption().validate(data.dim);
        train_config().validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("config: " + key + " is not a number: " + v);
    return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("config: " + key + " is not an integer: " + v);
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: " + key + " must be true or false");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_double(key, trim(tok)));
    return out;
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::string join(const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

struct Key {
    std::string doc;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

// One entry per documented key; the README table is generated from `doc`.
inline const std::map<std::string, Key>& config_keys() {
    static const std::map<std::string, Key> keys = [] {
        std::map<std::string, Key> k;
        auto dbl = [&k](const std::string& name, std::string doc, double RunConfig::*outer) {
            k[name] = {std::move(doc), [=](RunConfig& c, const std::string& v) { c.*outer = parse_double(name, v); },
                       [=](const RunConfig& c) { return format_double(c.*outer); }};
        };
        auto tdbl = [&k](const std::string& name, std::string doc, double TrainConfig::*field) {
            k[name] = {std::move(doc), [=](RunConfig& c, const std::string& v) { c.train.*field = parse_double(name, v); },
                       [=](const RunConfig& c) { return format_double(c.train.*field); }};
        };
        auto tint = [&k](const std::string& name, std::string doc, auto TrainConfig::*field) {
            k[name] = {std::move(doc),
                       [=](RunConfig& c, const std::string& v) {
                           c.train.*field = static_cast<std::remove_reference_t<decltype(c.train.*field)>>(parse_int(name, v));
                       },
                       [=](const RunConfig& c) { return std::to_string(c.train.*field); }};
        };

        k["dataset"] = {"eight_gaussians | two_moons | checkerboard | gaussian | file",
                        [](RunConfig& c, const std::string& v) {
                            static const std::map<std::string, Dataset::Kind> m{
                                {"eight_gaussians", Dataset::Kind::eight_gaussians}, {"two_moons", Dataset::Kind::two_moons},
                                {"checkerboard", Dataset::Kind::checkerboard},       {"gaussian", Dataset::Kind::gaussian},
                                {"file", Dataset::Kind::file}};
                            auto it = m.find(v);
                            if (it == m.end()) throw std::invalid_argument("config: unknown dataset " + v);
                            c.data.kind = it->second;
                        },
                        [](const RunConfig& c) -> std::string {
                            switch (c.data.kind) {
                            case Dataset::Kind::eight_gaussians: return "eight_gaussians";
                            case Dataset::Kind::two_moons: return "two_moons";
                            case Dataset::Kind::checkerboard: return "checkerboard";
                            case Dataset::Kind::gaussian: return "gaussian";
                            case Dataset::Kind::file: return "file";
                            }
                            return "?";
                        }};
        k["dim"] = {"data dimension d", [](RunConfig& c, const std::string& v) { c.data.dim = static_cast<int>(parse_int("dim", v)); },
                    [](const RunConfig& c) { return std::to_string(c.data.dim); }};
        k["data_path"] = {"points file for dataset = file (whitespace-separated rows)",
                          [](RunConfig& c, const std::string& v) { c.data.path = v; },
                          [](const RunConfig& c) { return c.data.path; }};
        k["data_mu"] = {"mean of q(x0) for dataset = gaussian, comma list",
                        [](RunConfig& c, const std::string& v) { c.data.gaussian.mu0 = to_vector(parse_list("data_mu", v)); },
                        [](const RunConfig& c) { return join(c.data.gaussian.mu0); }};
        k["data_var"] = {"diagonal variance of q(x0) for dataset = gaussian, comma list",
                         [](RunConfig& c, const std::string& v) { c.data.gaussian.var0 = to_vector(parse_list("data_var", v)); },
                         [](const RunConfig& c) { return join(c.data.gaussian.var0); }};
        k["target"] = {"q(x1) for unpaired couplings: standard_normal | gaussian",
                       [](RunConfig& c, const std::string& v) { c.target = v; },
                       [](const RunConfig& c) { return c.target; }};
        k["target_mu"] = {"mean of q(x1) for target = gaussian",
                          [](RunConfig& c, const std::string& v) { c.target_mu = to_vector(parse_list("target_mu", v)); },
                          [](const RunConfig& c) { return join(c.target_mu); }};
        k["target_var"] = {"diagonal variance of q(x1) for target = gaussian",
                           [](RunConfig& c, const std::string& v) { c.target_var = to_vector(parse_list("target_var", v)); },
                           [](const RunConfig& c) { return join(c.target_var); }};

        k["coupling"] = {"independent | ot | supervised",
                         [](RunConfig& c, const std::string& v) {
                             if (v == "independent") c.train.coupling.kind = Coupling::Kind::independent;
                             else if (v == "ot") c.train.coupling.kind = Coupling::Kind::ot;
                             else if (v == "supervised") c.train.coupling.kind = Coupling::Kind::supervised;
                             else throw std::invalid_argument("config: unknown coupling " + v);
                         },
                         [](const RunConfig& c) { return std::string(to_string(c.train.coupling.kind)); }};
        k["ot_tau_rel"] = {"Sinkhorn tau as a fraction of the batch mean cost",
                           [](RunConfig& c, const std::string& v) { c.train.coupling.ot_tau_rel = parse_double("ot_tau_rel", v); },
                           [](const RunConfig& c) { return format_double(c.train.coupling.ot_tau_rel); }};
        k["ot_tau"] = {"absolute Sinkhorn tau; empty means use ot_tau_rel",
                       [](RunConfig& c, const std::string& v) {
                           if (v.empty()) c.train.coupling.ot_tau.reset();
                           else c.train.coupling.ot_tau = parse_double("ot_tau", v);
                       },
                       [](const RunConfig& c) { return c.train.coupling.ot_tau ? format_double(*c.train.coupling.ot_tau) : ""; }};
        k["perturb_scale"] = {"std of the Gaussian added to x1 during training (masking operators use 0)",
                              [](RunConfig& c, const std::string& v) { c.train.coupling.perturb_scale = parse_double("perturb_scale", v); },
                              [](const RunConfig& c) { return format_double(c.train.coupling.perturb_scale); }};
        k["operator"] = {"corruption H: identity | mask | linear",
                         [](RunConfig& c, const std::string& v) { c.op_kind = v; },
                         [](const RunConfig& c) { return c.op_kind; }};
        k["mask_indices"] = {"0-based coordinates zeroed by operator = mask, comma list",
                             [](RunConfig& c, const std::string& v) {
                                 c.mask_indices.clear();
                                 for (double x : parse_list("mask_indices", v)) c.mask_indices.push_back(static_cast<int>(x));
                             },
                             [](const RunConfig& c) {
                                 std::string s;
                                 for (std::size_t i = 0; i < c.mask_indices.size(); ++i) s += (i ? "," : "") + std::to_string(c.mask_indices[i]);
                                 return s;
                             }};
        k["operator_matrix"] = {"row-major entries of H for operator = linear, rows separated by ';'",
                                [](RunConfig& c, const std::string& v) {
                                    std::vector<std::vector<double>> rows;
                                    std::stringstream ss(v);
                                    std::string row;
                                    while (std::getline(ss, row, ';')) rows.push_back(parse_list("operator_matrix", row));
                                    if (rows.empty()) {
                                        c.op_matrix = Points();
                                        return;
                                    }
                                    c.op_matrix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
                                    for (std::size_t r = 0; r < rows.size(); ++r) {
                                        require(rows[r].size() == rows[0].size(), "config: ragged operator_matrix");
                                        for (std::size_t q = 0; q < rows[r].size(); ++q) c.op_matrix(r, q) = rows[r][q];
                                    }
                                },
                                [](const RunConfig& c) {
                                    std::string s;
                                    for (Eigen::Index r = 0; r < c.op_matrix.rows(); ++r) {
                                        if (r) s += ';';
                                        for (Eigen::Index q = 0; q < c.op_matrix.cols(); ++q) s += (q ? "," : "") + format_double(c.op_matrix(r, q));
                                    }
                                    return s;
                                }};
        dbl("operator_noise", "std of additive measurement noise for operator = linear", &RunConfig::op_noise);

        tint("total_iters", "training iterations", &TrainConfig::total_iters);
        tint("batch_size", "batch size B (learning rate defaults to 0.0002 B / 128)", &TrainConfig::batch_size);
        tdbl("lambda_fm", "weight of the FM regression loss", &TrainConfig::lambda_fm);
        tint("n_start", "initial grid size N", &TrainConfig::n_start);
        tint("n_stages", "number of equal phases; N doubles at each phase boundary", &TrainConfig::n_stages);
        k["sigma_min"] = {"EDM sigma_min", [](RunConfig& c, const std::string& v) { c.train.edm.sigma_min = parse_double("sigma_min", v); },
                          [](const RunConfig& c) { return format_double(c.train.edm.sigma_min); }};
        k["sigma_max"] = {"EDM sigma_max", [](RunConfig& c, const std::string& v) { c.train.edm.sigma_max = parse_double("sigma_max", v); },
                          [](const RunConfig& c) { return format_double(c.train.edm.sigma_max); }};
        k["rho"] = {"EDM rho", [](RunConfig& c, const std::string& v) { c.train.edm.rho = parse_double("rho", v); },
                    [](const RunConfig& c) { return format_double(c.train.edm.rho); }};
        k["that_mode"] = {"FM time distribution: unconditional (logit-normal) | i2i (beta(3,1))",
                          [](RunConfig& c, const std::string& v) {
                              if (v == "unconditional") c.train.that_mode = ThatMode::unconditional;
                              else if (v == "i2i") c.train.that_mode = ThatMode::i2i;
                              else throw std::invalid_argument("config: unknown that_mode " + v);
                          },
                          [](const RunConfig& c) {
                              return std::string(c.train.that_mode == ThatMode::unconditional ? "unconditional" : "i2i");
                          }};
        k["seed"] = {"training seed", [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(parse_int("seed", v)); },
                     [](const RunConfig& c) { return std::to_string(c.train.seed); }};
        tint("eval_every", "evaluate the metric every k iterations (0: only at the end)", &TrainConfig::eval_every);
        tint("checkpoint_every", "write the checkpoint every k iterations (0: only at the end)", &TrainConfig::checkpoint_every);
        tint("log_every", "CSV loss row every k iterations", &TrainConfig::log_every);
        tint("hidden", "MLP width", &TrainConfig::hidden);
        tint("depth", "MLP hidden layers", &TrainConfig::depth);
        k["time_frequencies"] = {"sinusoidal frequencies per time input",
                                 [](RunConfig& c, const std::string& v) {
                                     c.train.embedding.num_frequencies = static_cast<int>(parse_int("time_frequencies", v));
                                 },
                                 [](const RunConfig& c) { return std::to_string(c.train.embedding.num_frequencies); }};
        k["time_scale"] = {"base angular frequency of the time embedding",
                           [](RunConfig& c, const std::string& v) { c.train.embedding.scale = parse_double("time_scale", v); },
                           [](const RunConfig& c) { return format_double(c.train.embedding.scale); }};
        tdbl("ema_decay", "EMA decay of the bootstrapping network", &TrainConfig::ema_decay);
        k["learning_rate"] = {"Adam learning rate; empty means 0.0002 B / 128",
                              [](RunConfig& c, const std::string& v) {
                                  if (v.empty()) c.train.learning_rate.reset();
                                  else c.train.learning_rate = parse_double("learning_rate", v);
                              },
                              [](const RunConfig& c) { return c.train.learning_rate ? format_double(*c.train.learning_rate) : ""; }};

        k["eval_samples"] = {"samples per evaluation", [](RunConfig& c, const std::string& v) { c.eval_samples = static_cast<int>(parse_int("eval_samples", v)); },
                             [](const RunConfig& c) { return std::to_string(c.eval_samples); }};
        k["eval_seed"] = {"seed of the evaluation draws", [](RunConfig& c, const std::string& v) { c.eval_seed = static_cast<std::uint64_t>(parse_int("eval_seed", v)); },
                          [](const RunConfig& c) { return std::to_string(c.eval_seed); }};
        k["eval_metric"] = {"energy_distance | sliced_wasserstein (1-NFE samples vs data) | posterior_rms (gaussian data only)",
                            [](RunConfig& c, const std::string& v) { c.eval_metric = v; },
                            [](const RunConfig& c) { return c.eval_metric; }};
        k["sw_projections"] = {"projections for sliced_wasserstein",
                               [](RunConfig& c, const std::string& v) { c.sw_projections = static_cast<int>(parse_int("sw_projections", v)); },
                               [](const RunConfig& c) { return std::to_string(c.sw_projections); }};

        k["guidance_method"] = {"restoration variant: dps | cm | gctm",
                                [](RunConfig& c, const std::string& v) {
                                    if (v == "dps") c.guidance_method = GuidanceMethod::dps;
                                    else if (v == "cm") c.guidance_method = GuidanceMethod::cm;
                                    else if (v == "gctm") c.guidance_method = GuidanceMethod::gctm;
                                    else throw std::invalid_argument("config: unknown guidance_method " + v);
                                },
                                [](const RunConfig& c) { return std::string(to_string(c.guidance_method)); }};
        dbl("guidance_lambda", "guidance step size (lambda_0 when adaptive)", &RunConfig::guidance_lambda);
        k["guidance_adaptive"] = {"divide the step by the residual norm",
                                  [](RunConfig& c, const std::string& v) { c.guidance_adaptive = parse_bool("guidance_adaptive", v); },
                                  [](const RunConfig& c) { return std::string(c.guidance_adaptive ? "true" : "false"); }};
        k["edit_time"] = {"editing time; empty means 0.95 for supervised, 0.4 otherwise",
                          [](RunConfig& c, const std::string& v) {
                              if (v.empty()) c.edit_time.reset();
                              else c.edit_time = parse_double("edit_time", v);
                          },
                          [](const RunConfig& c) { return c.edit_time ? format_double(*c.edit_time) : ""; }};
        dbl("edit_shift", "translation applied to x0 by the edit command", &RunConfig::edit_shift);
        return k;
    }();
    return keys;
}

}  // namespace detail

/// Sets one key. Unknown keys and malformed values throw std::invalid_argument.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    const auto& keys = detail::config_keys();
    auto it = keys.find(key);
    if (it == keys.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second.set(c, value);
}

/// "key=value" override, as given on the command line.
inline void apply_override(RunConfig& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: expected key=value, got '" + assignment + "'");
    set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Lines are key=value; blank lines and lines starting with '#' are ignored.
inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            apply_override(base, t);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot open " + path);
    return parse_config(is);
}

/// Canonical echo: every key in sorted order. parse_config(config_text(c)) == c.
inline std::string config_text(const RunConfig& c) {
    std::string out;
    for (const auto& [k, key] : detail::config_keys()) out += k + "=" + key.get(c) + "\n";
    return out;
}

/// Config keys stored in checkpoint metadata under a "cfg." prefix.
inline std::map<std::string, std::string> config_meta(const RunConfig& c) {
    std::map<std::string, std::string> m;
    for (const auto& [k, key] : detail::config_keys()) m["cfg." + k] = key.get(c);
    return m;
}

inline RunConfig config_from_meta(const std::map<std::string, std::string>& meta) {
    RunConfig c;
    for (const auto& [k, v] : meta)
        if (k.rfind("cfg.", 0) == 0) set_config_value(c, k.substr(4), v);
    return c;
}

inline std::vector<std::pair<std::string, std::string>> config_documentation() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, key] : detail::config_keys()) out.emplace_back(k, key.doc);
    return out;
}

/// Manifest: provenance comments, then the full config echo. Since comments
/// are ignored by the parser, a manifest is itself a loadable config.
inline void write_manifest(const std::string& path, const RunConfig& c, const std::string& command,
                           const std::string& version) {
    std::ofstream os(path);
    if (!os) throw Fault("manifest: cannot open " + path);
    os << "# gctm manifest\n";
    os << "# version=" << version << '\n';
    os << "# command=" << command << '\n';
    os << "# seed=" << c.train.seed << '\n';
    os << config_text(c);
    if (!os) throw Fault("manifest: write failed for " + path);
}

}  // namespace gctm
