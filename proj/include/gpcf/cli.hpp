#pragma once

// Command-line front end: train, simulate, platoon, evaluate, export-interpretability
// and synth. Every command writes manifest.json next to its outputs.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gpcf/csv.hpp"
#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/gp.hpp"
#include "gpcf/meanmodel.hpp"
#include "gpcf/metrics.hpp"
#include "gpcf/parallel.hpp"
#include "gpcf/sim.hpp"
#include "gpcf/synthetic.hpp"
#include "gpcf/train.hpp"

namespace gpcf::cli {

inline constexpr const char* kVersion = "gpcf 0.1.0";

struct SplitArgs {
    std::string data;
    double dt = 0.2;
    double min_duration = 30.0;
    double test_min_duration = 50.0;
    int n_test = 30;
    double train_frac = 0.7;
    std::uint64_t split_seed = 0;

    void add_to(CLI::App* app) {
        app->add_option("--data", data, "trajectory CSV")->required();
        app->add_option("--dt", dt, "sampling interval after decimation, s");
        app->add_option("--min-duration", min_duration, "drop pairs not longer than this, s");
        app->add_option("--test-min-duration", test_min_duration, "test pairs are longer than this, s");
        app->add_option("--n-test", n_test, "number of test pairs");
        app->add_option("--train-frac", train_frac, "train share of the non-test pairs");
        app->add_option("--split-seed", split_seed, "seed of the pair split");
    }

    nlohmann::json to_json() const {
        return {{"data", data},           {"dt", dt},         {"min_duration", min_duration},
                {"test_min_duration", test_min_duration}, {"n_test", n_test}, {"train_frac", train_frac},
                {"split_seed", split_seed}};
    }

    DatasetSplit load() const {
        auto trajs = load_trajectories(data);
        for (auto& t : trajs) t = resample(t, dt);
        if (n_test < 0) throw ArgumentError("--n-test must be nonnegative");
        return filter_and_split(trajs, min_duration, test_min_duration, static_cast<std::size_t>(n_test), train_frac,
                                split_seed);
    }
};

/// Collects what a command read and wrote; written last as manifest.json.
class Manifest {
public:
    Manifest(std::string command, std::filesystem::path out_dir)
        : out_dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()) {
        j_["command"] = std::move(command);
        j_["version"] = kVersion;
        j_["inputs"] = nlohmann::json::array();
        j_["outputs"] = nlohmann::json::array();
        j_["threads"] = thread_count();
    }

    nlohmann::json& operator[](const std::string& key) { return j_[key]; }
    void input(const std::string& path) { j_["inputs"].push_back(path); }

    /// Path of a new output file inside the output directory, recorded in the manifest.
    std::string output(const std::string& name) {
        j_["outputs"].push_back(name);
        return (out_dir_ / name).string();
    }

    void write() {
        j_["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        auto out = csv::open_output((out_dir_ / "manifest.json").string());
        out << j_.dump(2) << '\n';
    }

private:
    nlohmann::json j_;
    std::filesystem::path out_dir_;
    std::chrono::steady_clock::time_point start_;
};

inline std::filesystem::path prepare_out_dir(const std::string& flag) {
    std::string dir = flag;
    if (dir.empty()) {
        const char* env = std::getenv("GPCF_OUT_DIR");
        dir = env && *env ? env : "out";
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ArgumentError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

inline Checkpoint load_model(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ArgumentError("checkpoint '" + path + "' does not exist");
    return load_checkpoint(path);
}

inline nlohmann::json split_json(const DatasetSplit& s) {
    auto ids = [](const std::vector<Trajectory>& v) {
        std::vector<std::string> out;
        for (const auto& t : v) out.push_back(t.pair_id);
        return out;
    };
    return {{"train", ids(s.train)}, {"val", ids(s.val)}, {"test", ids(s.test)}};
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, out;
    SplitArgs split;
};

inline int cmd_train(const TrainArgs& a) {
    if (!std::filesystem::exists(a.config)) throw ArgumentError("config '" + a.config + "' does not exist");
    const TrainConfig cfg = load_config(a.config);
    const DatasetSplit split = a.split.load();
    const auto dir = prepare_out_dir(a.out);
    Manifest m("train", dir);
    m.input(a.config);
    m.input(a.split.data);
    m["config"] = config_to_text(cfg);
    m["split_args"] = a.split.to_json();
    m["seeds"] = {{"train", cfg.seed}, {"split", a.split.split_seed}};

    TrainResult res = train(split, cfg);
    const std::string ckpt = m.output("model.ckpt");
    save_checkpoint(ckpt, Checkpoint{res.params, cfg.kernel, a.split.dt, cfg.T_block});
    res.report.checkpoint_path = ckpt;
    write_losses_csv(m.output("losses.csv"), res.report);
    {
        auto out = csv::open_output(m.output("split.json"));
        out << split_json(split).dump(2) << '\n';
    }
    m["best_epoch"] = res.report.best_epoch;
    m["epochs_run"] = res.report.train_nll.size();
    m["train_seconds"] = res.report.wall_seconds;
    m.write();
    std::cout << "trained " << res.report.train_nll.size() << " epochs, best epoch " << res.report.best_epoch
              << ", checkpoint " << ckpt << '\n';
    return 0;
}

struct SimulateArgs {
    std::string ckpt, data, pair, out;
    double t_start = 0.0, horizon = 10.0;
    int rounds = 100, t_ctx = 50;
    std::uint64_t seed = 0;
};

inline int cmd_simulate(const SimulateArgs& a) {
    if (a.rounds < 1) throw ArgumentError("--rounds must be at least 1");
    const Checkpoint ck = load_model(a.ckpt);
    const auto trajs = load_trajectories(a.data);
    const Trajectory* found = nullptr;
    for (const auto& t : trajs)
        if (t.pair_id == a.pair) found = &t;
    if (!found) throw ArgumentError("unknown pair_id '" + a.pair + "'");
    const Trajectory traj = resample(*found, ck.dt);

    const auto dir = prepare_out_dir(a.out);
    Manifest m("simulate", dir);
    m.input(a.ckpt);
    m.input(a.data);
    m["args"] = {{"pair", a.pair}, {"t_start", a.t_start}, {"horizon", a.horizon}, {"rounds", a.rounds},
                 {"t_ctx", a.t_ctx}, {"kernel", to_string(ck.kernel)}};
    m["seeds"] = {{"base", a.seed}};

    const auto e = simulate_ensemble(ck.params, traj, a.t_start, a.horizon, a.rounds, ck.kernel, a.t_ctx, a.seed);
    write_ensemble_csv(m.output("ensemble.csv"), e);
    write_traces_csv(m.output("traces.csv"), e);

    // Prior covariance over the horizon from the first round's head outputs.
    const Rollout& r0 = e.rollouts.front();
    const Eigen::Map<const Eigen::VectorXd> ell(r0.ell.data(), static_cast<Eigen::Index>(r0.ell.size()));
    const Eigen::Map<const Eigen::VectorXd> sig(r0.sigma.data(), static_cast<Eigen::Index>(r0.sigma.size()));
    const Eigen::Map<const Eigen::VectorXd> times(r0.times.data(), static_cast<Eigen::Index>(r0.steps()));
    const Eigen::MatrixXd K = kernel_matrix(times, kernel_spec_from_heads(ck.kernel, ell, sig));
    {
        auto out = csv::open_output(m.output("gram.csv"));
        for (Eigen::Index i = 0; i < K.rows(); ++i) {
            for (Eigen::Index j = 0; j < K.cols(); ++j) out << (j ? "," : "") << csv::format(K(i, j));
            out << '\n';
        }
    }
    m.write();
    std::cout << "simulated " << a.rounds << " rounds of " << r0.steps() << " steps for pair " << a.pair << '\n';
    return 0;
}

struct PlatoonArgs {
    std::string ckpt, out;
    int n = 10, t_ctx = 50;
    double amplitude = 5.0, base_speed = 25.0, warmup = 30.0, ramp = 10.0, hold = 10.0, horizon = 200.0;
    double vehicle_length = 5.0;
    std::optional<double> gap;
    std::uint64_t seed = 0;
};

inline int cmd_platoon(const PlatoonArgs& a) {
    const Checkpoint ck = load_model(a.ckpt);
    PlatoonConfig cfg;
    cfg.n_vehicles = a.n;
    cfg.lead = {a.base_speed, a.amplitude, a.warmup, a.ramp, a.hold};
    cfg.initial_gap = a.gap;
    cfg.horizon = a.horizon;
    cfg.dt = ck.dt;
    cfg.vehicle_length = a.vehicle_length;
    cfg.seed = a.seed;
    cfg.validate();

    const auto dir = prepare_out_dir(a.out);
    Manifest m("platoon", dir);
    m.input(a.ckpt);
    const auto res = simulate_platoon(ck.params, cfg, ck.kernel, a.t_ctx);
    m["args"] = {{"n_vehicles", a.n},
                 {"horizon", a.horizon},
                 {"t_ctx", a.t_ctx},
                 {"kernel", to_string(ck.kernel)},
                 {"vehicle_length", a.vehicle_length},
                 {"initial_gap", res.initial_gap},
                 {"trapezoid",
                  {{"base_speed", a.base_speed}, {"amplitude", a.amplitude}, {"warmup", a.warmup}, {"ramp", a.ramp},
                   {"hold", a.hold}}}};
    m["seeds"] = {{"base", a.seed}};
    write_platoon_csv(m.output("platoon.csv"), res);
    write_time_space_csv(m.output("time_space.csv"), res);
    std::size_t collided = 0;
    for (const auto& r : res.followers) collided += r.any_collision() ? 1 : 0;
    m["collided_vehicles"] = collided;
    m.write();
    std::cout << "simulated platoon of " << a.n << " vehicles, " << collided << " with collision flags\n";
    return 0;
}

struct EvaluateArgs {
    std::vector<std::string> ckpts, labels;
    std::string out;
    SplitArgs split;
    EvalProtocol protocol;
    std::string rmse_summary = "mean";
};

inline int cmd_evaluate(const EvaluateArgs& a) {
    if (a.ckpts.empty()) throw ArgumentError("at least one --ckpt is required");
    if (!a.labels.empty() && a.labels.size() != a.ckpts.size())
        throw ArgumentError("--label must be given once per --ckpt");
    std::vector<LabeledModel> models;
    for (std::size_t i = 0; i < a.ckpts.size(); ++i)
        models.push_back({a.labels.empty() ? std::string("lstm") : a.labels[i], load_model(a.ckpts[i])});
    for (const auto& mdl : models)
        if (std::abs(mdl.checkpoint.dt - a.split.dt) > 1e-12)
            throw ArgumentError("checkpoint dt " + csv::format(mdl.checkpoint.dt) + " differs from --dt " +
                                csv::format(a.split.dt));
    EvalProtocol protocol = a.protocol;
    protocol.summary = a.rmse_summary == "median" ? PointSummary::median : PointSummary::mean;
    const DatasetSplit split = a.split.load();
    if (split.test.empty()) throw ArgumentError("the test split is empty");

    const auto dir = prepare_out_dir(a.out);
    Manifest m("evaluate", dir);
    for (const auto& c : a.ckpts) m.input(c);
    m.input(a.split.data);
    m["split_args"] = a.split.to_json();
    m["protocol"] = {{"horizon", a.protocol.horizon},
                     {"start_stride", a.protocol.start_stride},
                     {"rounds", a.protocol.rounds},
                     {"t_ctx", a.protocol.T_ctx},
                     {"rmse_summary", a.rmse_summary}};
    m["seeds"] = {{"base", a.protocol.seed}, {"split", a.split.split_seed}};

    const ScoreTable table = evaluate_testset(models, split, protocol);
    write_score_csv(m.output("scores.csv"), table);
    write_raw_csv(m.output("raw_scores.csv"), table);
    write_comparison_csv(m.output("comparison.csv"), table);
    m.write();
    std::cout << "evaluated " << models.size() << " model(s) on " << split.test.size() << " test pairs\n";
    return 0;
}

struct ExportArgs {
    std::string ckpt, out;
    SplitArgs split;
};

inline int cmd_export_interpretability(const ExportArgs& a) {
    const Checkpoint ck = load_model(a.ckpt);
    const DatasetSplit split = a.split.load();
    const auto dir = prepare_out_dir(a.out);
    Manifest m("export-interpretability", dir);
    m.input(a.ckpt);
    m.input(a.split.data);
    m["split_args"] = a.split.to_json();
    auto out = csv::open_output(m.output("interpretability.csv"));
    out << "ell,s,dv,v,a\n";
    std::size_t rows = 0;
    for (const auto& tr : split.train) {
        const CovariateWindow w = slice_window(tr, 0, tr.size());
        const HeadOutputs h = forward(ck.params, w);
        for (Eigen::Index k = 0; k < w.length(); ++k, ++rows)
            out << csv::format(h.ell(k)) << ',' << csv::format(w.inputs(k, 0)) << ',' << csv::format(w.inputs(k, 1))
                << ',' << csv::format(w.inputs(k, 2)) << ',' << csv::format(w.targets(k)) << '\n';
    }
    out.close();
    m["rows"] = rows;
    m.write();
    std::cout << "wrote " << rows << " rows\n";
    return 0;
}

struct SynthArgs {
    std::string out;
    synth::Config cfg;
    std::string residual = "se";
};

inline int cmd_synth(SynthArgs a) {
    if (a.residual == "se") a.cfg.residual = synth::Residual::se;
    else if (a.residual == "regime") a.cfg.residual = synth::Residual::regime;
    else if (a.residual == "none") a.cfg.residual = synth::Residual::none;
    else throw ArgumentError("--residual must be se, regime or none");
    const auto trajs = synth::generate(a.cfg);
    const auto dir = prepare_out_dir(a.out);
    Manifest m("synth", dir);
    m["args"] = {{"pairs", a.cfg.pairs}, {"duration", a.cfg.duration}, {"dt", a.cfg.dt}, {"residual", a.residual}};
    m["seeds"] = {{"base", a.cfg.seed}};
    write_trajectories(m.output("trajectories.csv"), trajs);
    m.write();
    std::cout << "wrote " << trajs.size() << " synthetic pairs\n";
    return 0;
}

// ---------------------------------------------------------------------------

/// Parses arguments and dispatches; returns the process exit code.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Stochastic car-following with a Gaussian-process residual"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "worker thread cap (0: all cores)");
    app.set_version_flag("--version", kVersion);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", ta.config, "key=value config file")->required();
    train_cmd->add_option("--out", ta.out, "output directory");
    ta.split.add_to(train_cmd);

    SimulateArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "stochastic rollouts for one recorded pair");
    sim_cmd->add_option("--ckpt", sa.ckpt)->required();
    sim_cmd->add_option("--data", sa.data)->required();
    sim_cmd->add_option("--pair", sa.pair)->required();
    sim_cmd->add_option("--t-start", sa.t_start)->required();
    sim_cmd->add_option("--horizon", sa.horizon);
    sim_cmd->add_option("--rounds", sa.rounds);
    sim_cmd->add_option("--t-ctx", sa.t_ctx);
    sim_cmd->add_option("--seed", sa.seed);
    sim_cmd->add_option("--out", sa.out);

    PlatoonArgs pa;
    auto* pl_cmd = app.add_subcommand("platoon", "platoon behind a trapezoidal lead maneuver");
    pl_cmd->add_option("--ckpt", pa.ckpt)->required();
    pl_cmd->add_option("--n", pa.n, "vehicles including the lead");
    pl_cmd->add_option("--amplitude", pa.amplitude, "speed drop, m/s");
    pl_cmd->add_option("--base-speed", pa.base_speed, "m/s");
    pl_cmd->add_option("--warmup", pa.warmup, "constant-speed period before the maneuver, s");
    pl_cmd->add_option("--ramp", pa.ramp, "s");
    pl_cmd->add_option("--hold", pa.hold, "s");
    pl_cmd->add_option("--horizon", pa.horizon, "s");
    pl_cmd->add_option("--gap", pa.gap, "initial gap, m (default: model equilibrium)");
    pl_cmd->add_option("--vehicle-length", pa.vehicle_length, "m");
    pl_cmd->add_option("--t-ctx", pa.t_ctx);
    pl_cmd->add_option("--seed", pa.seed);
    pl_cmd->add_option("--out", pa.out);

    EvaluateArgs ea;
    auto* ev_cmd = app.add_subcommand("evaluate", "score ensembles on the test split");
    ev_cmd->add_option("--ckpt", ea.ckpts, "checkpoint (repeatable)")->required();
    ev_cmd->add_option("--label", ea.labels, "model label per checkpoint");
    ev_cmd->add_option("--horizon", ea.protocol.horizon);
    ev_cmd->add_option("--start-stride", ea.protocol.start_stride);
    ev_cmd->add_option("--rounds", ea.protocol.rounds);
    ev_cmd->add_option("--t-ctx", ea.protocol.T_ctx);
    ev_cmd->add_option("--seed", ea.protocol.seed);
    ev_cmd->add_option("--rmse-summary", ea.rmse_summary, "ensemble point forecast for RMSE: mean or median")
        ->check(CLI::IsMember({"mean", "median"}));
    ev_cmd->add_option("--out", ea.out);
    ea.split.add_to(ev_cmd);

    ExportArgs xa;
    auto* ex_cmd = app.add_subcommand("export-interpretability", "per-step lengthscale and covariates");
    ex_cmd->add_option("--ckpt", xa.ckpt)->required();
    ex_cmd->add_option("--out", xa.out);
    xa.split.add_to(ex_cmd);

    SynthArgs ya;
    auto* sy_cmd = app.add_subcommand("synth", "generate synthetic pairs");
    sy_cmd->add_option("--pairs", ya.cfg.pairs);
    sy_cmd->add_option("--duration", ya.cfg.duration, "s");
    sy_cmd->add_option("--dt", ya.cfg.dt, "s");
    sy_cmd->add_option("--residual", ya.residual, "se, regime or none");
    sy_cmd->add_option("--seed", ya.cfg.seed);
    sy_cmd->add_option("--out", ya.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
    }

    try {
        set_thread_count(threads);
        if (*train_cmd) return cmd_train(ta);
        if (*sim_cmd) return cmd_simulate(sa);
        if (*pl_cmd) return cmd_platoon(pa);
        if (*ev_cmd) return cmd_evaluate(ea);
        if (*ex_cmd) return cmd_export_interpretability(xa);
        if (*sy_cmd) return cmd_synth(ya);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return static_cast<int>(ExitCode::usage);
}

}  // namespace gpcf::cli
