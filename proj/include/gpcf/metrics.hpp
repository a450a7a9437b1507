#pragma once

// Ensemble forecast scores and test-set evaluation tables.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/csv.hpp"
#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/meanmodel.hpp"
#include "gpcf/sim.hpp"

namespace gpcf {

inline double rmse(const std::vector<double>& truth, const std::vector<double>& pred) {
    if (truth.size() != pred.size()) throw ArgumentError("rmse: length mismatch");
    if (truth.empty()) throw ArgumentError("rmse: empty input");
    double ss = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) ss += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    return std::sqrt(ss / static_cast<double>(truth.size()));
}

/// Empirical CRPS: mean |X - y| - (1 / 2M^2) sum |X_m - X_k|.
inline double crps_samples(const std::vector<double>& samples, double obs) {
    const std::size_t M = samples.size();
    if (M == 0) throw ArgumentError("crps_samples: no samples");
    double a = 0.0, b = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        a += std::abs(samples[m] - obs);
        for (std::size_t k = m + 1; k < M; ++k) b += std::abs(samples[m] - samples[k]);
    }
    const double Md = static_cast<double>(M);
    return a / Md - b / (Md * Md);  // the pair sum counts each unordered pair once
}

/// Energy score of an M x d sample matrix (rows are members) against a d-vector.
inline double energy_score(const Eigen::MatrixXd& samples, const Eigen::VectorXd& obs) {
    const Eigen::Index M = samples.rows();
    if (samples.cols() != obs.size()) throw ArgumentError("energy_score: dimension mismatch");
    if (M < 1 || obs.size() < 1) throw ArgumentError("energy_score: need at least one member and one dimension");
    double a = 0.0, b = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
        a += (samples.row(m).transpose() - obs).norm();
        for (Eigen::Index k = m + 1; k < M; ++k) b += (samples.row(m) - samples.row(k)).norm();
    }
    const double Md = static_cast<double>(M);
    return a / Md - b / (Md * Md);
}

enum class PointSummary { mean, median };

struct EvalProtocol {
    double horizon = 10.0;       // s
    double start_stride = 5.0;   // s
    int rounds = 200;
    int T_ctx = 50;
    std::uint64_t seed = 0;
    PointSummary summary = PointSummary::mean;  // ensemble point forecast used by RMSE
};

/// Model under evaluation: `model` and `kernel` are the table labels.
struct LabeledModel {
    std::string model;
    Checkpoint checkpoint;
};

struct RawScore {
    std::string model, kernel, pair_id;
    double t_start = 0.0;
    std::string state, metric;
    double value = 0.0;
};

struct ScoreRow {
    std::string model, kernel, state, metric;
    double mean = 0.0;
    std::size_t count = 0;
};

struct ScoreTable {
    std::vector<ScoreRow> rows;
    std::vector<RawScore> raw;

    const ScoreRow* find(const std::string& model, const std::string& kernel, const std::string& state,
                         const std::string& metric) const {
        for (const auto& r : rows)
            if (r.model == model && r.kernel == kernel && r.state == state && r.metric == metric) return &r;
        return nullptr;
    }
};

/// Scores of one ensemble: per state (a, v, s) RMSE of the ensemble mean (or median), CRPS averaged
/// over steps and ES over the horizon vector, plus the collision rate. Accelerations are
/// scored on steps 0 .. n-1, speeds and gaps on the simulated states 1 .. n.
inline std::vector<std::pair<std::string, std::pair<std::string, double>>> score_ensemble(const EnsembleResult& e, PointSummary summary = PointSummary::mean) {
    std::vector<std::pair<std::string, std::pair<std::string, double>>> out;
    const std::size_t M = e.rollouts.size();
    if (M == 0) throw ArgumentError("score_ensemble: empty ensemble");
    const std::size_t n = e.rollouts.front().steps();

    auto score_state = [&](const std::string& state, auto&& member, const std::vector<double>& truth, std::size_t first) {
        const std::size_t d = truth.size() - first;
        Eigen::MatrixXd X(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(d));
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = 0; k < d; ++k) X(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = member(m)[first + k];
        std::vector<double> obs(truth.begin() + static_cast<std::ptrdiff_t>(first), truth.end());
        std::vector<double> mean(d);
        double crps = 0.0;
        std::vector<double> col(M);
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t m = 0; m < M; ++m) col[m] = X(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
            if (summary == PointSummary::mean) {
                mean[k] = X.col(static_cast<Eigen::Index>(k)).mean();
            } else {
                std::vector<double> sorted = col;
                std::sort(sorted.begin(), sorted.end());
                mean[k] = M % 2 ? sorted[M / 2] : 0.5 * (sorted[M / 2 - 1] + sorted[M / 2]);
            }
            crps += crps_samples(col, obs[k]);
        }
        const Eigen::Map<const Eigen::VectorXd> obs_vec(obs.data(), static_cast<Eigen::Index>(d));
        out.push_back({state, {"RMSE", rmse(obs, mean)}});
        out.push_back({state, {"CRPS", crps / static_cast<double>(d)}});
        out.push_back({state, {"ES", energy_score(X, obs_vec)}});
    };
    if (e.truth.a.size() != n) throw ArgumentError("score_ensemble: truth and rollouts disagree in length");
    score_state("a", [&](std::size_t m) -> const std::vector<double>& { return e.rollouts[m].a; }, e.truth.a, 0);
    score_state("v", [&](std::size_t m) -> const std::vector<double>& { return e.rollouts[m].v; }, e.truth.v, 1);
    score_state("s", [&](std::size_t m) -> const std::vector<double>& { return e.rollouts[m].s; }, e.truth.s, 1);
    double collided = 0.0;
    for (const auto& r : e.rollouts) collided += r.any_collision() ? 1.0 : 0.0;
    out.push_back({"all", {"collision_rate", collided / static_cast<double>(M)}});
    return out;
}

/// Start times on the pair's grid: first start leaves T_ctx recorded steps before it,
/// then every `start_stride` while the horizon fits.
inline std::vector<double> start_times(const Trajectory& tr, const EvalProtocol& pr) {
    const std::size_t n = detail::horizon_steps(pr.horizon, tr.dt);
    const std::size_t stride = detail::horizon_steps(pr.start_stride, tr.dt);
    std::vector<double> out;
    for (auto i0 = static_cast<std::size_t>(pr.T_ctx); i0 + n < tr.size(); i0 += stride) out.push_back(tr.time(i0));
    return out;
}

/// Runs every model over every (test pair, start) cell and aggregates mean scores.
/// All models share the per-cell seeds so that comparisons use common random numbers.
inline ScoreTable evaluate_testset(const std::vector<LabeledModel>& models, const DatasetSplit& split,
                                   const EvalProtocol& pr) {
    if (split.test.empty()) throw ArgumentError("evaluate: the test split is empty");
    if (models.empty()) throw ArgumentError("evaluate: no models given");
    if (pr.rounds < 1) throw ArgumentError("evaluate: rounds must be at least 1");

    struct Cell {
        const Trajectory* traj;
        double t_start;
    };
    std::vector<Cell> cells;
    for (const auto& tr : split.test)
        for (double t : start_times(tr, pr)) cells.push_back({&tr, t});
    if (cells.empty()) throw ArgumentError("evaluate: no test pair is long enough for one start");

    ScoreTable table;
    for (const auto& m : models) {
        const std::string kernel = to_string(m.checkpoint.kernel);
        std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
        std::vector<std::pair<std::string, std::string>> order;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto seed = pr.seed + static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(pr.rounds);
            const auto e = simulate_ensemble(m.checkpoint.params, *cells[c].traj, cells[c].t_start, pr.horizon,
                                             pr.rounds, m.checkpoint.kernel, pr.T_ctx, seed);
            for (const auto& [state, mv] : score_ensemble(e, pr.summary)) {
                const auto key = std::make_pair(state, mv.first);
                if (!acc.count(key)) order.push_back(key);
                auto& slot = acc[key];
                slot.first += mv.second;
                slot.second += 1;
                table.raw.push_back({m.model, kernel, cells[c].traj->pair_id, cells[c].t_start, state, mv.first, mv.second});
            }
        }
        for (const auto& key : order) {
            const auto& [sum, count] = acc[key];
            table.rows.push_back({m.model, kernel, key.first, key.second, sum / static_cast<double>(count), count});
        }
    }
    return table;
}

inline void write_score_csv(const std::string& path, const ScoreTable& t) {
    auto out = csv::open_output(path);
    out << "model,kernel,state,metric,mean,count\n";
    for (const auto& r : t.rows)
        out << r.model << ',' << r.kernel << ',' << r.state << ',' << r.metric << ',' << csv::format(r.mean) << ','
            << r.count << '\n';
}

inline void write_raw_csv(const std::string& path, const ScoreTable& t) {
    auto out = csv::open_output(path);
    out << "model,kernel,pair_id,t_start,state,metric,value\n";
    for (const auto& r : t.raw)
        out << r.model << ',' << r.kernel << ',' << r.pair_id << ',' << csv::format(r.t_start) << ',' << r.state << ','
            << r.metric << ',' << csv::format(r.value) << '\n';
}

/// Comparison layout: one row per metric(state), one column per model/kernel.
inline void write_comparison_csv(const std::string& path, const ScoreTable& t) {
    std::vector<std::string> columns, metrics;
    for (const auto& r : t.rows) {
        const std::string col = r.model + "+" + r.kernel;
        const std::string met = r.metric + "(" + r.state + ")";
        if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
        if (std::find(metrics.begin(), metrics.end(), met) == metrics.end()) metrics.push_back(met);
    }
    auto out = csv::open_output(path);
    out << "metric";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (const auto& met : metrics) {
        out << met;
        for (const auto& c : columns) {
            out << ',';
            for (const auto& r : t.rows)
                if (r.model + "+" + r.kernel == c && r.metric + "(" + r.state + ")" == met) out << csv::format(r.mean);
        }
        out << '\n';
    }
}

}  // namespace gpcf
