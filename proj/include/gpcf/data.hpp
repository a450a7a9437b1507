#pragma once

// Trajectory ingestion, decimation, pair filtering/splitting and covariate windows.
//
// Conventions used throughout the library:
//   gap       s  = lead_pos - foll_pos - lead_length   (m, bumper to bumper)
//   rel speed dv = lead_vel - foll_vel                 (m/s, positive = opening gap)
//   positions are longitudinal arc length along the lane, increasing with travel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/csv.hpp"
#include "gpcf/error.hpp"

namespace gpcf {

/// Leader/follower kinematics of one car-following pair on a uniform time grid.
struct Trajectory {
    std::string pair_id;
    double dt = 0.0;          // s
    double t_begin = 0.0;     // timestamp of the first frame, s
    double lead_length = 0.0; // m
    std::vector<double> lead_pos, lead_vel;
    std::vector<double> foll_pos, foll_vel, foll_acc;

    std::size_t size() const noexcept { return foll_pos.size(); }
    /// t0 = (N - 1) dt.
    double duration() const noexcept { return size() < 2 ? 0.0 : static_cast<double>(size() - 1) * dt; }
    double time(std::size_t i) const noexcept { return t_begin + static_cast<double>(i) * dt; }
    double gap(std::size_t i) const noexcept { return lead_pos[i] - foll_pos[i] - lead_length; }
    double rel_speed(std::size_t i) const noexcept { return lead_vel[i] - foll_vel[i]; }

    /// Throws DataError if any invariant is violated.
    void validate() const {
        const std::size_t n = size();
        if (n < 2) throw DataError("pair '" + pair_id + "': fewer than 2 frames");
        if (lead_pos.size() != n || lead_vel.size() != n || foll_vel.size() != n || foll_acc.size() != n)
            throw DataError("pair '" + pair_id + "': series lengths differ");
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DataError("pair '" + pair_id + "': dt must be positive");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(lead_pos[i]) || !std::isfinite(lead_vel[i]) || !std::isfinite(foll_pos[i]) ||
                !std::isfinite(foll_vel[i]) || !std::isfinite(foll_acc[i]))
                throw DataError("pair '" + pair_id + "': non-finite value at t=" + csv::format(time(i)));
            if (!(gap(i) > 0.0))
                throw DataError("pair '" + pair_id + "': nonpositive gap " + csv::format(gap(i)) +
                                " at t=" + csv::format(time(i)));
            if (lead_vel[i] < 0.0 || foll_vel[i] < 0.0)
                throw DataError("pair '" + pair_id + "': negative speed at t=" + csv::format(time(i)));
        }
    }
};

/// A length-T slice of covariates (s, dv, v) with aligned follower accelerations.
struct CovariateWindow {
    std::string pair_id;
    std::size_t start = 0;        // index into the source trajectory
    Eigen::MatrixX3d inputs;      // T x 3: s, dv, v
    Eigen::VectorXd targets;      // T: a
    Eigen::VectorXd times;        // T: s
    Eigen::VectorXd foll_vel;     // T: follower speed, m/s
    Eigen::VectorXd foll_pos;     // T: follower position, m

    Eigen::Index length() const noexcept { return targets.size(); }
};

struct DatasetSplit {
    std::vector<Trajectory> train, val, test;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> central_difference(const std::vector<double>& v, double dt) {
    const std::size_t n = v.size();
    std::vector<double> a(n, 0.0);
    if (n < 2) return a;
    a[0] = (v[1] - v[0]) / dt;
    a[n - 1] = (v[n - 1] - v[n - 2]) / dt;
    for (std::size_t i = 1; i + 1 < n; ++i) a[i] = (v[i + 1] - v[i - 1]) / (2.0 * dt);
    return a;
}

}  // namespace detail

/// Reads the generic trajectory CSV. The `foll_acc` column is optional; when it is
/// absent (or blank for any row of a pair) accelerations are differentiated from speeds.
inline std::vector<Trajectory> load_trajectories(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open trajectory file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "' is empty");
    const auto header = csv::split(line);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[std::string(header[i])] = i;
    for (const char* name : {"pair_id", "t", "lead_pos", "lead_vel", "foll_pos", "foll_vel", "lead_length"})
        if (!col.count(name)) throw FormatError("'" + path + "': missing column '" + name + "'");
    const bool has_acc = col.count("foll_acc") > 0;

    struct Row {
        double t, lead_pos, lead_vel, foll_pos, foll_vel, foll_acc, lead_length;
        bool acc_missing;
        std::size_t lineno;
    };
    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> groups;

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (csv::trim(line).empty()) continue;
        const auto f = csv::split(line);
        if (f.size() < header.size())
            throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " fields");
        const std::string where = path + ":" + std::to_string(lineno);
        auto num = [&](const char* name) { return csv::parse_double(f[col.at(name)], where); };
        Row r{};
        r.lineno = lineno;
        r.t = num("t");
        r.lead_pos = num("lead_pos");
        r.lead_vel = num("lead_vel");
        r.foll_pos = num("foll_pos");
        r.foll_vel = num("foll_vel");
        r.lead_length = num("lead_length");
        r.acc_missing = !has_acc || f[col.at("foll_acc")].empty();
        r.foll_acc = r.acc_missing ? 0.0 : num("foll_acc");
        std::string id(f[col.at("pair_id")]);
        auto [it, inserted] = groups.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(r);
    }

    std::vector<Trajectory> out;
    out.reserve(order.size());
    for (const auto& id : order) {
        auto& rows = groups[id];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
        for (std::size_t i = 1; i < rows.size(); ++i)
            if (!(rows[i].t > rows[i - 1].t))
                throw DataError("pair '" + id + "': non-monotone timestamps (duplicate t=" +
                                csv::format(rows[i].t) + ")");
        Trajectory tr;
        tr.pair_id = id;
        tr.t_begin = rows.front().t;
        tr.lead_length = rows.front().lead_length;
        if (rows.size() >= 2) {
            tr.dt = (rows.back().t - rows.front().t) / static_cast<double>(rows.size() - 1);
            for (std::size_t i = 1; i < rows.size(); ++i) {
                const double step = rows[i].t - rows[i - 1].t;
                if (std::abs(step - tr.dt) > 1e-6 * tr.dt + 1e-9)
                    throw DataError("pair '" + id + "': non-uniform sampling near t=" + csv::format(rows[i].t));
            }
        }
        bool any_missing = false;
        for (const auto& r : rows) {
            if (!(r.lead_pos - r.foll_pos - r.lead_length > 0.0))
                throw DataError("pair '" + id + "': nonpositive gap at t=" + csv::format(r.t) + " (line " +
                                std::to_string(r.lineno) + ")");
            tr.lead_pos.push_back(r.lead_pos);
            tr.lead_vel.push_back(r.lead_vel);
            tr.foll_pos.push_back(r.foll_pos);
            tr.foll_vel.push_back(r.foll_vel);
            tr.foll_acc.push_back(r.foll_acc);
            any_missing = any_missing || r.acc_missing;
        }
        if (any_missing) tr.foll_acc = detail::central_difference(tr.foll_vel, tr.dt);
        tr.validate();
        out.push_back(std::move(tr));
    }
    return out;
}

inline void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
    auto out = csv::open_output(path);
    out << "pair_id,t,lead_pos,lead_vel,foll_pos,foll_vel,foll_acc,lead_length\n";
    for (const auto& tr : trajs) {
        for (std::size_t i = 0; i < tr.size(); ++i) {
            out << tr.pair_id << ',' << csv::format(tr.time(i)) << ',' << csv::format(tr.lead_pos[i]) << ','
                << csv::format(tr.lead_vel[i]) << ',' << csv::format(tr.foll_pos[i]) << ','
                << csv::format(tr.foll_vel[i]) << ',' << csv::format(tr.foll_acc[i]) << ','
                << csv::format(tr.lead_length) << '\n';
        }
    }
}

/// Frame decimation: keeps every k-th frame, k = target_dt / dt (no interpolation).
inline Trajectory resample(const Trajectory& traj, double target_dt) {
    if (!(target_dt > 0.0)) throw ArgumentError("resample: target_dt must be positive");
    const double ratio = target_dt / traj.dt;
    const double k_real = std::round(ratio);
    if (k_real < 1.0 || std::abs(ratio - k_real) > 1e-6 * ratio)
        throw ArgumentError("resample: target_dt " + csv::format(target_dt) + " is not an integer multiple of dt " +
                            csv::format(traj.dt) + " (pair '" + traj.pair_id + "')");
    const auto k = static_cast<std::size_t>(k_real);
    if (k == 1) {
        Trajectory same = traj;
        same.dt = target_dt;
        return same;
    }
    Trajectory out;
    out.pair_id = traj.pair_id;
    out.dt = target_dt;
    out.t_begin = traj.t_begin;
    out.lead_length = traj.lead_length;
    for (std::size_t i = 0; i < traj.size(); i += k) {
        out.lead_pos.push_back(traj.lead_pos[i]);
        out.lead_vel.push_back(traj.lead_vel[i]);
        out.foll_pos.push_back(traj.foll_pos[i]);
        out.foll_vel.push_back(traj.foll_vel[i]);
        out.foll_acc.push_back(traj.foll_acc[i]);
    }
    return out;
}

/// Drops short pairs, draws `n_test` long pairs into the test set, and splits the rest
/// into train/validation by `train_frac`. Deterministic in (input, seed).
inline DatasetSplit filter_and_split(const std::vector<Trajectory>& trajs, double min_duration,
                                     double test_min_duration, std::size_t n_test, double train_frac,
                                     std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ArgumentError("train_frac must lie in (0, 1)");

    std::vector<std::size_t> eligible, long_pairs;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        if (trajs[i].duration() > min_duration) {
            eligible.push_back(i);
            if (trajs[i].duration() > test_min_duration) long_pairs.push_back(i);
        }
    }
    if (n_test > long_pairs.size())
        throw DataError("need " + std::to_string(n_test) + " test pairs longer than " +
                        csv::format(test_min_duration) + " s but only " + std::to_string(long_pairs.size()) +
                        " of " + std::to_string(eligible.size()) + " eligible pairs qualify");

    std::mt19937_64 rng(seed);
    std::shuffle(long_pairs.begin(), long_pairs.end(), rng);
    std::vector<bool> in_test(trajs.size(), false);
    for (std::size_t j = 0; j < n_test; ++j) in_test[long_pairs[j]] = true;

    std::vector<std::size_t> rest;
    for (auto i : eligible)
        if (!in_test[i]) rest.push_back(i);
    std::shuffle(rest.begin(), rest.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(rest.size())));
    std::vector<bool> in_train(trajs.size(), false);
    for (std::size_t j = 0; j < n_train && j < rest.size(); ++j) in_train[rest[j]] = true;

    DatasetSplit split;
    split.seed = seed;
    for (auto i : eligible) {
        if (in_test[i])
            split.test.push_back(trajs[i]);
        else if (in_train[i])
            split.train.push_back(trajs[i]);
        else
            split.val.push_back(trajs[i]);
    }
    return split;
}

/// Covariates of frames [start, start + T) of a trajectory.
inline CovariateWindow slice_window(const Trajectory& traj, std::size_t start, std::size_t T) {
    CovariateWindow w;
    w.pair_id = traj.pair_id;
    w.start = start;
    const auto n = static_cast<Eigen::Index>(T);
    w.inputs.resize(n, 3);
    w.targets.resize(n);
    w.times.resize(n);
    w.foll_vel.resize(n);
    w.foll_pos.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = start + static_cast<std::size_t>(k);
        w.inputs(k, 0) = traj.gap(i);
        w.inputs(k, 1) = traj.rel_speed(i);
        w.inputs(k, 2) = traj.foll_vel[i];
        w.targets(k) = traj.foll_acc[i];
        w.times(k) = traj.time(i);
        w.foll_vel(k) = traj.foll_vel[i];
        w.foll_pos(k) = traj.foll_pos[i];
    }
    return w;
}

inline std::vector<CovariateWindow> make_windows(const Trajectory& traj, std::size_t T, std::size_t stride) {
    if (T < 2) throw ArgumentError("make_windows: window length must be at least 2");
    if (stride < 1) throw ArgumentError("make_windows: stride must be at least 1");
    if (T > traj.size())
        throw ArgumentError("make_windows: window length " + std::to_string(T) + " exceeds trajectory length " +
                            std::to_string(traj.size()) + " (pair '" + traj.pair_id + "')");
    std::vector<CovariateWindow> out;
    for (std::size_t start = 0; start + T <= traj.size(); start += stride) out.push_back(slice_window(traj, start, T));
    return out;
}

}  // namespace gpcf
