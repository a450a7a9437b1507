#pragma once

// Stochastic rollouts: single rounds against a replayed leader, ensembles, and a
// platoon of simulated followers behind a scripted lead vehicle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/csv.hpp"
#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/gp.hpp"
#include "gpcf/kernels.hpp"
#include "gpcf/meanmodel.hpp"
#include "gpcf/parallel.hpp"

namespace gpcf {

inline constexpr double kMinGap = 0.01;  // m, floor applied after a collision

struct SimOptions {
    bool use_gp = true;         // condition on the residual history; otherwise the prior marginal
    bool include_noise = true;  // add s0^2 to the sampling variance
    std::optional<double> variance_override;  // fixed sampling variance, (m/s^2)^2
};

/// One simulated follower trajectory. State series (times, v, p, s, dv, collided) have
/// n + 1 entries, k = 0 being the initial state; per-step series (a, a_nn, ell, sigma,
/// mu, var) have n entries, entry k producing the transition k -> k + 1.
struct Rollout {
    std::string pair_id;
    std::uint64_t seed = 0;
    double dt = 0.0;
    std::vector<double> times, v, p, s, dv;
    std::vector<double> a, a_nn, ell, sigma, mu, var;
    std::vector<bool> collided;
    // conditioning context preceding k = 0: recorded residuals and head outputs
    std::vector<double> ctx_times, ctx_residual, ctx_a_nn, ctx_ell, ctx_sigma;

    std::size_t steps() const noexcept { return a.size(); }
    bool any_collision() const { return std::find(collided.begin(), collided.end(), true) != collided.end(); }
};

/// Recorded follower states aligned with a rollout's grid.
struct GroundTruth {
    std::vector<double> times, a, v, p, s, dv;
};

struct EnsembleResult {
    std::vector<Rollout> rollouts;
    GroundTruth truth;
    double t_start = 0.0;
    std::string pair_id;
};

namespace detail {

/// Index of time t on the trajectory grid; throws if t is not (close to) a grid point.
inline std::size_t grid_index(const Trajectory& traj, double t, const char* what) {
    const double x = (t - traj.t_begin) / traj.dt;
    const double k = std::round(x);
    if (std::abs(x - k) > 1e-6 || k < 0.0)
        throw ArgumentError(std::string(what) + " " + csv::format(t) + " is not on the sampling grid of pair '" +
                            traj.pair_id + "'");
    return static_cast<std::size_t>(k);
}

/// Rollout core over frames [i0, i0 + n] of `traj`: the leader is replayed from the
/// trajectory, the follower is simulated from the recorded state at i0 after a
/// recurrent warm-up on recorded covariates over [i0 - T_ctx, i0).
inline Rollout run_rollout(const ModelParams& params, const Trajectory& traj, std::size_t i0, std::size_t n,
                           KernelKind kind, int T_ctx, std::uint64_t seed, const SimOptions& opt) {
    if (T_ctx < 1) throw ArgumentError("T_ctx must be at least 1");
    const auto ctx = static_cast<std::size_t>(T_ctx);
    if (i0 < ctx)
        throw ArgumentError("t_start leaves fewer than T_ctx = " + std::to_string(T_ctx) +
                            " recorded steps before it (pair '" + traj.pair_id + "')");
    if (i0 + n >= traj.size())
        throw ArgumentError("horizon extends past the recorded data of pair '" + traj.pair_id + "'");
    if (opt.variance_override && !(*opt.variance_override >= 0.0))
        throw ArgumentError("variance override must be nonnegative");

    const double dt = traj.dt;
    const double s0sq = params.sigma0() * params.sigma0();
    Rollout r;
    r.pair_id = traj.pair_id;
    r.seed = seed;
    r.dt = dt;

    // Warm-up on recorded covariates; the recorded residuals seed the GP history.
    RecurrentState state = RecurrentState::zeros(params.hidden());
    for (std::size_t i = i0 - ctx; i < i0; ++i) {
        const StepOutput o = step(params, state, Eigen::Vector3d(traj.gap(i), traj.rel_speed(i), traj.foll_vel[i]));
        r.ctx_times.push_back(traj.time(i));
        r.ctx_residual.push_back(traj.foll_acc[i] - o.a_nn);
        r.ctx_a_nn.push_back(o.a_nn);
        r.ctx_ell.push_back(o.ell);
        r.ctx_sigma.push_back(o.sigma);
    }

    // Sliding history of (time, residual, a_nn, ell, sigma), newest last.
    std::vector<double> h_t = r.ctx_times, h_r = r.ctx_residual, h_a = r.ctx_a_nn, h_l = r.ctx_ell,
                        h_s = r.ctx_sigma;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    r.times.reserve(n + 1);
    r.v.push_back(traj.foll_vel[i0]);
    r.p.push_back(traj.foll_pos[i0]);
    auto record_state = [&](std::size_t k) {
        const std::size_t i = i0 + k;
        r.times.push_back(traj.time(i));
        double gap = traj.lead_pos[i] - r.p[k] - traj.lead_length;
        const bool hit = !(gap > 0.0);
        if (hit) gap = kMinGap;
        r.s.push_back(gap);
        r.dv.push_back(traj.lead_vel[i] - r.v[k]);
        r.collided.push_back(hit);
    };
    record_state(0);

    Eigen::VectorXd a_w(ctx + 1), l_w(ctx + 1), s_w(ctx + 1), res(ctx), tim(ctx);
    for (std::size_t k = 0; k < n; ++k) {
        const StepOutput o = step(params, state, Eigen::Vector3d(r.s[k], r.dv[k], r.v[k]));

        PredictiveGaussian pg;
        if (opt.use_gp) {
            const std::size_t m = h_t.size(), off = m - ctx;
            for (std::size_t j = 0; j < ctx; ++j) {
                tim(static_cast<Eigen::Index>(j)) = h_t[off + j];
                res(static_cast<Eigen::Index>(j)) = h_r[off + j];
                a_w(static_cast<Eigen::Index>(j)) = h_a[off + j];
                l_w(static_cast<Eigen::Index>(j)) = h_l[off + j];
                s_w(static_cast<Eigen::Index>(j)) = h_s[off + j];
            }
            const auto last = static_cast<Eigen::Index>(ctx);
            a_w(last) = o.a_nn;
            l_w(last) = o.ell;
            s_w(last) = o.sigma;
            pg = predict_next(res, tim, r.times[k], a_w, l_w, s_w, kind, s0sq, opt.include_noise);
        } else {
            const Eigen::VectorXd one_l = Eigen::VectorXd::Constant(1, o.ell), one_s = Eigen::VectorXd::Constant(1, o.sigma);
            const Eigen::MatrixXd K =
                kernel_matrix(Eigen::VectorXd::Constant(1, r.times[k]), kernel_spec_from_heads(kind, one_l, one_s));
            pg = {o.a_nn, K(0, 0) + (opt.include_noise ? s0sq : 0.0)};
        }
        if (opt.variance_override) pg.var = *opt.variance_override;

        double a = pg.mean + std::sqrt(pg.var) * normal(rng);
        if (!std::isfinite(a))
            throw NumericalError("non-finite sampled acceleration at t=" + csv::format(r.times[k]) + " (pair '" +
                                 traj.pair_id + "')");
        double v_next = r.v[k] + a * dt;
        if (v_next < 0.0) {
            // no reversing: stop within the step and record the realized deceleration
            a = -r.v[k] / dt;
            v_next = r.v[k] + a * dt;
        }
        r.a.push_back(a);
        r.a_nn.push_back(o.a_nn);
        r.ell.push_back(o.ell);
        r.sigma.push_back(o.sigma);
        r.mu.push_back(pg.mean);
        r.var.push_back(pg.var);
        r.v.push_back(v_next);
        r.p.push_back(r.p[k] + 0.5 * (r.v[k] + v_next) * dt);
        record_state(k + 1);

        h_t.push_back(r.times[k]);
        h_r.push_back(a - o.a_nn);
        h_a.push_back(o.a_nn);
        h_l.push_back(o.ell);
        h_s.push_back(o.sigma);
    }
    return r;
}

inline std::size_t horizon_steps(double horizon, double dt) {
    if (!(horizon > 0.0)) throw ArgumentError("horizon must be positive");
    const double x = horizon / dt;
    const double k = std::round(x);
    if (std::abs(x - k) > 1e-6 * std::max(1.0, x) || k < 1.0)
        throw ArgumentError("horizon " + csv::format(horizon) + " is not a multiple of dt " + csv::format(dt));
    return static_cast<std::size_t>(k);
}

}  // namespace detail

/// Simulates the follower over [t_start, t_end] with the leader replayed from `traj`.
inline Rollout simulate_round(const ModelParams& params, const Trajectory& traj, double t_start, double t_end,
                              KernelKind kind, int T_ctx, std::uint64_t seed, const SimOptions& opt = {}) {
    const std::size_t i0 = detail::grid_index(traj, t_start, "t_start");
    const std::size_t n = detail::horizon_steps(t_end - t_start, traj.dt);
    return detail::run_rollout(params, traj, i0, n, kind, T_ctx, seed, opt);
}

inline GroundTruth ground_truth(const Trajectory& traj, double t_start, std::size_t n) {
    const std::size_t i0 = detail::grid_index(traj, t_start, "t_start");
    if (i0 + n >= traj.size()) throw ArgumentError("horizon extends past the recorded data of pair '" + traj.pair_id + "'");
    GroundTruth g;
    for (std::size_t k = 0; k <= n; ++k) {
        const std::size_t i = i0 + k;
        g.times.push_back(traj.time(i));
        g.v.push_back(traj.foll_vel[i]);
        g.p.push_back(traj.foll_pos[i]);
        g.s.push_back(traj.gap(i));
        g.dv.push_back(traj.rel_speed(i));
        if (k < n) g.a.push_back(traj.foll_acc[i]);
    }
    return g;
}

/// `rounds` independent rollouts; round i uses seed + i.
inline EnsembleResult simulate_ensemble(const ModelParams& params, const Trajectory& traj, double t_start,
                                        double horizon, int rounds, KernelKind kind, int T_ctx, std::uint64_t seed,
                                        const SimOptions& opt = {}) {
    if (rounds < 1) throw ArgumentError("rounds must be at least 1");
    const std::size_t i0 = detail::grid_index(traj, t_start, "t_start");
    const std::size_t n = detail::horizon_steps(horizon, traj.dt);
    EnsembleResult e;
    e.t_start = t_start;
    e.pair_id = traj.pair_id;
    e.truth = ground_truth(traj, t_start, n);
    e.rollouts.resize(static_cast<std::size_t>(rounds));
    parallel_for(e.rollouts.size(), [&](std::size_t i) {
        e.rollouts[i] = detail::run_rollout(params, traj, i0, n, kind, T_ctx, seed + i, opt);
    });
    return e;
}

inline void write_ensemble_csv(const std::string& path, const EnsembleResult& e) {
    auto out = csv::open_output(path);
    out << "round,t,a,v,p,s,dv,ell,sigma,collided\n";
    for (std::size_t i = 0; i < e.rollouts.size(); ++i) {
        const Rollout& r = e.rollouts[i];
        for (std::size_t k = 0; k < r.times.size(); ++k) {
            const bool has_step = k < r.steps();
            out << i << ',' << csv::format(r.times[k]) << ',' << (has_step ? csv::format(r.a[k]) : "") << ','
                << csv::format(r.v[k]) << ',' << csv::format(r.p[k]) << ',' << csv::format(r.s[k]) << ','
                << csv::format(r.dv[k]) << ',' << (has_step ? csv::format(r.ell[k]) : "") << ','
                << (has_step ? csv::format(r.sigma[k]) : "") << ',' << (r.collided[k] ? 1 : 0) << '\n';
        }
    }
}

/// Per-step head traces of every round plus the recorded truth (rounds = -1).
inline void write_traces_csv(const std::string& path, const EnsembleResult& e) {
    auto out = csv::open_output(path);
    out << "round,t,a_nn,ell,sigma,mu,var\n";
    for (std::size_t i = 0; i < e.rollouts.size(); ++i) {
        const Rollout& r = e.rollouts[i];
        for (std::size_t k = 0; k < r.steps(); ++k)
            out << i << ',' << csv::format(r.times[k]) << ',' << csv::format(r.a_nn[k]) << ','
                << csv::format(r.ell[k]) << ',' << csv::format(r.sigma[k]) << ',' << csv::format(r.mu[k]) << ','
                << csv::format(r.var[k]) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Platoon

/// Trapezoidal lead-speed maneuver after a constant-speed warm-up:
/// base for `warmup`, linear ramp to base - amplitude over `ramp`, hold for `hold`,
/// linear ramp back over `ramp`, then base until the horizon.
struct TrapezoidProfile {
    double base_speed = 25.0;  // m/s
    double amplitude = 5.0;    // m/s
    double warmup = 30.0;      // s
    double ramp = 10.0;        // s
    double hold = 10.0;        // s

    double speed(double t) const {
        const double t1 = warmup, t2 = t1 + ramp, t3 = t2 + hold, t4 = t3 + ramp;
        if (t <= t1 || t >= t4) return base_speed;
        if (t < t2) return base_speed - amplitude * (t - t1) / ramp;
        if (t <= t3) return base_speed - amplitude;
        return base_speed - amplitude * (t4 - t) / ramp;
    }
};

struct PlatoonConfig {
    int n_vehicles = 10;
    TrapezoidProfile lead;
    std::optional<double> initial_gap;  // m; unset: the model's equilibrium gap at base speed
    double horizon = 200.0;             // s, includes the warm-up
    double dt = 0.2;                    // s
    double vehicle_length = 5.0;        // m
    std::uint64_t seed = 0;

    void validate() const {
        if (n_vehicles < 2) throw ArgumentError("platoon: n_vehicles must be at least 2");
        if (!(lead.base_speed >= 0.0) || !(lead.amplitude >= 0.0) || lead.amplitude > lead.base_speed)
            throw ArgumentError("platoon: speeds must stay nonnegative (0 <= amplitude <= base speed)");
        if (!(lead.warmup >= 0.0) || !(lead.ramp > 0.0) || !(lead.hold >= 0.0))
            throw ArgumentError("platoon: warm-up and hold must be nonnegative, ramp positive");
        if (initial_gap && !(*initial_gap > 0.0)) throw ArgumentError("platoon: initial gap must be positive");
        if (!(dt > 0.0) || !(vehicle_length >= 0.0)) throw ArgumentError("platoon: invalid dt or vehicle length");
    }
};

struct PlatoonResult {
    std::vector<double> times;               // n + 1
    std::vector<double> lead_v, lead_p, lead_a;  // vehicle 0; lead_a has n entries
    std::vector<Rollout> followers;          // vehicles 1 .. n_vehicles - 1
    double initial_gap = 0.0;
};

/// Gap at which the mean acceleration vanishes for a follower cruising at `speed`
/// behind a leader at the same speed (recurrent state settled on constant input).
inline double equilibrium_gap(const ModelParams& params, double speed, double lo = 0.5, double hi = 300.0) {
    auto accel = [&](double gap) {
        RecurrentState st = RecurrentState::zeros(params.hidden());
        StepOutput o;
        for (int i = 0; i < 100; ++i) o = step(params, st, Eigen::Vector3d(gap, 0.0, speed));
        return o.a_nn;
    };
    double f_lo = accel(lo), f_hi = accel(hi);
    if (f_lo > 0.0 || f_hi < 0.0) return std::clamp(speed * 1.5 + 2.0, lo, hi);  // no sign change: time-gap fallback
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (accel(mid) < 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Vehicle 0 follows the profile exactly; vehicle k follows the simulated vehicle k - 1.
/// Every follower starts at the common initial gap and base speed, preceded by T_ctx
/// steps of recorded-style equilibrium history used for the recurrent warm-up.
inline PlatoonResult simulate_platoon(const ModelParams& params, const PlatoonConfig& cfg, KernelKind kind, int T_ctx,
                                      const SimOptions& opt = {}) {
    cfg.validate();
    if (T_ctx < 1) throw ArgumentError("T_ctx must be at least 1");
    const std::size_t n = detail::horizon_steps(cfg.horizon, cfg.dt);
    const auto ctx = static_cast<std::size_t>(T_ctx);
    const double dt = cfg.dt, v0 = cfg.lead.base_speed;
    const double gap = cfg.initial_gap ? *cfg.initial_gap : equilibrium_gap(params, v0);

    PlatoonResult out;
    out.initial_gap = gap;
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = static_cast<double>(k) * dt;
        out.times.push_back(t);
        out.lead_v.push_back(cfg.lead.speed(t));
        out.lead_p.push_back(k == 0 ? 0.0 : out.lead_p[k - 1] + 0.5 * (out.lead_v[k - 1] + out.lead_v[k]) * dt);
        if (k > 0) out.lead_a.push_back((out.lead_v[k] - out.lead_v[k - 1]) / dt);
    }

    std::vector<double> pred_p = out.lead_p, pred_v = out.lead_v;
    for (int veh = 1; veh < cfg.n_vehicles; ++veh) {
        // Pair trajectory: T_ctx equilibrium frames, then the predecessor's simulated path.
        Trajectory tr;
        tr.pair_id = "vehicle" + std::to_string(veh);
        tr.dt = dt;
        tr.t_begin = -static_cast<double>(ctx) * dt;
        tr.lead_length = cfg.vehicle_length;
        const double p_start = pred_p[0] - gap - cfg.vehicle_length;
        for (std::size_t j = 0; j < ctx; ++j) {
            const double back = static_cast<double>(ctx - j) * dt;
            tr.lead_pos.push_back(pred_p[0] - pred_v[0] * back);
            tr.lead_vel.push_back(pred_v[0]);
            tr.foll_pos.push_back(p_start - v0 * back);
            tr.foll_vel.push_back(v0);
            tr.foll_acc.push_back(0.0);
        }
        for (std::size_t k = 0; k <= n; ++k) {
            tr.lead_pos.push_back(pred_p[k]);
            tr.lead_vel.push_back(pred_v[k]);
            // follower entries past the start are placeholders; only the start state is read
            tr.foll_pos.push_back(k == 0 ? p_start : 0.0);
            tr.foll_vel.push_back(v0);
            tr.foll_acc.push_back(0.0);
        }
        Rollout r = detail::run_rollout(params, tr, ctx, n, kind, T_ctx, cfg.seed + static_cast<std::uint64_t>(veh), opt);
        r.pair_id = tr.pair_id;
        pred_p = r.p;
        pred_v = r.v;
        out.followers.push_back(std::move(r));
    }
    return out;
}

inline void write_platoon_csv(const std::string& path, const PlatoonResult& res) {
    auto out = csv::open_output(path);
    out << "vehicle,t,a,v,p,s\n";
    for (std::size_t k = 0; k < res.times.size(); ++k)
        out << 0 << ',' << csv::format(res.times[k]) << ','
            << (k < res.lead_a.size() ? csv::format(res.lead_a[k]) : "") << ',' << csv::format(res.lead_v[k]) << ','
            << csv::format(res.lead_p[k]) << ",\n";
    for (std::size_t f = 0; f < res.followers.size(); ++f) {
        const Rollout& r = res.followers[f];
        for (std::size_t k = 0; k < r.times.size(); ++k)
            out << f + 1 << ',' << csv::format(r.times[k]) << ',' << (k < r.steps() ? csv::format(r.a[k]) : "") << ','
                << csv::format(r.v[k]) << ',' << csv::format(r.p[k]) << ',' << csv::format(r.s[k]) << '\n';
    }
}

/// Wide time-space table: one row per time, one position column per vehicle.
inline void write_time_space_csv(const std::string& path, const PlatoonResult& res) {
    auto out = csv::open_output(path);
    out << "t,p0";
    for (std::size_t f = 0; f < res.followers.size(); ++f) out << ",p" << f + 1;
    out << '\n';
    for (std::size_t k = 0; k < res.times.size(); ++k) {
        out << csv::format(res.times[k]) << ',' << csv::format(res.lead_p[k]);
        for (const auto& r : res.followers) out << ',' << csv::format(r.p[k]);
        out << '\n';
    }
}

/// Peak-to-peak excursion of a speed series after index `from`; for the lead
/// trapezoid this equals the maneuver amplitude.
inline double oscillation_amplitude(const std::vector<double>& v, std::size_t from = 0) {
    if (from >= v.size()) return 0.0;
    const auto [lo, hi] = std::minmax_element(v.begin() + static_cast<std::ptrdiff_t>(from), v.end());
    return *hi - *lo;
}

}  // namespace gpcf
