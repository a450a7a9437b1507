#pragma once

// Synthetic car-following pairs with a known residual process, used as fixtures for
// parameter recovery and kernel comparisons.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/kernels.hpp"

namespace gpcf::synth {

enum class Residual {
    se,      // stationary squared-exponential residual
    regime,  // Gibbs residual whose lengthscale/std switch with the leader's speed
    none,
};

/// Linear mean rule a = alpha (s - s0 - tau v) + beta dv, plus the residual.
struct MeanRule {
    double alpha = 0.2;  // 1/s^2
    double s0 = 2.0;     // m
    double tau = 1.5;    // s
    double beta = 0.6;   // 1/s

    double accel(double s, double dv, double v) const { return alpha * (s - s0 - tau * v) + beta * dv; }
    double equilibrium_gap(double v) const { return s0 + tau * v; }
};

struct Config {
    int pairs = 100;
    double duration = 60.0;  // s per pair
    double dt = 0.2;         // s
    Residual residual = Residual::se;
    double se_lengthscale = 1.0;  // s
    double se_std = 0.5;          // m/s^2
    // regime residual: low leader speed -> short, large; high speed -> long, small
    double regime_threshold = 17.0;  // m/s
    double regime_width = 0.5;       // m/s, logistic blend width
    double low_lengthscale = 0.5, low_std = 0.8;
    double high_lengthscale = 2.5, high_std = 0.15;
    double noise_std = 0.0;   // white observation noise added to the recorded acceleration
    double speed_lo = 11.0, speed_hi = 23.0;  // leader base speed range, m/s
    double lead_length = 5.0;                 // m
    MeanRule rule;
    std::uint64_t seed = 1;
};

namespace detail {

/// One zero-mean GP sample path on `times` for the given kernel.
inline Eigen::VectorXd sample_path(const Eigen::VectorXd& times, const KernelSpec& spec, std::mt19937_64& rng) {
    const GramMatrix g = factorize(kernel_matrix(times, spec), 0.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd z(times.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    return g.chol * z;
}

inline double blend(double v, const Config& c) {
    return 1.0 / (1.0 + std::exp(-(v - c.regime_threshold) / c.regime_width));  // 0 low, 1 high
}

}  // namespace detail

/// Regime lengthscale and std for a leader speed.
inline std::pair<double, double> regime_params(double lead_speed, const Config& c) {
    const double w = detail::blend(lead_speed, c);
    return {c.low_lengthscale + w * (c.high_lengthscale - c.low_lengthscale), c.low_std + w * (c.high_std - c.low_std)};
}

inline Trajectory generate_pair(const Config& c, int index, std::mt19937_64& rng) {
    const auto N = static_cast<std::size_t>(std::llround(c.duration / c.dt)) + 1;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Leader: base speed plus a few slow sinusoids; the amplitude is large enough to
    // cross the regime threshold in many pairs.
    Trajectory tr;
    tr.pair_id = "S" + std::to_string(index);
    tr.dt = c.dt;
    tr.t_begin = 0.0;
    tr.lead_length = c.lead_length;
    const double base = c.speed_lo + (c.speed_hi - c.speed_lo) * unif(rng);
    double amp[3], period[3], phase[3];
    for (int j = 0; j < 3; ++j) {
        amp[j] = 0.5 + 2.0 * unif(rng);
        period[j] = 15.0 + 45.0 * unif(rng);
        phase[j] = 2.0 * std::numbers::pi * unif(rng);
    }
    auto lead_speed = [&](double t) {
        double v = base;
        for (int j = 0; j < 3; ++j) v += amp[j] * std::sin(2.0 * std::numbers::pi * t / period[j] + phase[j]);
        return std::max(v, 0.5);
    };

    Eigen::VectorXd times(static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < N; ++i) times(static_cast<Eigen::Index>(i)) = static_cast<double>(i) * c.dt;
    tr.lead_vel.resize(N);
    tr.lead_pos.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        tr.lead_vel[i] = lead_speed(times(static_cast<Eigen::Index>(i)));
        tr.lead_pos[i] = i == 0 ? 0.0 : tr.lead_pos[i - 1] + 0.5 * (tr.lead_vel[i - 1] + tr.lead_vel[i]) * c.dt;
    }

    Eigen::VectorXd delta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
    if (c.residual == Residual::se) {
        delta = detail::sample_path(times, SEKernel{{c.se_lengthscale, c.se_std}}, rng);
    } else if (c.residual == Residual::regime) {
        NonstationaryParams np;
        np.lengthscales.resize(static_cast<Eigen::Index>(N));
        np.marginal_stds.resize(static_cast<Eigen::Index>(N));
        for (std::size_t i = 0; i < N; ++i) {
            const auto [l, s] = regime_params(tr.lead_vel[i], c);
            np.lengthscales(static_cast<Eigen::Index>(i)) = l;
            np.marginal_stds(static_cast<Eigen::Index>(i)) = s;
        }
        delta = detail::sample_path(times, GibbsKernel{np}, rng);
    }

    // Follower: starts at equilibrium behind the leader and integrates the rule.
    std::normal_distribution<double> noise(0.0, 1.0);
    tr.foll_vel.resize(N);
    tr.foll_pos.resize(N);
    tr.foll_acc.resize(N);
    tr.foll_vel[0] = tr.lead_vel[0];
    tr.foll_pos[0] = tr.lead_pos[0] - c.lead_length - c.rule.equilibrium_gap(tr.lead_vel[0]);
    for (std::size_t i = 0; i < N; ++i) {
        const double s = tr.lead_pos[i] - tr.foll_pos[i] - c.lead_length;
        double a = c.rule.accel(s, tr.lead_vel[i] - tr.foll_vel[i], tr.foll_vel[i]) + delta(static_cast<Eigen::Index>(i));
        if (c.noise_std > 0.0) a += c.noise_std * noise(rng);
        if (i + 1 < N) {
            double v_next = tr.foll_vel[i] + a * c.dt;
            if (v_next < 0.0) {
                a = -tr.foll_vel[i] / c.dt;
                v_next = 0.0;
            }
            tr.foll_vel[i + 1] = v_next;
            tr.foll_pos[i + 1] = tr.foll_pos[i] + 0.5 * (tr.foll_vel[i] + v_next) * c.dt;
        }
        tr.foll_acc[i] = a;
    }
    tr.validate();
    return tr;
}

inline std::vector<Trajectory> generate(const Config& c) {
    if (c.pairs < 1 || !(c.duration > 0.0) || !(c.dt > 0.0)) throw ArgumentError("synthetic: invalid configuration");
    std::mt19937_64 rng(c.seed);
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(c.pairs));
    for (int i = 0; i < c.pairs; ++i) out.push_back(generate_pair(c, i, rng));
    return out;
}

}  // namespace gpcf::synth
