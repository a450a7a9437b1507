#pragma once

// Gaussian-process residual machinery: block negative log-likelihood and its gradient
// with respect to the network heads, the one-step predictive conditional used by the
// simulators, and the joint (a, v, p) likelihood with Kronecker covariance.

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "gpcf/error.hpp"
#include "gpcf/kernels.hpp"
#include "gpcf/meanmodel.hpp"

namespace gpcf {

/// Kernel spec for a block from per-step head outputs. Stationary kernels (and the
/// white-noise ablation) use the block means of the lengthscale and std.
inline KernelSpec kernel_spec_from_heads(KernelKind kind, const Eigen::VectorXd& ell, const Eigen::VectorXd& sigma) {
    switch (kind) {
        case KernelKind::gibbs: return GibbsKernel{{ell, sigma}};
        case KernelKind::se: return SEKernel{{ell.mean(), sigma.mean()}};
        case KernelKind::matern52: return Matern52Kernel{{ell.mean(), sigma.mean()}};
        case KernelKind::white: {
            const double s = sigma.mean();
            return WhiteNoiseKernel{s * s};
        }
    }
    throw ArgumentError("unknown kernel kind");
}

/// 1/2 log|K + s0^2 I| + 1/2 r' (K + s0^2 I)^-1 r, r = targets - means (2 pi constant omitted).
inline double nll(const Eigen::VectorXd& targets, const Eigen::VectorXd& means, const GramMatrix& gram) {
    if (targets.size() != means.size() || targets.size() != gram.size())
        throw ArgumentError("nll: targets, means and Gram matrix sizes differ");
    const Eigen::VectorXd r = targets - means;
    const Eigen::VectorXd z = gram.chol.triangularView<Eigen::Lower>().solve(r);
    return 0.5 * gram.log_det() + 0.5 * z.squaredNorm();
}

namespace detail {

/// Chains G = dL/dK through the kernel construction into dL/d ell and dL/d sigma
/// (written into grad.ell / grad.sigma).
inline void chain_kernel_gradient(const Eigen::MatrixXd& G, const Eigen::MatrixXd& K, const Eigen::VectorXd& ell,
                                  const Eigen::VectorXd& sig, const Eigen::VectorXd& times, KernelKind kind,
                                  HeadGradients& grad) {
    const Eigen::Index n = K.rows();
    switch (kind) {
        case KernelKind::gibbs: {
            for (Eigen::Index i = 0; i < n; ++i) {
                double ds = 0.0, dl = 0.0;
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double base = gibbs_base(times(i), times(j), ell(i), ell(j));
                    ds += G(i, j) * sig(j) * base;
                    if (j == i) continue;
                    const double A = ell(i) * ell(i) + ell(j) * ell(j);
                    const double d = times(i) - times(j);
                    // d log k*(i, j) / d ell_i
                    const double dlog = 0.5 / ell(i) - ell(i) / A + 2.0 * ell(i) * d * d / (A * A);
                    dl += G(i, j) * K(i, j) * dlog;
                }
                // K(i, j) depends on ell_i, sigma_i through row i and column i.
                grad.sigma(i) = 2.0 * ds;
                grad.ell(i) = 2.0 * dl;
            }
            break;
        }
        case KernelKind::se:
        case KernelKind::matern52: {
            const double l = ell.mean();
            const double s = sig.mean();
            double d_ell = 0.0;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double d = std::abs(times(i) - times(j));
                    double dk;  // d(unit-variance kernel)/d ell
                    if (kind == KernelKind::se) {
                        dk = std::exp(-d * d / (2.0 * l * l)) * d * d / (l * l * l);
                    } else {
                        const double rr = std::sqrt(5.0) * d / l;
                        dk = rr * rr / (3.0 * l) * (1.0 + rr) * std::exp(-rr);
                    }
                    d_ell += G(i, j) * s * s * dk;
                }
            const double d_sig = 2.0 / s * G.cwiseProduct(K).sum();
            // block means: each step contributes 1/n
            grad.ell.setConstant(d_ell / static_cast<double>(n));
            grad.sigma.setConstant(d_sig / static_cast<double>(n));
            break;
        }
        case KernelKind::white: {
            const double s = sig.mean();
            grad.ell.setZero();
            grad.sigma.setConstant(2.0 * s * G.trace() / static_cast<double>(n));
            break;
        }
    }
}

}  // namespace detail

struct NllWithGradient {
    double value = 0.0;
    HeadGradients grad;
    double jitter = 0.0;
};

/// NLL of one block and its gradient with respect to (a_nn, ell, sigma, sigma0).
/// The jitter chosen by the factorization is treated as a constant.
inline NllWithGradient nll_gradient_wrt_heads(const Eigen::VectorXd& targets, const HeadOutputs& heads,
                                              const Eigen::VectorXd& times, KernelKind kind) {
    const Eigen::Index n = targets.size();
    if (heads.length() != n || times.size() != n)
        throw ArgumentError("nll_gradient_wrt_heads: inconsistent block lengths");
    const double s0 = heads.sigma0;
    const GramMatrix gram = build_gram(times, kernel_spec_from_heads(kind, heads.ell, heads.sigma), s0 * s0);

    NllWithGradient out;
    out.value = nll(targets, heads.a_nn, gram);
    out.jitter = gram.jitter;
    out.grad = HeadGradients::zeros(n);

    const Eigen::VectorXd r = targets - heads.a_nn;
    const Eigen::VectorXd alpha = gram.solve(r);
    // G = dNLL/dK = 1/2 (Sigma^-1 - alpha alpha')
    const Eigen::MatrixXd G = 0.5 * (gram.inverse() - alpha * alpha.transpose());

    out.grad.a_nn = -alpha;
    out.grad.sigma0 = 2.0 * s0 * G.trace();

    detail::chain_kernel_gradient(G, gram.K, heads.ell, heads.sigma, times, kind, out.grad);
    return out;
}

struct PredictiveGaussian {
    double mean = 0.0;  // m/s^2
    double var = 0.0;   // (m/s^2)^2
};

/// Conditional of the next acceleration given the residual history.
///
/// `a_nn`, `ell`, `sigma` hold T + 1 entries: the T history steps followed by the
/// step being predicted. With `include_noise` the observation noise s0^2 is added to
/// the posterior variance (the law of a realized acceleration rather than of the
/// latent residual).
inline PredictiveGaussian predict_next(const Eigen::VectorXd& history_residuals, const Eigen::VectorXd& history_times,
                                       double next_time, const Eigen::VectorXd& a_nn, const Eigen::VectorXd& ell,
                                       const Eigen::VectorXd& sigma, KernelKind kind, double sigma0_sq,
                                       bool include_noise = true) {
    const Eigen::Index T = history_residuals.size();
    if (history_times.size() != T || a_nn.size() != T + 1 || ell.size() != T + 1 || sigma.size() != T + 1)
        throw ArgumentError("predict_next: history and head arrays have inconsistent lengths");
    Eigen::VectorXd times(T + 1);
    times.head(T) = history_times;
    times(T) = next_time;
    for (Eigen::Index i = 1; i < T; ++i)
        if (!(times(i) > times(i - 1))) throw ArgumentError("predict_next: history times must be strictly increasing");
    if (!std::isfinite(next_time)) throw ArgumentError("predict_next: next_time must be finite");

    const Eigen::MatrixXd Kfull = kernel_matrix(times, kernel_spec_from_heads(kind, ell, sigma));
    const double prior = Kfull(T, T);
    PredictiveGaussian out{a_nn(T), prior};
    if (T > 0) {
        const GramMatrix g = factorize(Kfull.topLeftCorner(T, T), sigma0_sq);
        const Eigen::VectorXd kstar = Kfull.row(T).head(T).transpose();
        const Eigen::VectorXd v = g.chol.triangularView<Eigen::Lower>().solve(kstar);
        const Eigen::VectorXd z = g.chol.triangularView<Eigen::Lower>().solve(history_residuals);
        out.mean += v.dot(z);
        out.var = prior - v.squaredNorm();
        if (out.var < 0.0) {
            if (out.var < -1e-10 * std::max(prior, 1e-300))
                throw NumericalError("negative predictive variance " + std::to_string(out.var));
            out.var = 0.0;
        }
    }
    if (include_noise) out.var += sigma0_sq;
    return out;
}

/// Observation-noise variances of acceleration, speed and position.
struct JointStateNoise {
    double var_a = 0.0, var_v = 0.0, var_p = 0.0;
};

/// Dense covariance (C C') (x) K + Sigma_obs (x) I_n over stacked (a, v, p), C = [1, dt, dt^2/2].
inline Eigen::MatrixXd joint_state_covariance(const Eigen::MatrixXd& K, const JointStateNoise& noise, double dt) {
    const Eigen::Index n = K.rows();
    const Eigen::Vector3d C(1.0, dt, 0.5 * dt * dt);
    const Eigen::Matrix3d CC = C * C.transpose();
    const std::array<double, 3> obs{noise.var_a, noise.var_v, noise.var_p};
    Eigen::MatrixXd S(3 * n, 3 * n);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            auto blk = S.block(a * n, b * n, n, n);
            blk = CC(a, b) * K;
            if (a == b) blk.diagonal().array() += obs[static_cast<std::size_t>(a)];
        }
    return S;
}

/// Negative log-likelihood (with the 2 pi constant) of stacked (a, v, p) observations.
/// The covariance is factorized without added jitter; a singular covariance is a
/// NumericalError.
inline double joint_state_nll(const Eigen::VectorXd& a, const Eigen::VectorXd& v, const Eigen::VectorXd& p,
                              const Eigen::VectorXd& a_nn, const Eigen::VectorXd& v_nn, const Eigen::VectorXd& p_nn,
                              const GramMatrix& gram, const JointStateNoise& noise, double dt) {
    const Eigen::Index n = gram.size();
    if (a.size() != n || v.size() != n || p.size() != n || a_nn.size() != n || v_nn.size() != n || p_nn.size() != n)
        throw ArgumentError("joint_state_nll: inconsistent lengths");
    if (noise.var_a < 0.0 || noise.var_v < 0.0 || noise.var_p < 0.0)
        throw ArgumentError("joint_state_nll: noise variances must be nonnegative");
    if (noise.var_a == 0.0 && noise.var_v == 0.0 && noise.var_p == 0.0)
        throw ArgumentError("joint_state_nll: noise variances must not all be zero");
    const Eigen::MatrixXd S = joint_state_covariance(gram.K, noise, dt);
    Eigen::MatrixXd L;
    if (!detail::cholesky_lower(S, L)) throw NumericalError("joint_state_nll: covariance is not positive definite");
    Eigen::VectorXd r(3 * n);
    r << a - a_nn, v - v_nn, p - p_nn;
    const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(r);
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    return 0.5 * (3.0 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

/// Joint (a, v, p) objective over a window and its gradient with respect to the heads.
///
/// Step k of the block pairs the acceleration a_k with the states it produces,
/// v_{k+1} and p_{k+1}; their means follow the kinematic update from the observed
/// state at k: v_k + a_nn_k dt and p_k + v_k dt + a_nn_k dt^2 / 2. The block therefore
/// spans the first T - 1 steps of the window. The acceleration noise variance is s0^2.
inline NllWithGradient joint_nll_gradient_wrt_heads(const CovariateWindow& w, const HeadOutputs& heads, KernelKind kind,
                                                    double var_v, double var_p, double dt) {
    const Eigen::Index T = w.length();
    if (T < 2 || heads.length() != T) throw ArgumentError("joint objective needs a window of at least 2 steps");
    const Eigen::Index n = T - 1;
    const Eigen::VectorXd ell = heads.ell.head(n), sig = heads.sigma.head(n), times = w.times.head(n);
    const Eigen::VectorXd a_nn = heads.a_nn.head(n);
    const double s0 = heads.sigma0;

    const Eigen::MatrixXd K = kernel_matrix(times, kernel_spec_from_heads(kind, ell, sig));
    const Eigen::MatrixXd S = joint_state_covariance(K, {s0 * s0, var_v, var_p}, dt);
    Eigen::MatrixXd L;
    if (!detail::cholesky_lower(S, L)) throw NumericalError("joint objective: covariance is not positive definite");

    const Eigen::VectorXd v = w.foll_vel.head(n), p = w.foll_pos.head(n);
    Eigen::VectorXd r(3 * n);
    r << w.targets.head(n) - a_nn, w.foll_vel.tail(n) - (v + dt * a_nn),
        w.foll_pos.tail(n) - (p + dt * v + 0.5 * dt * dt * a_nn);

    const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(r);
    NllWithGradient out;
    out.value = 0.5 * (3.0 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) +
                       2.0 * L.diagonal().array().log().sum() + z.squaredNorm());

    const Eigen::VectorXd alpha = L.transpose().triangularView<Eigen::Upper>().solve(z);
    Eigen::MatrixXd Sinv = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(3 * n, 3 * n));
    Sinv = L.transpose().triangularView<Eigen::Upper>().solve(Sinv);
    const Eigen::MatrixXd G3 = 0.5 * (Sinv - alpha * alpha.transpose());

    const Eigen::Vector3d C(1.0, dt, 0.5 * dt * dt);
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) G += C(a) * C(b) * G3.block(a * n, b * n, n, n);

    HeadGradients block = HeadGradients::zeros(n);
    block.a_nn = -(alpha.segment(0, n) + dt * alpha.segment(n, n) + 0.5 * dt * dt * alpha.segment(2 * n, n));
    block.sigma0 = 2.0 * s0 * G3.block(0, 0, n, n).trace();
    detail::chain_kernel_gradient(G, K, ell, sig, times, kind, block);

    out.grad = HeadGradients::zeros(T);
    out.grad.a_nn.head(n) = block.a_nn;
    out.grad.ell.head(n) = block.ell;
    out.grad.sigma.head(n) = block.sigma;
    out.grad.sigma0 = block.sigma0;
    return out;
}

}  // namespace gpcf
