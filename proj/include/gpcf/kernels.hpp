#pragma once

// Covariance functions over time for the residual process and dense Gram matrices
// with a jittered Cholesky factor.

#include <array>
#include <cmath>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "gpcf/error.hpp"

namespace gpcf {

enum class KernelKind { gibbs, matern52, se, white };

inline std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::gibbs: return "gibbs";
        case KernelKind::matern52: return "matern52";
        case KernelKind::se: return "se";
        case KernelKind::white: return "white";
    }
    return "?";
}

inline KernelKind parse_kernel_kind(const std::string& s) {
    if (s == "gibbs") return KernelKind::gibbs;
    if (s == "matern52") return KernelKind::matern52;
    if (s == "se") return KernelKind::se;
    if (s == "white") return KernelKind::white;
    throw ArgumentError("unknown kernel '" + s + "' (expected gibbs, matern52, se or white)");
}

inline bool is_stationary(KernelKind k) noexcept { return k == KernelKind::se || k == KernelKind::matern52; }

struct StationaryParams {
    double lengthscale = 1.0;   // s
    double marginal_std = 1.0;  // m/s^2

    void validate() const {
        if (!(lengthscale > 0.0) || !std::isfinite(lengthscale) || !(marginal_std > 0.0) ||
            !std::isfinite(marginal_std))
            throw ArgumentError("stationary kernel parameters must be positive and finite");
    }
};

/// Per-step lengthscales and marginal standard deviations of the Gibbs kernel.
struct NonstationaryParams {
    Eigen::VectorXd lengthscales;
    Eigen::VectorXd marginal_stds;

    void validate(Eigen::Index n) const {
        if (lengthscales.size() != n || marginal_stds.size() != n)
            throw ArgumentError("Gibbs parameter arrays must match the number of time points");
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(lengthscales(i) > 0.0) || !std::isfinite(lengthscales(i)) || !(marginal_stds(i) >= 0.0) ||
                !std::isfinite(marginal_stds(i)))
                throw ArgumentError("Gibbs parameters must be positive and finite");
    }
};

inline double se_kernel(double t, double t2, const StationaryParams& p) {
    const double d = t - t2;
    return p.marginal_std * p.marginal_std * std::exp(-d * d / (2.0 * p.lengthscale * p.lengthscale));
}

inline double matern52_kernel(double t, double t2, const StationaryParams& p) {
    const double r = std::sqrt(5.0) * std::abs(t - t2) / p.lengthscale;
    return p.marginal_std * p.marginal_std * (1.0 + r + r * r / 3.0) * std::exp(-r);
}

/// Unit-variance part of the Gibbs kernel:
/// sqrt(2 l l' / (l^2 + l'^2)) * exp(-(t - t')^2 / (l^2 + l'^2)).
inline double gibbs_base(double t, double t2, double ell_t, double ell_t2) {
    const double denom = ell_t * ell_t + ell_t2 * ell_t2;
    const double d = t - t2;
    return std::sqrt(2.0 * ell_t * ell_t2 / denom) * std::exp(-d * d / denom);
}

inline double gibbs_kernel(double t, double t2, double ell_t, double ell_t2, double sigma_t, double sigma_t2) {
    return sigma_t * sigma_t2 * gibbs_base(t, t2, ell_t, ell_t2);
}

struct SEKernel {
    StationaryParams params;
};
struct Matern52Kernel {
    StationaryParams params;
};
struct GibbsKernel {
    NonstationaryParams params;
};
struct WhiteNoiseKernel {
    double variance = 1.0;  // (m/s^2)^2
};

using KernelSpec = std::variant<SEKernel, Matern52Kernel, GibbsKernel, WhiteNoiseKernel>;

/// Dense prior covariance K over `times` (no noise, no jitter). Upper triangle is
/// computed and mirrored so the result is exactly symmetric.
inline Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& times, const KernelSpec& spec) {
    const Eigen::Index n = times.size();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, SEKernel> || std::is_same_v<T, Matern52Kernel>) {
                k.params.validate();
                for (Eigen::Index i = 0; i < n; ++i)
                    for (Eigen::Index j = i; j < n; ++j) {
                        const double v = std::is_same_v<T, SEKernel> ? se_kernel(times(i), times(j), k.params)
                                                                     : matern52_kernel(times(i), times(j), k.params);
                        K(i, j) = v;
                        K(j, i) = v;
                    }
            } else if constexpr (std::is_same_v<T, GibbsKernel>) {
                k.params.validate(n);
                const auto& ell = k.params.lengthscales;
                const auto& sig = k.params.marginal_stds;
                // diag(sigma) K* diag(sigma)
                for (Eigen::Index i = 0; i < n; ++i) {
                    K(i, i) = sig(i) * sig(i);
                    for (Eigen::Index j = i + 1; j < n; ++j) {
                        const double v = sig(i) * gibbs_base(times(i), times(j), ell(i), ell(j)) * sig(j);
                        K(i, j) = v;
                        K(j, i) = v;
                    }
                }
            } else {
                if (!(k.variance >= 0.0) || !std::isfinite(k.variance))
                    throw ArgumentError("white-noise variance must be nonnegative");
                K.diagonal().setConstant(k.variance);
            }
        },
        spec);
    return K;
}

namespace detail {

/// In-place lower Cholesky. Fails when a pivot is not clearly positive relative to
/// the original diagonal entry, which also rejects exactly rank-deficient input.
inline bool cholesky_lower(const Eigen::MatrixXd& A, Eigen::MatrixXd& L) {
    const Eigen::Index n = A.rows();
    L.setZero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        double pivot = A(j, j);
        for (Eigen::Index k = 0; k < j; ++k) pivot -= L(j, k) * L(j, k);
        if (!std::isfinite(pivot) || !(pivot > 1e-14 * std::abs(A(j, j)))) return false;
        const double ljj = std::sqrt(pivot);
        L(j, j) = ljj;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = A(i, j);
            for (Eigen::Index k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
            L(i, j) = s / ljj;
        }
    }
    return true;
}

inline constexpr std::array<double, 5> kJitterLadder{0.0, 1e-10, 1e-8, 1e-6, 1e-4};

}  // namespace detail

/// K, the observation-noise variance, and chol(K + noise_var I + jitter I).
struct GramMatrix {
    Eigen::MatrixXd K;
    double noise_var = 0.0;
    Eigen::MatrixXd chol;
    double jitter = 0.0;

    Eigen::Index size() const noexcept { return K.rows(); }

    /// K + noise_var I + jitter I, the matrix actually factorized.
    Eigen::MatrixXd total() const {
        Eigen::MatrixXd S = K;
        S.diagonal().array() += noise_var + jitter;
        return S;
    }

    double log_det() const { return 2.0 * chol.diagonal().array().log().sum(); }

    template <typename Rhs>
    Eigen::MatrixXd solve(const Rhs& b) const {
        Eigen::MatrixXd y = chol.triangularView<Eigen::Lower>().solve(b);
        return chol.transpose().triangularView<Eigen::Upper>().solve(y);
    }

    Eigen::MatrixXd inverse() const { return solve(Eigen::MatrixXd::Identity(size(), size())); }
};

/// Factorizes K + noise_var I, escalating jitter in multiples of mean(diag(K) + noise_var).
inline GramMatrix factorize(Eigen::MatrixXd K, double noise_var) {
    if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) throw ArgumentError("noise variance must be nonnegative");
    GramMatrix g;
    g.K = std::move(K);
    g.noise_var = noise_var;
    const Eigen::Index n = g.K.rows();
    const double scale = n > 0 ? g.K.diagonal().mean() + noise_var : 0.0;
    Eigen::MatrixXd A;
    double tried = 0.0;
    for (double factor : detail::kJitterLadder) {
        tried = factor * scale;
        A = g.K;
        A.diagonal().array() += noise_var + tried;
        if (detail::cholesky_lower(A, g.chol)) {
            g.jitter = tried;
            return g;
        }
    }
    throw NumericalError("Cholesky factorization failed after jitter " + std::to_string(tried));
}

inline GramMatrix build_gram(const Eigen::VectorXd& times, const KernelSpec& spec, double noise_var) {
    for (Eigen::Index i = 1; i < times.size(); ++i)
        if (!(times(i) > times(i - 1))) throw ArgumentError("build_gram: times must be strictly increasing");
    return factorize(kernel_matrix(times, spec), noise_var);
}

}  // namespace gpcf
