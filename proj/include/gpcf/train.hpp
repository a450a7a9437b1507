#pragma once

// Mini-batch training of the mean model and kernel heads by Adam on the block NLL.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/gp.hpp"
#include "gpcf/kernels.hpp"
#include "gpcf/meanmodel.hpp"
#include "gpcf/parallel.hpp"

namespace gpcf {

enum class Objective { acc, joint };

inline std::string to_string(Objective o) { return o == Objective::acc ? "acc" : "joint"; }

struct TrainConfig {
    KernelKind kernel = KernelKind::gibbs;
    int H = 64;
    int T_block = 50;             // GP block length, steps
    int segments_per_step = 256;  // windows per optimizer step
    double lr = 1e-3;
    double weight_decay = 1e-3;
    double clip_norm = 1.0;
    int epochs = 500;
    double dropout = 0.1;
    std::uint64_t seed = 0;
    Objective objective = Objective::acc;
    int T_ctx = 50;               // simulation conditioning window, steps
    int patience = 50;            // early stopping, epochs without validation improvement
    int stride = 0;               // window stride; 0 means T_block (non-overlapping)
    double joint_var_v = 0.0025;  // (m/s)^2, speed observation noise for objective = joint
    double joint_var_p = 0.01;    // m^2, position observation noise for objective = joint

    int window_stride() const noexcept { return stride > 0 ? stride : T_block; }

    void validate() const {
        if (H < 1 || T_block < 2 || segments_per_step < 1 || epochs < 1 || T_ctx < 1 || patience < 1 || stride < 0)
            throw ArgumentError("config: counts must be at least 1 (T_block at least 2)");
        if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(clip_norm > 0.0))
            throw ArgumentError("config: lr and weight_decay must be nonnegative, clip_norm positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("config: dropout must lie in [0, 1)");
        if (!(joint_var_v > 0.0) || !(joint_var_p > 0.0))
            throw ArgumentError("config: joint_var_v and joint_var_p must be positive");
    }
};

/// Parses flat `key = value` text. `kernel` is required; every other key defaults to the
/// values in TrainConfig. Unknown keys and duplicates are errors. `#` starts a comment.
inline TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto trimmed = csv::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string_view::npos)
            throw ArgumentError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key(csv::trim(trimmed.substr(0, eq)));
        const std::string value(csv::trim(trimmed.substr(eq + 1)));
        if (!kv.emplace(key, value).second) throw ArgumentError("config: duplicate key '" + key + "'");
    }

    auto as_int = [](const std::string& k, const std::string& v) {
        std::size_t pos = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &pos);
        } catch (...) {
            pos = 0;
        }
        if (pos != v.size() || v.empty()) throw ArgumentError("config: '" + k + "' must be an integer");
        return x;
    };
    auto as_double = [](const std::string& k, const std::string& v) {
        try {
            return csv::parse_double(v, "config key '" + k + "'");
        } catch (const FormatError& e) {
            throw ArgumentError(e.what());
        }
    };

    if (!kv.count("kernel")) throw ArgumentError("config: missing required key 'kernel'");
    for (const auto& [k, v] : kv) {
        if (k == "kernel") cfg.kernel = parse_kernel_kind(v);
        else if (k == "H") cfg.H = static_cast<int>(as_int(k, v));
        else if (k == "T_block") cfg.T_block = static_cast<int>(as_int(k, v));
        else if (k == "segments_per_step") cfg.segments_per_step = static_cast<int>(as_int(k, v));
        else if (k == "lr") cfg.lr = as_double(k, v);
        else if (k == "weight_decay") cfg.weight_decay = as_double(k, v);
        else if (k == "clip_norm") cfg.clip_norm = as_double(k, v);
        else if (k == "epochs") cfg.epochs = static_cast<int>(as_int(k, v));
        else if (k == "dropout") cfg.dropout = as_double(k, v);
        else if (k == "seed") {
            const auto s = as_int(k, v);
            if (s < 0) throw ArgumentError("config: 'seed' must be nonnegative");
            cfg.seed = static_cast<std::uint64_t>(s);
        } else if (k == "objective") {
            if (v == "acc") cfg.objective = Objective::acc;
            else if (v == "joint") cfg.objective = Objective::joint;
            else throw ArgumentError("config: objective must be 'acc' or 'joint'");
        } else if (k == "T_ctx") cfg.T_ctx = static_cast<int>(as_int(k, v));
        else if (k == "patience") cfg.patience = static_cast<int>(as_int(k, v));
        else if (k == "stride") cfg.stride = static_cast<int>(as_int(k, v));
        else if (k == "joint_var_v") cfg.joint_var_v = as_double(k, v);
        else if (k == "joint_var_p") cfg.joint_var_p = as_double(k, v);
        else throw ArgumentError("config: unknown key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline std::string config_to_text(const TrainConfig& c) {
    std::ostringstream o;
    o << "kernel=" << to_string(c.kernel) << '\n'
      << "H=" << c.H << '\n'
      << "T_block=" << c.T_block << '\n'
      << "segments_per_step=" << c.segments_per_step << '\n'
      << "lr=" << csv::format(c.lr) << '\n'
      << "weight_decay=" << csv::format(c.weight_decay) << '\n'
      << "clip_norm=" << csv::format(c.clip_norm) << '\n'
      << "epochs=" << c.epochs << '\n'
      << "dropout=" << csv::format(c.dropout) << '\n'
      << "seed=" << c.seed << '\n'
      << "objective=" << to_string(c.objective) << '\n'
      << "T_ctx=" << c.T_ctx << '\n'
      << "patience=" << c.patience << '\n'
      << "stride=" << c.stride << '\n'
      << "joint_var_v=" << csv::format(c.joint_var_v) << '\n'
      << "joint_var_p=" << csv::format(c.joint_var_p) << '\n';
    return o.str();
}

/// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
class Adam {
public:
    explicit Adam(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        theta.array() -= lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
    }

    long steps() const noexcept { return t_; }
    const Eigen::VectorXd& first_moment() const noexcept { return m_; }

private:
    Eigen::VectorXd m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

/// Scales `grad` so its Euclidean norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_global_norm(Eigen::VectorXd& grad, double max_norm) {
    const double norm = grad.norm();
    if (norm > max_norm) grad *= max_norm / norm;
    return norm;
}

struct WindowLoss {
    double value = 0.0;
    Eigen::VectorXd grad;
};

/// Data loss of one window under the configured objective and its parameter gradient.
inline WindowLoss window_loss(const ModelParams& p, const CovariateWindow& w, const TrainConfig& cfg,
                              const std::optional<Eigen::MatrixXd>& mask = std::nullopt, bool want_grad = true) {
    const auto tape = detail::forward_tape(p, w.inputs, {}, mask);
    const HeadOutputs heads = detail::outputs_from_tape(p, tape);
    NllWithGradient g;
    if (cfg.objective == Objective::acc) {
        g = nll_gradient_wrt_heads(w.targets, heads, w.times, cfg.kernel);
    } else {
        const double dt = w.times(1) - w.times(0);
        g = joint_nll_gradient_wrt_heads(w, heads, cfg.kernel, cfg.joint_var_v, cfg.joint_var_p, dt);
    }
    WindowLoss out;
    out.value = g.value;
    if (want_grad) out.grad = detail::backward_tape(p, tape, g.grad);
    return out;
}

inline std::vector<CovariateWindow> collect_windows(const std::vector<Trajectory>& trajs, const TrainConfig& cfg) {
    std::vector<CovariateWindow> out;
    for (const auto& tr : trajs) {
        if (tr.size() < static_cast<std::size_t>(cfg.T_block))
            throw ArgumentError("pair '" + tr.pair_id + "' is shorter than T_block = " + std::to_string(cfg.T_block));
        auto ws = make_windows(tr, static_cast<std::size_t>(cfg.T_block), static_cast<std::size_t>(cfg.window_stride()));
        for (auto& w : ws) out.push_back(std::move(w));
    }
    return out;
}

/// Mean per-step NLL over non-overlapping blocks, dropout off.
inline double evaluate_nll(const ModelParams& p, const std::vector<Trajectory>& trajs, const TrainConfig& cfg) {
    const auto windows = collect_windows(trajs, cfg);
    if (windows.empty()) throw ArgumentError("evaluate_nll: no windows");
    std::vector<double> losses(windows.size());
    parallel_for(windows.size(), [&](std::size_t i) {
        losses[i] = window_loss(p, windows[i], cfg, std::nullopt, false).value;
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(windows.size()) / static_cast<double>(cfg.T_block);
}

struct TrainReport {
    std::vector<double> train_nll, val_nll;  // per epoch, per step
    int best_epoch = -1;
    double wall_seconds = 0.0;
    std::string checkpoint_path;
};

struct TrainResult {
    ModelParams params;  // best-validation parameters
    TrainReport report;
};

namespace detail {
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

/// Adds the L2 penalty (weight_decay / 2) |theta_w|^2 on weight matrices to `grad`;
/// returns the penalty value.
inline double add_weight_decay(const ModelParams& p, const Eigen::VectorXd& mask, double weight_decay,
                               Eigen::VectorXd& grad) {
    if (weight_decay == 0.0) return 0.0;
    const Eigen::VectorXd w = p.values().cwiseProduct(mask);
    grad += weight_decay * w;
    return 0.5 * weight_decay * w.squaredNorm();
}

/// Trains from `init` (or a seeded initialization with input standardization fitted to
/// the training pairs). Returns the parameters of the best validation epoch.
inline TrainResult train(const DatasetSplit& split, const TrainConfig& cfg,
                         const std::optional<ModelParams>& init = std::nullopt) {
    cfg.validate();
    if (split.train.empty()) throw ArgumentError("train: the training split is empty");
    const auto t0 = std::chrono::steady_clock::now();

    ModelParams params = init ? *init : init_params(cfg.H, 3, cfg.seed);
    if (!init) fit_standardization(params, split.train);
    const Eigen::VectorXd decay = params.decay_mask();

    const auto windows = collect_windows(split.train, cfg);
    if (windows.empty()) throw ArgumentError("train: no training windows");
    const bool has_val = !split.val.empty();

    Adam adam(params.values().size());
    TrainResult result;
    result.params = params;
    double best = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto batch = static_cast<std::size_t>(cfg.segments_per_step);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 shuffle_rng(detail::mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double epoch_loss = 0.0;
        int step_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += batch, ++step_index) {
            const std::size_t end = std::min(order.size(), begin + batch);
            std::vector<WindowLoss> parts(end - begin);
            parallel_for(parts.size(), [&](std::size_t k) {
                const std::size_t wi = order[begin + k];
                std::optional<Eigen::MatrixXd> mask;
                if (cfg.dropout > 0.0) {
                    const auto seed = detail::mix_seed(detail::mix_seed(cfg.seed, 1000003ULL + epoch), wi);
                    mask = dropout_mask(windows[wi].length(), params.hidden(), cfg.dropout, seed);
                }
                parts[k] = window_loss(params, windows[wi], cfg, mask);
            });
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.values().size());
            double loss = 0.0;
            for (const auto& part : parts) {
                loss += part.value;
                grad += part.grad;
            }
            epoch_loss += loss;
            const double inv = 1.0 / static_cast<double>(parts.size());
            grad *= inv;
            loss *= inv;
            loss += add_weight_decay(params, decay, cfg.weight_decay, grad);
            if (!std::isfinite(loss) || !grad.allFinite())
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(step_index));
            clip_global_norm(grad, cfg.clip_norm);
            adam.step(params.values(), grad, cfg.lr);
        }
        const double train_nll = epoch_loss / static_cast<double>(windows.size()) / static_cast<double>(cfg.T_block);
        const double val_nll = has_val ? evaluate_nll(params, split.val, cfg) : train_nll;
        result.report.train_nll.push_back(train_nll);
        result.report.val_nll.push_back(val_nll);
        if (!std::isfinite(val_nll)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        if (val_nll < best) {
            best = val_nll;
            result.report.best_epoch = epoch;
            result.params = params;
        } else if (epoch - result.report.best_epoch >= cfg.patience) {
            break;
        }
    }
    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

inline void write_losses_csv(const std::string& path, const TrainReport& r) {
    auto out = csv::open_output(path);
    out << "epoch,train_nll,val_nll\n";
    for (std::size_t e = 0; e < r.train_nll.size(); ++e)
        out << e << ',' << csv::format(r.train_nll[e]) << ',' << csv::format(r.val_nll[e]) << '\n';
}

struct HeadSummary {
    double mean_ell = 0.0, mean_sigma = 0.0, mean_a = 0.0;
    std::size_t steps = 0;
};

/// Averages the lengthscale / std head outputs over all blocks of the given pairs.
inline HeadSummary summarize_heads(const ModelParams& p, const std::vector<Trajectory>& trajs, const TrainConfig& cfg) {
    HeadSummary s;
    for (const auto& w : collect_windows(trajs, cfg)) {
        const auto h = forward(p, w);
        s.mean_ell += h.ell.sum();
        s.mean_sigma += h.sigma.sum();
        s.mean_a += h.a_nn.sum();
        s.steps += static_cast<std::size_t>(h.length());
    }
    if (s.steps) {
        s.mean_ell /= static_cast<double>(s.steps);
        s.mean_sigma /= static_cast<double>(s.steps);
        s.mean_a /= static_cast<double>(s.steps);
    }
    return s;
}

}  // namespace gpcf
