#pragma once

// Recurrent mean model: an LSTM over standardized covariates (s, dv, v) followed by
// three heads (h -> SiLU(W1 h + b1) -> w2 . q + b2) producing the mean acceleration,
// the kernel lengthscale and the kernel marginal std (the last two through softplus).
// All trainable values live in one flat vector so the optimizer, weight decay and
// finite-difference checks can treat them uniformly.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gpcf/csv.hpp"
#include "gpcf/data.hpp"
#include "gpcf/error.hpp"
#include "gpcf/kernels.hpp"

namespace gpcf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

enum class Head : int { mean = 0, lengthscale = 1, scale = 2 };
inline constexpr std::array<const char*, 3> kHeadNames{"mu", "ell", "sigma"};

/// Named block of the flat parameter vector.
struct ParamSection {
    std::string name;
    Eigen::Index rows = 0, cols = 0, offset = 0;
    bool decay = true;  // participates in L2 weight decay

    Eigen::Index size() const noexcept { return rows * cols; }
};

class ModelParams {
public:
    // Section indices into layout().
    static constexpr int kWInput = 0, kWHidden = 1, kBias = 2, kHeadBase = 3, kPerHead = 4;
    static constexpr int kNoise = kHeadBase + 3 * kPerHead;

    ModelParams() = default;
    ModelParams(int hidden, int input_dim) : hidden_(hidden), input_dim_(input_dim) {
        if (hidden < 1 || input_dim < 1) throw ArgumentError("hidden size and input dimension must be at least 1");
        layout_ = make_layout(hidden, input_dim);
        theta_ = Eigen::VectorXd::Zero(layout_.back().offset + layout_.back().size());
        input_mean_ = Eigen::VectorXd::Zero(input_dim);
        input_std_ = Eigen::VectorXd::Ones(input_dim);
    }

    int hidden() const noexcept { return hidden_; }
    int input_dim() const noexcept { return input_dim_; }
    const std::vector<ParamSection>& layout() const noexcept { return layout_; }

    Eigen::VectorXd& values() noexcept { return theta_; }
    const Eigen::VectorXd& values() const noexcept { return theta_; }
    Eigen::VectorXd& input_mean() noexcept { return input_mean_; }
    const Eigen::VectorXd& input_mean() const noexcept { return input_mean_; }
    Eigen::VectorXd& input_std() noexcept { return input_std_; }
    const Eigen::VectorXd& input_std() const noexcept { return input_std_; }

    Eigen::Map<RowMatrix> block(int section) { return block_of(theta_, section); }
    Eigen::Map<const RowMatrix> block(int section) const { return block_of(theta_, section); }

    /// Views the same section inside any vector laid out like the parameters (e.g. a gradient).
    Eigen::Map<RowMatrix> block_of(Eigen::VectorXd& v, int section) const {
        const auto& s = layout_.at(section);
        return Eigen::Map<RowMatrix>(v.data() + s.offset, s.rows, s.cols);
    }
    Eigen::Map<const RowMatrix> block_of(const Eigen::VectorXd& v, int section) const {
        const auto& s = layout_.at(section);
        return Eigen::Map<const RowMatrix>(v.data() + s.offset, s.rows, s.cols);
    }

    static int head_section(Head h, int part) { return kHeadBase + static_cast<int>(h) * kPerHead + part; }

    double noise_raw() const { return theta_(layout_[kNoise].offset); }
    void set_noise_raw(double v) { theta_(layout_[kNoise].offset) = v; }
    double sigma0() const { return softplus(noise_raw()); }

    /// 1 for coordinates under L2 weight decay (weight matrices), 0 for biases and noise.
    Eigen::VectorXd decay_mask() const {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(theta_.size());
        for (const auto& s : layout_)
            if (s.decay) m.segment(s.offset, s.size()).setOnes();
        return m;
    }

    bool operator==(const ModelParams& o) const {
        return hidden_ == o.hidden_ && input_dim_ == o.input_dim_ && theta_ == o.theta_ &&
               input_mean_ == o.input_mean_ && input_std_ == o.input_std_;
    }

private:
    static std::vector<ParamSection> make_layout(int H, int D) {
        std::vector<ParamSection> l;
        Eigen::Index off = 0;
        auto add = [&](std::string name, Eigen::Index r, Eigen::Index c, bool decay) {
            l.push_back({std::move(name), r, c, off, decay});
            off += r * c;
        };
        add("lstm.w_input", 4 * H, D, true);
        add("lstm.w_hidden", 4 * H, H, true);
        add("lstm.bias", 4 * H, 1, false);
        for (const char* head : kHeadNames) {
            const std::string p = std::string("head_") + head;
            add(p + ".w1", H, H, true);
            add(p + ".b1", H, 1, false);
            add(p + ".w2", 1, H, true);
            add(p + ".b2", 1, 1, false);
        }
        add("noise_raw", 1, 1, false);
        return l;
    }

    int hidden_ = 0, input_dim_ = 0;
    std::vector<ParamSection> layout_;
    Eigen::VectorXd theta_;
    Eigen::VectorXd input_mean_, input_std_;
};

/// Uniform(+-1/sqrt(fan_in)) weights, zero biases, softplus(noise_raw) = 0.1 m/s^2.
inline ModelParams init_params(int hidden, int input_dim, std::uint64_t seed) {
    ModelParams p(hidden, input_dim);
    std::mt19937_64 rng(seed);
    auto fill = [&](int section, double fan_in) {
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> u(-bound, bound);
        auto b = p.block(section);
        for (Eigen::Index i = 0; i < b.rows(); ++i)
            for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = u(rng);
    };
    fill(ModelParams::kWInput, input_dim + hidden);
    fill(ModelParams::kWHidden, input_dim + hidden);
    for (Head h : {Head::mean, Head::lengthscale, Head::scale}) {
        fill(ModelParams::head_section(h, 0), hidden);
        fill(ModelParams::head_section(h, 2), hidden);
    }
    p.set_noise_raw(softplus_inverse(0.1));
    return p;
}

/// Sets the input standardization from the training trajectories (per-covariate mean/std).
inline void fit_standardization(ModelParams& p, const std::vector<Trajectory>& trajs) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
    double count = 0.0;
    for (const auto& tr : trajs)
        for (std::size_t i = 0; i < tr.size(); ++i) {
            const Eigen::Vector3d x(tr.gap(i), tr.rel_speed(i), tr.foll_vel[i]);
            sum += x;
            sq += x.cwiseProduct(x);
            count += 1.0;
        }
    if (count < 2.0) return;
    const Eigen::Vector3d mean = sum / count;
    Eigen::Vector3d var = sq / count - mean.cwiseProduct(mean);
    for (int k = 0; k < 3; ++k) var(k) = var(k) > 1e-12 ? var(k) : 1.0;
    p.input_mean() = mean;
    p.input_std() = var.cwiseSqrt();
}

struct RecurrentState {
    Eigen::VectorXd h, c;

    static RecurrentState zeros(int hidden) {
        return {Eigen::VectorXd::Zero(hidden), Eigen::VectorXd::Zero(hidden)};
    }
};

/// Per-step head outputs over a window.
struct HeadOutputs {
    Eigen::VectorXd a_nn;        // m/s^2
    Eigen::VectorXd ell;         // s, > 0
    Eigen::VectorXd sigma;       // m/s^2, > 0
    double sigma0 = 0.0;         // observation noise std, m/s^2
    Eigen::MatrixXd hidden_states;  // T x H

    Eigen::Index length() const noexcept { return a_nn.size(); }
};

/// Loss gradients with respect to the head outputs.
struct HeadGradients {
    Eigen::VectorXd a_nn, ell, sigma;
    double sigma0 = 0.0;

    static HeadGradients zeros(Eigen::Index T) {
        return {Eigen::VectorXd::Zero(T), Eigen::VectorXd::Zero(T), Eigen::VectorXd::Zero(T), 0.0};
    }
};

namespace detail {

struct HeadTape {
    Eigen::VectorXd u, s, q;  // pre-activation, sigmoid(u), SiLU(u)
    double y = 0.0;
};

struct StepTape {
    Eigen::VectorXd x, h_prev, c_prev, gi, gf, gg, go, c, tanh_c, h, head_in;
    std::array<HeadTape, 3> heads;
};

struct Tape {
    std::vector<StepTape> steps;
    std::optional<Eigen::MatrixXd> mask;  // T x H dropout multipliers
};

inline void run_heads(const ModelParams& p, StepTape& st) {
    for (int k = 0; k < 3; ++k) {
        const Head h = static_cast<Head>(k);
        auto w1 = p.block(ModelParams::head_section(h, 0));
        auto b1 = p.block(ModelParams::head_section(h, 1));
        auto w2 = p.block(ModelParams::head_section(h, 2));
        auto b2 = p.block(ModelParams::head_section(h, 3));
        auto& ht = st.heads[static_cast<std::size_t>(k)];
        ht.u = w1 * st.head_in + b1.col(0);
        ht.s = ht.u.unaryExpr([](double v) { return sigmoid(v); });
        ht.q = ht.u.cwiseProduct(ht.s);
        ht.y = w2.row(0).dot(ht.q) + b2(0, 0);
    }
}

inline void run_cell(const ModelParams& p, StepTape& st) {
    const Eigen::Index H = p.hidden();
    const Eigen::VectorXd z =
        p.block(ModelParams::kWInput) * st.x + p.block(ModelParams::kWHidden) * st.h_prev +
        p.block(ModelParams::kBias).col(0);
    auto sig = [](double v) { return sigmoid(v); };
    st.gi = z.segment(0, H).unaryExpr(sig);
    st.gf = z.segment(H, H).unaryExpr(sig);
    st.gg = z.segment(2 * H, H).array().tanh().matrix();
    st.go = z.segment(3 * H, H).unaryExpr(sig);
    st.c = st.gf.cwiseProduct(st.c_prev) + st.gi.cwiseProduct(st.gg);
    st.tanh_c = st.c.array().tanh().matrix();
    st.h = st.go.cwiseProduct(st.tanh_c);
}

inline Eigen::VectorXd standardize(const ModelParams& p, const Eigen::Ref<const Eigen::VectorXd>& raw) {
    return (raw - p.input_mean()).cwiseQuotient(p.input_std());
}

inline Tape forward_tape(const ModelParams& p, const Eigen::MatrixX3d& inputs, const RecurrentState& state0,
                         const std::optional<Eigen::MatrixXd>& mask) {
    const Eigen::Index T = inputs.rows();
    const int H = p.hidden();
    if (p.input_dim() != 3) throw ArgumentError("model input dimension must be 3 (s, dv, v)");
    if (mask && (mask->rows() != T || mask->cols() != H)) throw ArgumentError("dropout mask shape mismatch");
    Tape tape;
    tape.mask = mask;
    tape.steps.resize(static_cast<std::size_t>(T));
    Eigen::VectorXd h = state0.h.size() ? state0.h : Eigen::VectorXd::Zero(H);
    Eigen::VectorXd c = state0.c.size() ? state0.c : Eigen::VectorXd::Zero(H);
    if (h.size() != H || c.size() != H) throw ArgumentError("initial hidden state has wrong size");
    for (Eigen::Index t = 0; t < T; ++t) {
        auto& st = tape.steps[static_cast<std::size_t>(t)];
        st.x = standardize(p, inputs.row(t).transpose());
        st.h_prev = h;
        st.c_prev = c;
        run_cell(p, st);
        st.head_in = mask ? Eigen::VectorXd(st.h.cwiseProduct(mask->row(t).transpose())) : st.h;
        run_heads(p, st);
        if (!st.h.allFinite() || !std::isfinite(st.heads[0].y) || !std::isfinite(st.heads[1].y) ||
            !std::isfinite(st.heads[2].y))
            throw NumericalError("non-finite activation at step " + std::to_string(t));
        h = st.h;
        c = st.c;
    }
    return tape;
}

inline HeadOutputs outputs_from_tape(const ModelParams& p, const Tape& tape) {
    const auto T = static_cast<Eigen::Index>(tape.steps.size());
    HeadOutputs out;
    out.a_nn.resize(T);
    out.ell.resize(T);
    out.sigma.resize(T);
    out.hidden_states.resize(T, p.hidden());
    out.sigma0 = p.sigma0();
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto& st = tape.steps[static_cast<std::size_t>(t)];
        out.a_nn(t) = st.heads[0].y;
        out.ell(t) = softplus(st.heads[1].y);
        out.sigma(t) = softplus(st.heads[2].y);
        out.hidden_states.row(t) = st.h.transpose();
    }
    return out;
}

inline Eigen::VectorXd backward_tape(const ModelParams& p, const Tape& tape, const HeadGradients& g) {
    const auto T = static_cast<Eigen::Index>(tape.steps.size());
    if (g.a_nn.size() != T || g.ell.size() != T || g.sigma.size() != T)
        throw ArgumentError("backward: gradient lengths do not match the window");
    const Eigen::Index H = p.hidden();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.values().size());
    auto dWx = p.block_of(grad, ModelParams::kWInput);
    auto dWh = p.block_of(grad, ModelParams::kWHidden);
    auto db = p.block_of(grad, ModelParams::kBias);
    const auto Wh = p.block(ModelParams::kWHidden);

    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H), dc_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dz(4 * H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const auto& st = tape.steps[static_cast<std::size_t>(t)];
        const std::array<double, 3> dy{g.a_nn(t), g.ell(t) * sigmoid(st.heads[1].y),
                                       g.sigma(t) * sigmoid(st.heads[2].y)};
        Eigen::VectorXd dhead_in = Eigen::VectorXd::Zero(H);
        for (int k = 0; k < 3; ++k) {
            const double d = dy[static_cast<std::size_t>(k)];
            if (d == 0.0) continue;
            const Head head = static_cast<Head>(k);
            const auto& ht = st.heads[static_cast<std::size_t>(k)];
            auto w1 = p.block(ModelParams::head_section(head, 0));
            auto w2 = p.block(ModelParams::head_section(head, 2));
            p.block_of(grad, ModelParams::head_section(head, 2)).row(0) += d * ht.q.transpose();
            p.block_of(grad, ModelParams::head_section(head, 3))(0, 0) += d;
            // SiLU'(u) = s (1 + u (1 - s))
            const Eigen::VectorXd du =
                (d * w2.row(0).transpose()).cwiseProduct(
                    (ht.s.array() * (1.0 + ht.u.array() * (1.0 - ht.s.array()))).matrix());
            p.block_of(grad, ModelParams::head_section(head, 0)) += du * st.head_in.transpose();
            p.block_of(grad, ModelParams::head_section(head, 1)).col(0) += du;
            dhead_in += w1.transpose() * du;
        }
        Eigen::VectorXd dh = dh_next;
        dh += tape.mask ? Eigen::VectorXd(dhead_in.cwiseProduct(tape.mask->row(t).transpose())) : dhead_in;

        const Eigen::ArrayXd gi = st.gi.array(), gf = st.gf.array(), gg = st.gg.array(), go = st.go.array();
        const Eigen::ArrayXd tc = st.tanh_c.array();
        const Eigen::ArrayXd dc = dh.array() * go * (1.0 - tc * tc) + dc_next.array();
        dz.segment(0, H) = (dc * gg * gi * (1.0 - gi)).matrix();
        dz.segment(H, H) = (dc * st.c_prev.array() * gf * (1.0 - gf)).matrix();
        dz.segment(2 * H, H) = (dc * gi * (1.0 - gg * gg)).matrix();
        dz.segment(3 * H, H) = (dh.array() * tc * go * (1.0 - go)).matrix();

        dWx += dz * st.x.transpose();
        dWh += dz * st.h_prev.transpose();
        db.col(0) += dz;
        dh_next = Wh.transpose() * dz;
        dc_next = (dc * gf).matrix();
    }
    grad(p.layout()[ModelParams::kNoise].offset) += g.sigma0 * sigmoid(p.noise_raw());
    return grad;
}

}  // namespace detail

/// Dropout multipliers for a T-step window: each entry is 0 or 1/(1 - rate).
inline Eigen::MatrixXd dropout_mask(Eigen::Index T, int hidden, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - rate);
    Eigen::MatrixXd m(T, hidden);
    const double scale = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < T; ++i)
        for (Eigen::Index j = 0; j < hidden; ++j) m(i, j) = keep(rng) ? scale : 0.0;
    return m;
}

inline HeadOutputs forward(const ModelParams& p, const CovariateWindow& w, const RecurrentState& state0 = {},
                           const std::optional<Eigen::MatrixXd>& mask = std::nullopt) {
    return detail::outputs_from_tape(p, detail::forward_tape(p, w.inputs, state0, mask));
}

/// Exact backpropagation through time of `grads` (d loss / d head outputs) into a
/// vector laid out like `p.values()`.
inline Eigen::VectorXd backward(const ModelParams& p, const CovariateWindow& w, const RecurrentState& state0,
                                const HeadGradients& grads,
                                const std::optional<Eigen::MatrixXd>& mask = std::nullopt) {
    return detail::backward_tape(p, detail::forward_tape(p, w.inputs, state0, mask), grads);
}

/// One-step head evaluation used by the simulators.
struct StepOutput {
    double a_nn = 0.0, ell = 0.0, sigma = 0.0;
};

/// Advances `state` by one covariate vector (s, dv, v) and evaluates the heads.
inline StepOutput step(const ModelParams& p, RecurrentState& state, const Eigen::Vector3d& x) {
    detail::StepTape st;
    st.x = detail::standardize(p, x);
    st.h_prev = state.h.size() ? state.h : Eigen::VectorXd::Zero(p.hidden());
    st.c_prev = state.c.size() ? state.c : Eigen::VectorXd::Zero(p.hidden());
    detail::run_cell(p, st);
    st.head_in = st.h;
    detail::run_heads(p, st);
    if (!st.h.allFinite() || !std::isfinite(st.heads[0].y))
        throw NumericalError("non-finite activation during simulation step");
    state.h = st.h;
    state.c = st.c;
    return {st.heads[0].y, softplus(st.heads[1].y), softplus(st.heads[2].y)};
}

// ---------------------------------------------------------------------------
// Checkpoints: text, one named section per block, values in shortest round-trip
// decimal form so that save -> load is bit-exact.

struct Checkpoint {
    ModelParams params;
    KernelKind kernel = KernelKind::gibbs;
    double dt = 0.2;       // sampling interval the model was trained at, s
    int t_block = 50;      // GP block length used in training
};

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    auto out = csv::open_output(path);
    const auto& p = ck.params;
    out << "gpcf-checkpoint\n";
    out << "format_version " << kCheckpointVersion << '\n';
    out << "kernel " << to_string(ck.kernel) << '\n';
    out << "dt " << csv::format(ck.dt) << '\n';
    out << "t_block " << ck.t_block << '\n';
    out << "hidden " << p.hidden() << '\n';
    out << "input_dim " << p.input_dim() << '\n';
    auto write_rows = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, auto&& at) {
        out << "section " << name << ' ' << rows << ' ' << cols << '\n';
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) out << (j ? " " : "") << csv::format(at(i, j));
            out << '\n';
        }
    };
    write_rows("input_mean", 1, p.input_dim(), [&](Eigen::Index, Eigen::Index j) { return p.input_mean()(j); });
    write_rows("input_std", 1, p.input_dim(), [&](Eigen::Index, Eigen::Index j) { return p.input_std()(j); });
    for (std::size_t s = 0; s < p.layout().size(); ++s) {
        const auto blk = p.block(static_cast<int>(s));
        write_rows(p.layout()[s].name, blk.rows(), blk.cols(),
                   [&](Eigen::Index i, Eigen::Index j) { return blk(i, j); });
    }
    out << "end\n";
    if (!out) throw ArgumentError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open checkpoint '" + path + "'");
    auto fail = [&](const std::string& msg) -> FormatError { return FormatError("checkpoint '" + path + "': " + msg); };
    std::string tok;
    if (!(in >> tok) || tok != "gpcf-checkpoint") throw fail("bad magic");
    auto expect_key = [&](const char* key) {
        if (!(in >> tok) || tok != key) throw fail(std::string("expected '") + key + "'");
    };
    int version = 0, hidden = 0, input_dim = 0;
    std::string kernel, dt_text;
    Checkpoint ck;
    expect_key("format_version");
    in >> version;
    if (version != kCheckpointVersion) throw fail("unsupported format version " + std::to_string(version));
    expect_key("kernel");
    in >> kernel;
    ck.kernel = parse_kernel_kind(kernel);
    expect_key("dt");
    in >> dt_text;
    ck.dt = csv::parse_double(dt_text, path);
    expect_key("t_block");
    in >> ck.t_block;
    expect_key("hidden");
    in >> hidden;
    expect_key("input_dim");
    in >> input_dim;
    if (!in) throw fail("truncated header");
    ck.params = ModelParams(hidden, input_dim);
    auto read_section = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, auto&& set) {
        std::string kw, got;
        Eigen::Index r = 0, c = 0;
        if (!(in >> kw >> got >> r >> c) || kw != "section" || got != name || r != rows || c != cols)
            throw fail("expected section '" + name + "' of shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                std::string v;
                if (!(in >> v)) throw fail("truncated section '" + name + "'");
                set(i, j, csv::parse_double(v, path + " section " + name));
            }
    };
    auto& p = ck.params;
    read_section("input_mean", 1, input_dim, [&](Eigen::Index, Eigen::Index j, double v) { p.input_mean()(j) = v; });
    read_section("input_std", 1, input_dim, [&](Eigen::Index, Eigen::Index j, double v) { p.input_std()(j) = v; });
    for (std::size_t s = 0; s < p.layout().size(); ++s) {
        auto blk = p.block(static_cast<int>(s));
        read_section(p.layout()[s].name, blk.rows(), blk.cols(),
                     [&](Eigen::Index i, Eigen::Index j, double v) { blk(i, j) = v; });
    }
    expect_key("end");
    return ck;
}

}  // namespace gpcf
