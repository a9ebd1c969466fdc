#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "plmcmc/matrix.hpp"
#include "plmcmc/rng.hpp"

namespace plmcmc {

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Priors
// ---------------------------------------------------------------------------

enum class PriorKind { Normal, Logistic };

inline double softplus(double t) {
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

/// Log-density of one latent coordinate under the prior.
/// Logistic uses the overflow-safe form -z - 2*softplus(-z).
inline double prior_logpdf1(PriorKind kind, double z) {
    if (kind == PriorKind::Normal)
        return -0.5 * z * z - 0.91893853320467274178032973640562;  // log sqrt(2 pi)
    return -z - 2.0 * softplus(-z);
}

inline double prior_logpdf(PriorKind kind, std::span<const double> z) {
    double s = 0.0;
    for (double v : z) s += prior_logpdf1(kind, v);
    return s;
}

inline double prior_std(PriorKind kind) {
    return kind == PriorKind::Normal ? 1.0 : 1.8137993642342178;  // pi/sqrt(3)
}

inline double prior_draw(PriorKind kind, Rng& rng) {
    return kind == PriorKind::Normal ? rng.normal() : rng.logistic();
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Fully connected net: rectifier on hidden layers, identity on the output.
/// weights[l] is row-major [sizes[l+1] x sizes[l]].
struct MlpParams {
    std::vector<int> sizes;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    int depth() const { return static_cast<int>(sizes.size()) - 1; }

    void validate() const {
        if (sizes.size() < 2) throw std::invalid_argument("mlp: needs at least two sizes");
        if (weights.size() != static_cast<size_t>(depth()) || biases.size() != weights.size())
            throw std::invalid_argument("mlp: layer count mismatch");
        for (int l = 0; l < depth(); ++l) {
            if (static_cast<int>(weights[l].size()) != sizes[l] * sizes[l + 1] ||
                static_cast<int>(biases[l].size()) != sizes[l + 1])
                throw std::invalid_argument("mlp: parameter shape mismatch at layer " + std::to_string(l));
            if (!all_finite(weights[l]) || !all_finite(biases[l]))
                throw std::invalid_argument("mlp: non-finite parameters at layer " + std::to_string(l));
        }
    }
};

/// y_B = x_B + net(x_A); exactly invertible by subtraction. `swap` flips which
/// partition half feeds the net, alternating across the stack so both halves
/// get updated.
struct CouplingLayer {
    bool swap = false;
    MlpParams net;
};

/// Elementwise y_i = x_i * exp(log_scale_i); log-det = sum(log_scale).
struct ScalingLayer {
    std::vector<double> log_scale;

    double logdet() const { return std::accumulate(log_scale.begin(), log_scale.end(), 0.0); }
};

// ---------------------------------------------------------------------------
// FlowModel
// ---------------------------------------------------------------------------

struct FlowSpec {
    int dim = 0;
    int levels = 4;
    int depth = 5;          // coupling layers = levels * depth
    int hidden = 120;
    int hidden_layers = 1;
    PriorKind prior = PriorKind::Normal;
};

/// NICE-variant flow: additive coupling layers over one random partition fixed
/// at initialization, terminated by a diagonal scaling layer.
struct FlowModel {
    int dim = 0;
    PriorKind prior = PriorKind::Normal;
    std::uint64_t partition_seed = 0;
    std::vector<std::uint8_t> in_a;  // 1 if the coordinate belongs to half A
    std::vector<CouplingLayer> couplings;
    ScalingLayer scaling;

    // Derived index lists, rebuilt by finalize().
    std::vector<int> idx_a, idx_b;

    void finalize() {
        idx_a.clear();
        idx_b.clear();
        for (int i = 0; i < dim; ++i) (in_a[i] ? idx_a : idx_b).push_back(i);
    }

    const std::vector<int>& net_in(const CouplingLayer& c) const { return c.swap ? idx_b : idx_a; }
    const std::vector<int>& net_out(const CouplingLayer& c) const { return c.swap ? idx_a : idx_b; }

    void validate() const {
        if (dim < 1) throw std::invalid_argument("flow: dim must be >= 1");
        if (dim < 2 && !couplings.empty())
            throw std::invalid_argument("flow: couplings require dim >= 2");
        if (static_cast<int>(in_a.size()) != dim || static_cast<int>(scaling.log_scale.size()) != dim)
            throw std::invalid_argument("flow: field sizes inconsistent with dim");
        int bits = 0;
        for (auto b : in_a) bits += b ? 1 : 0;
        if (bits != dim / 2)
            throw std::invalid_argument("flow: partition must have dim/2 set bits");
        if (!all_finite(scaling.log_scale))
            throw std::invalid_argument("flow: non-finite log_scale");
        for (const auto& c : couplings) {
            c.net.validate();
            int in = c.swap ? dim - bits : bits;
            int out = dim - in;
            if (c.net.input_size() != in || c.net.output_size() != out)
                throw std::invalid_argument("flow: coupling net shape inconsistent with partition");
        }
    }
};

inline FlowModel make_flow(const FlowSpec& spec, std::uint64_t partition_seed, Rng& init_rng) {
    if (spec.dim < 2) throw std::invalid_argument("make_flow: dim must be >= 2");
    if (spec.hidden < 1 || spec.hidden_layers < 0 || spec.levels < 0 || spec.depth < 0)
        throw std::invalid_argument("make_flow: bad architecture sizes");

    FlowModel m;
    m.dim = spec.dim;
    m.prior = spec.prior;
    m.partition_seed = partition_seed;

    // Random partition, fixed for all layers of the flow.
    std::vector<int> perm(spec.dim);
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(stream_seed(partition_seed));
    for (int i = spec.dim - 1; i > 0; --i)
        std::swap(perm[i], perm[prng.uniform_int(i + 1)]);
    m.in_a.assign(spec.dim, 0);
    for (int i = 0; i < spec.dim / 2; ++i) m.in_a[perm[i]] = 1;
    m.finalize();

    const int n_a = spec.dim / 2;
    const int n_b = spec.dim - n_a;
    const int n_couplings = spec.levels * spec.depth;
    for (int k = 0; k < n_couplings; ++k) {
        CouplingLayer c;
        c.swap = (k % 2) == 1;
        const int in = c.swap ? n_b : n_a;
        const int out = spec.dim - in;
        c.net.sizes.push_back(in);
        for (int h = 0; h < spec.hidden_layers; ++h) c.net.sizes.push_back(spec.hidden);
        c.net.sizes.push_back(out);
        for (int l = 0; l < c.net.depth(); ++l) {
            const int fan_in = c.net.sizes[l], fan_out = c.net.sizes[l + 1];
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            std::vector<double> w(static_cast<size_t>(fan_in) * fan_out);
            for (double& v : w) v = bound * (2.0 * init_rng.uniform01() - 1.0);
            c.net.weights.push_back(std::move(w));
            c.net.biases.emplace_back(fan_out, 0.0);
        }
        m.couplings.push_back(std::move(c));
    }
    m.scaling.log_scale.assign(spec.dim, 0.0);
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Scratch buffers reused across flow evaluations.
struct FlowWorkspace {
    Mat half_in, ping, pong;
};

namespace detail {

inline void mlp_apply(const MlpParams& net, const Mat& x, Mat& out, Mat& ping, Mat& pong) {
    const Mat* cur = &x;
    for (int l = 0; l < net.depth(); ++l) {
        Mat& dst = (l == net.depth() - 1) ? out : ((l % 2) == 0 ? ping : pong);
        linear_forward(*cur, net.weights[l], net.biases[l], dst);
        if (l != net.depth() - 1) relu_inplace(dst);
        cur = &dst;
    }
}

inline void gather_cols(const Mat& x, const std::vector<int>& idx, Mat& out) {
    out.resize(x.rows, static_cast<int>(idx.size()));
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* o = out.row(r);
        for (size_t j = 0; j < idx.size(); ++j) o[j] = xr[idx[j]];
    }
}

inline void check_input(const FlowModel& m, const Mat& x, const char* op) {
    if (x.cols != m.dim)
        throw std::invalid_argument(std::string(op) + ": input width " + std::to_string(x.cols) +
                                    " != model dim " + std::to_string(m.dim));
    if (!all_finite(x.a))
        throw std::domain_error(std::string(op) + ": non-finite input rejected");
}

}  // namespace detail

/// x = f(xi) for a batch of latent rows. Returns log|det df/dxi| (identical
/// for every row: couplings are volume-preserving).
inline double forward_batch(const FlowModel& m, const Mat& xi, Mat& x, FlowWorkspace& ws) {
    detail::check_input(m, xi, "forward");
    x = xi;
    Mat shift;
    for (const auto& c : m.couplings) {
        detail::gather_cols(x, m.net_in(c), ws.half_in);
        detail::mlp_apply(c.net, ws.half_in, shift, ws.ping, ws.pong);
        const auto& out_idx = m.net_out(c);
        for (int r = 0; r < x.rows; ++r) {
            double* xr = x.row(r);
            const double* s = shift.row(r);
            for (size_t j = 0; j < out_idx.size(); ++j) xr[out_idx[j]] += s[j];
        }
    }
    std::vector<double> es(m.dim);
    for (int i = 0; i < m.dim; ++i) es[i] = std::exp(m.scaling.log_scale[i]);
    for (int r = 0; r < x.rows; ++r) {
        double* xr = x.row(r);
        for (int i = 0; i < m.dim; ++i) xr[i] *= es[i];
    }
    return m.scaling.logdet();
}

/// xi = f^{-1}(x); returns log|det df^{-1}/dx| = -logdet(forward).
inline double inverse_batch(const FlowModel& m, const Mat& x, Mat& xi, FlowWorkspace& ws) {
    detail::check_input(m, x, "inverse");
    xi = x;
    std::vector<double> es(m.dim);
    for (int i = 0; i < m.dim; ++i) es[i] = std::exp(-m.scaling.log_scale[i]);
    for (int r = 0; r < xi.rows; ++r) {
        double* xr = xi.row(r);
        for (int i = 0; i < m.dim; ++i) xr[i] *= es[i];
    }
    Mat shift;
    for (auto it = m.couplings.rbegin(); it != m.couplings.rend(); ++it) {
        detail::gather_cols(xi, m.net_in(*it), ws.half_in);
        detail::mlp_apply(it->net, ws.half_in, shift, ws.ping, ws.pong);
        const auto& out_idx = m.net_out(*it);
        for (int r = 0; r < xi.rows; ++r) {
            double* xr = xi.row(r);
            const double* s = shift.row(r);
            for (size_t j = 0; j < out_idx.size(); ++j) xr[out_idx[j]] -= s[j];
        }
    }
    return -m.scaling.logdet();
}

/// log p(x) for each row: prior log-density of f^{-1}(x) plus the inverse
/// log-det. Result is saturated to the lowest finite double rather than -inf
/// so the density stays positive for any finite input.
inline void log_prob_batch(const FlowModel& m, const Mat& x, std::span<double> out,
                           FlowWorkspace& ws, Mat& xi_buf) {
    const double logdet_inv = inverse_batch(m, x, xi_buf, ws);
    for (int r = 0; r < x.rows; ++r) {
        double lp = prior_logpdf(m.prior, xi_buf.row_span(r)) + logdet_inv;
        if (std::isinf(lp) && lp < 0.0) lp = std::numeric_limits<double>::lowest();
        out[r] = lp;
    }
}

// Single-row conveniences; these route through the batch kernels so both
// paths are bit-identical.

struct FlowEval {
    std::vector<double> value;
    double logdet = 0.0;
};

namespace detail {
inline Mat one_row(std::span<const double> v) {
    Mat m(1, static_cast<int>(v.size()));
    std::copy(v.begin(), v.end(), m.a.begin());
    return m;
}
}  // namespace detail

inline FlowEval forward(const FlowModel& m, std::span<const double> xi) {
    Mat in = detail::one_row(xi);
    FlowWorkspace ws;
    Mat out;
    FlowEval e;
    e.logdet = forward_batch(m, in, out, ws);
    e.value.assign(out.a.begin(), out.a.end());
    return e;
}

inline FlowEval inverse(const FlowModel& m, std::span<const double> x) {
    Mat in = detail::one_row(x);
    FlowWorkspace ws;
    Mat out;
    FlowEval e;
    e.logdet = inverse_batch(m, in, out, ws);
    e.value.assign(out.a.begin(), out.a.end());
    return e;
}

inline double log_prob(const FlowModel& m, std::span<const double> x) {
    Mat in = detail::one_row(x);
    FlowWorkspace ws;
    Mat xi;
    double lp;
    log_prob_batch(m, in, {&lp, 1}, ws, xi);
    return lp;
}

/// i.i.d. prior draw with every coordinate multiplied by `scale`.
inline std::vector<double> sample_prior(const FlowModel& m, double scale, Rng& rng) {
    if (!(scale > 0.0)) throw std::invalid_argument("sample_prior: scale must be positive");
    std::vector<double> z(m.dim);
    for (double& v : z) v = scale * prior_draw(m.prior, rng);
    return z;
}

}  // namespace plmcmc
