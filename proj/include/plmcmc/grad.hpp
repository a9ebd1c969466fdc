#pragma once

// Reverse-mode gradients of batch negative log-likelihood with respect to all
// flow parameters, written by hand through the inverse evaluation path, plus
// the RMSprop / Adamax optimizers and the complete-data training loop.

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "plmcmc/flow.hpp"
#include "plmcmc/parallel.hpp"

namespace plmcmc {

/// Same shape as the FlowModel parameters.
struct ParamGradients {
    std::vector<std::vector<std::vector<double>>> w, b;  // [coupling][mlp layer][...]
    std::vector<double> log_scale;
};

inline ParamGradients make_gradients(const FlowModel& m) {
    ParamGradients g;
    g.w.resize(m.couplings.size());
    g.b.resize(m.couplings.size());
    for (size_t k = 0; k < m.couplings.size(); ++k) {
        for (const auto& w : m.couplings[k].net.weights) g.w[k].emplace_back(w.size(), 0.0);
        for (const auto& b : m.couplings[k].net.biases) g.b[k].emplace_back(b.size(), 0.0);
    }
    g.log_scale.assign(m.dim, 0.0);
    return g;
}

/// Applies fn(param_array, matching arrays...) across every parameter array.
template <class Fn, class... Grads>
void zip_params(FlowModel& m, Fn&& fn, Grads&... grads) {
    for (size_t k = 0; k < m.couplings.size(); ++k) {
        auto& net = m.couplings[k].net;
        for (size_t l = 0; l < net.weights.size(); ++l) fn(net.weights[l], grads.w[k][l]...);
        for (size_t l = 0; l < net.biases.size(); ++l) fn(net.biases[l], grads.b[k][l]...);
    }
    fn(m.scaling.log_scale, grads.log_scale...);
}

template <class Fn>
void for_each_grad(ParamGradients& g, Fn&& fn) {
    for (auto& layers : g.w)
        for (auto& arr : layers) fn(arr);
    for (auto& layers : g.b)
        for (auto& arr : layers) fn(arr);
    fn(g.log_scale);
}

template <class Fn>
void for_each_grad(const ParamGradients& g, Fn&& fn) {
    for (const auto& layers : g.w)
        for (const auto& arr : layers) fn(arr);
    for (const auto& layers : g.b)
        for (const auto& arr : layers) fn(arr);
    fn(g.log_scale);
}

inline bool gradients_finite(const ParamGradients& g) {
    bool ok = true;
    for_each_grad(g, [&](const std::vector<double>& a) { ok = ok && all_finite(a); });
    return ok;
}

inline void add_gradients(ParamGradients& dst, const ParamGradients& src) {
    for (size_t k = 0; k < dst.w.size(); ++k) {
        for (size_t l = 0; l < dst.w[k].size(); ++l)
            for (size_t i = 0; i < dst.w[k][l].size(); ++i) dst.w[k][l][i] += src.w[k][l][i];
        for (size_t l = 0; l < dst.b[k].size(); ++l)
            for (size_t i = 0; i < dst.b[k][l].size(); ++i) dst.b[k][l][i] += src.b[k][l][i];
    }
    for (size_t i = 0; i < dst.log_scale.size(); ++i) dst.log_scale[i] += src.log_scale[i];
}

inline void scale_gradients(ParamGradients& g, double c) {
    for_each_grad(g, [c](std::vector<double>& a) {
        for (double& v : a) v *= c;
    });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

namespace detail {

/// d/dz of the per-coordinate prior log-density.
inline double prior_dlogpdf1(PriorKind kind, double z) {
    if (kind == PriorKind::Normal) return -z;
    return -1.0 + 2.0 / (1.0 + std::exp(z));  // -1 + 2*sigmoid(-z)
}

struct MlpCache {
    Mat input;
    std::vector<Mat> preact;  // preact[l] = pre-activation of layer l output
};

inline void mlp_forward_cached(const MlpParams& net, const Mat& in, MlpCache& cache, Mat& act_buf) {
    cache.input = in;
    cache.preact.resize(net.depth());
    const Mat* cur = &cache.input;
    for (int l = 0; l < net.depth(); ++l) {
        linear_forward(*cur, net.weights[l], net.biases[l], cache.preact[l]);
        if (l != net.depth() - 1) {
            act_buf = cache.preact[l];
            relu_inplace(act_buf);
            cur = &act_buf;
        }
    }
}

/// gw[o,k] += sum_r delta[r,o] * act[r,k];  gb[o] += sum_r delta[r,o].
inline void accum_layer_grads(const Mat& delta, const Mat& act, std::vector<double>& gw,
                              std::vector<double>& gb) {
    const int out = delta.cols, in = act.cols;
    for (int r = 0; r < delta.rows; ++r) {
        const double* dr = delta.row(r);
        const double* ar = act.row(r);
        for (int o = 0; o < out; ++o) {
            const double d = dr[o];
            gb[o] += d;
            double* gwo = gw.data() + static_cast<size_t>(o) * in;
            for (int k = 0; k < in; ++k) gwo[k] += d * ar[k];
        }
    }
}

/// cot[r,k] = sum_o delta[r,o] * w[o,k].
inline void backprop_through_weights(const Mat& delta, std::span<const double> w, int in, Mat& cot) {
    cot.resize(delta.rows, in);
    for (int r = 0; r < delta.rows; ++r) {
        const double* dr = delta.row(r);
        double* cr = cot.row(r);
        for (int o = 0; o < delta.cols; ++o) {
            const double d = dr[o];
            const double* wo = w.data() + static_cast<size_t>(o) * in;
            for (int k = 0; k < in; ++k) cr[k] += d * wo[k];
        }
    }
}

/// Backprop through one coupling net. `cot_out` is the cotangent of the net
/// output; returns the input cotangent in `cot_in` and accumulates parameter
/// gradients.
inline void mlp_backward(const MlpParams& net, const MlpCache& cache, const Mat& cot_out,
                         std::vector<std::vector<double>>& gw, std::vector<std::vector<double>>& gb,
                         Mat& cot_in, Mat& delta_buf, Mat& act_buf) {
    Mat delta = cot_out;
    for (int l = net.depth() - 1; l >= 0; --l) {
        if (l == 0) {
            accum_layer_grads(delta, cache.input, gw[l], gb[l]);
        } else {
            act_buf = cache.preact[l - 1];
            relu_inplace(act_buf);
            accum_layer_grads(delta, act_buf, gw[l], gb[l]);
        }
        Mat& down = (l == 0) ? cot_in : delta_buf;
        backprop_through_weights(delta, net.weights[l], net.sizes[l], down);
        if (l > 0) {
            // Gate by the rectifier derivative.
            const Mat& z = cache.preact[l - 1];
            for (size_t i = 0; i < down.a.size(); ++i)
                if (z.a[i] <= 0.0) down.a[i] = 0.0;
            std::swap(delta, delta_buf);
        }
    }
}

/// Gradient of sum_r log p(x_r) over a contiguous row block; adds into `grads`
/// and returns the block's log-prob sum. Row order inside the block is fixed.
inline double logp_sum_and_grad_rows(const FlowModel& m, const Mat& rows, ParamGradients& grads) {
    const int B = rows.rows, d = m.dim;
    const size_t n_c = m.couplings.size();

    // Inverse pass with caches.
    Mat state = rows;
    std::vector<double> es(d);
    for (int i = 0; i < d; ++i) es[i] = std::exp(-m.scaling.log_scale[i]);
    for (int r = 0; r < B; ++r) {
        double* xr = state.row(r);
        for (int i = 0; i < d; ++i) xr[i] *= es[i];
    }
    const Mat g_scaled = state;  // value entering the coupling stack

    std::vector<MlpCache> caches(n_c);
    Mat gather_buf, act_buf;
    for (size_t k = n_c; k-- > 0;) {
        const auto& c = m.couplings[k];
        detail::gather_cols(state, m.net_in(c), gather_buf);
        mlp_forward_cached(c.net, gather_buf, caches[k], act_buf);
        const Mat& shift = caches[k].preact.back();
        const auto& out_idx = m.net_out(c);
        for (int r = 0; r < B; ++r) {
            double* xr = state.row(r);
            const double* s = shift.row(r);
            for (size_t j = 0; j < out_idx.size(); ++j) xr[out_idx[j]] -= s[j];
        }
    }

    const double logdet_inv = -m.scaling.logdet();
    double logp_sum = 0.0;
    Mat G(B, d);  // cotangent of the latent state
    for (int r = 0; r < B; ++r) {
        const double* xi = state.row(r);
        double* gr = G.row(r);
        double lp = logdet_inv;
        for (int i = 0; i < d; ++i) {
            lp += prior_logpdf1(m.prior, xi[i]);
            gr[i] = prior_dlogpdf1(m.prior, xi[i]);
        }
        logp_sum += lp;
    }

    // Walk the couplings in forward order (reverse of the inverse pass).
    Mat cot_out, cot_in, delta_buf;
    for (size_t k = 0; k < n_c; ++k) {
        const auto& c = m.couplings[k];
        const auto& out_idx = m.net_out(c);
        const auto& in_idx = m.net_in(c);
        cot_out.resize(B, static_cast<int>(out_idx.size()));
        for (int r = 0; r < B; ++r) {
            const double* gr = G.row(r);
            double* cr = cot_out.row(r);
            for (size_t j = 0; j < out_idx.size(); ++j) cr[j] = -gr[out_idx[j]];
        }
        mlp_backward(c.net, caches[k], cot_out, grads.w[k], grads.b[k], cot_in, delta_buf, act_buf);
        for (int r = 0; r < B; ++r) {
            double* gr = G.row(r);
            const double* cr = cot_in.row(r);
            for (size_t j = 0; j < in_idx.size(); ++j) gr[in_idx[j]] += cr[j];
        }
    }

    // Scaling layer: direct -1 per row plus the path through g = x*exp(-s).
    for (int i = 0; i < d; ++i) {
        double acc = -static_cast<double>(B);
        for (int r = 0; r < B; ++r) acc -= G.at(r, i) * g_scaled.at(r, i);
        grads.log_scale[i] += acc;
    }
    return logp_sum;
}

}  // namespace detail

/// Mean negative log-likelihood over the batch and its exact gradient.
inline std::pair<double, ParamGradients> nll_and_grad(const FlowModel& m, const Mat& batch) {
    if (batch.rows == 0) throw std::invalid_argument("nll_and_grad: empty batch");
    detail::check_input(m, batch, "nll_and_grad");

    const int threads = default_thread_count();
    ParamGradients total = make_gradients(m);
    double logp_sum = 0.0;
    if (threads <= 1 || batch.rows < 2 * 256) {
        logp_sum = detail::logp_sum_and_grad_rows(m, batch, total);
    } else {
        const int chunks = std::min<long>(threads, batch.rows / 256 + 1);
        std::vector<ParamGradients> partial(chunks, make_gradients(m));
        std::vector<double> partial_sum(chunks, 0.0);
        parallel_chunks(batch.rows, chunks, [&](int c, long r0, long r1) {
            Mat slab(static_cast<int>(r1 - r0), batch.cols);
            std::copy(batch.row(r0), batch.row(r0) + slab.a.size(), slab.a.begin());
            partial_sum[c] = detail::logp_sum_and_grad_rows(m, slab, partial[c]);
        });
        for (int c = 0; c < chunks; ++c) {
            logp_sum += partial_sum[c];
            add_gradients(total, partial[c]);
        }
    }
    const double inv_b = -1.0 / batch.rows;
    scale_gradients(total, inv_b);
    return {inv_b * logp_sum, std::move(total)};
}

/// Mean NLL without gradients.
inline double batch_nll(const FlowModel& m, const Mat& batch) {
    if (batch.rows == 0) throw std::invalid_argument("batch_nll: empty batch");
    FlowWorkspace ws;
    Mat xi;
    std::vector<double> lp(batch.rows);
    log_prob_batch(m, batch, lp, ws, xi);
    double s = 0.0;
    for (double v : lp) s += v;
    return -s / batch.rows;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

enum class OptKind { RmsProp, Adamax };

/// RMSprop uses classical momentum with smoothing constant `alpha`; Adamax is
/// the original max-norm recurrence with eps added to the denominator.
struct OptimizerState {
    OptKind kind = OptKind::Adamax;
    double lr = 0.002;
    double momentum = 0.9;  // rmsprop
    double alpha = 0.99;    // rmsprop smoothing
    double beta1 = 0.9;     // adamax
    double beta2 = 0.999;   // adamax
    double eps = 1e-8;
    double clip_norm = 0.0;  // global-norm clip; 0 disables
    long step = 0;
    bool initialized = false;
    ParamGradients acc1, acc2;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("optimizer: lr must be positive");
    }
};

inline OptimizerState make_rmsprop(double lr, double momentum = 0.9, double alpha = 0.99,
                                   double eps = 1e-8) {
    OptimizerState s;
    s.kind = OptKind::RmsProp;
    s.lr = lr;
    s.momentum = momentum;
    s.alpha = alpha;
    s.eps = eps;
    s.validate();
    return s;
}

inline OptimizerState make_adamax(double lr, double beta1 = 0.9, double beta2 = 0.999,
                                  double eps = 1e-8) {
    OptimizerState s;
    s.kind = OptKind::Adamax;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    s.validate();
    return s;
}

inline double gradient_global_norm(const ParamGradients& g) {
    double sq = 0.0;
    for_each_grad(g, [&](const std::vector<double>& a) {
        for (double v : a) sq += v * v;
    });
    return std::sqrt(sq);
}

inline bool gradients_congruent(const FlowModel& m, const ParamGradients& g) {
    if (g.w.size() != m.couplings.size() || g.b.size() != m.couplings.size() ||
        g.log_scale.size() != static_cast<size_t>(m.dim))
        return false;
    for (size_t k = 0; k < m.couplings.size(); ++k) {
        const auto& net = m.couplings[k].net;
        if (g.w[k].size() != net.weights.size() || g.b[k].size() != net.biases.size()) return false;
        for (size_t l = 0; l < net.weights.size(); ++l)
            if (g.w[k][l].size() != net.weights[l].size() || g.b[k][l].size() != net.biases[l].size())
                return false;
    }
    return true;
}

/// Applies one update in place. Non-finite gradients abort before any
/// parameter is touched.
inline void optimizer_step(OptimizerState& st, FlowModel& m, const ParamGradients& grads) {
    st.validate();
    if (!gradients_congruent(m, grads))
        throw std::invalid_argument("optimizer_step: gradient shape not congruent with model");
    if (!gradients_finite(grads))
        throw std::runtime_error("optimizer_step: non-finite gradients (step " +
                                 std::to_string(st.step) + "); no update applied");
    if (!st.initialized) {
        st.acc1 = make_gradients(m);
        st.acc2 = make_gradients(m);
        st.initialized = true;
    }
    double scale = 1.0;
    if (st.clip_norm > 0.0) {
        const double norm = gradient_global_norm(grads);
        if (norm > st.clip_norm) scale = st.clip_norm / norm;
    }
    st.step += 1;
    if (st.kind == OptKind::RmsProp) {
        zip_params(
            m,
            [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& sq,
                std::vector<double>& buf) {
                for (size_t i = 0; i < p.size(); ++i) {
                    const double gi = scale * g[i];
                    sq[i] = st.alpha * sq[i] + (1.0 - st.alpha) * gi * gi;
                    buf[i] = st.momentum * buf[i] + gi / (std::sqrt(sq[i]) + st.eps);
                    p[i] -= st.lr * buf[i];
                }
            },
            grads, st.acc2, st.acc1);
    } else {
        const double correction = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
        zip_params(
            m,
            [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m1,
                std::vector<double>& u) {
                for (size_t i = 0; i < p.size(); ++i) {
                    const double gi = scale * g[i];
                    m1[i] = st.beta1 * m1[i] + (1.0 - st.beta1) * gi;
                    u[i] = std::max(st.beta2 * u[i], std::abs(gi));
                    p[i] -= (st.lr / correction) * m1[i] / (u[i] + st.eps);
                }
            },
            grads, st.acc1, st.acc2);
    }
}

// ---------------------------------------------------------------------------
// Complete-data training
// ---------------------------------------------------------------------------

struct EpochLog {
    long epoch = 0;
    double mean_nll = 0.0;
};

/// One shuffled mini-batch epoch; returns the epoch's mean NLL.
inline double train_epoch(FlowModel& m, const Mat& data, long batch_size, OptimizerState& opt,
                          Rng& rng) {
    if (data.rows == 0) throw std::invalid_argument("train_epoch: empty dataset");
    if (batch_size > data.rows) {
        std::cerr << "[plmcmc] warning: batch_size " << batch_size << " > dataset rows "
                  << data.rows << "; clamping\n";
        batch_size = data.rows;
    }
    if (batch_size < 1) throw std::invalid_argument("train_epoch: batch_size must be >= 1");

    std::vector<int> perm(data.rows);
    for (int i = 0; i < data.rows; ++i) perm[i] = i;
    for (int i = data.rows - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

    double nll_total = 0.0;
    Mat batch;
    for (long start = 0; start < data.rows; start += batch_size) {
        const long end = std::min<long>(start + batch_size, data.rows);
        batch.resize(static_cast<int>(end - start), data.cols);
        for (long r = start; r < end; ++r)
            std::copy(data.row(perm[r]), data.row(perm[r]) + data.cols, batch.row(r - start));
        auto [nll, grads] = nll_and_grad(m, batch);
        optimizer_step(opt, m, grads);
        nll_total += nll * (end - start);
    }
    return nll_total / data.rows;
}

/// Shuffled mini-batch training on a complete data matrix.
inline std::vector<EpochLog> train(FlowModel& m, const Mat& data, long epochs, long batch_size,
                                   OptimizerState& opt, Rng& rng) {
    std::vector<EpochLog> log;
    for (long e = 0; e < epochs; ++e)
        log.push_back({e, train_epoch(m, data, batch_size, opt, rng)});
    return log;
}

}  // namespace plmcmc
