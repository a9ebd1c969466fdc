#pragma once

// PL-MCMC Metropolis-Hastings conditional sampling: latent-space chains whose
// mapped data pairs converge to the flow's conditional distribution of the
// missing coordinates given the observed ones. Also the data-space
// Metropolis-within-Gibbs baseline and the auxiliary-density diagnostics.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "plmcmc/flow.hpp"
#include "plmcmc/sample.hpp"

namespace plmcmc {

// ---------------------------------------------------------------------------
// Auxiliary density q over the generated observed coordinates y_O
// ---------------------------------------------------------------------------

enum class AuxKind { NormalAtObserved, ImproperUniform };

/// q shapes the chain's target without changing the missing-coordinate
/// marginal it converges to. Acceptance math only ever uses log_base, an
/// unnormalized form, so any constant rescaling of q cancels exactly and
/// leaves every decision bitwise unchanged.
struct AuxiliaryDensity {
    AuxKind kind = AuxKind::NormalAtObserved;
    double sigma_a = 1e-3;
    double log_offset = 0.0;  // records rescalings; never enters acceptance math

    static AuxiliaryDensity normal_at(double sigma) {
        if (!(sigma > 0.0)) throw std::invalid_argument("aux: sigma_a must be positive");
        return {AuxKind::NormalAtObserved, sigma, 0.0};
    }
    static AuxiliaryDensity uniform() { return {AuxKind::ImproperUniform, 0.0, 0.0}; }

    AuxiliaryDensity scaled(double c) const {
        if (!(c > 0.0)) throw std::invalid_argument("aux: scale constant must be positive");
        AuxiliaryDensity out = *this;
        out.log_offset += std::log(c);
        return out;
    }

    /// Unnormalized log q(y_O), centered on the conditioning values.
    double log_base(const MaskedSample& s, std::span<const double> y) const {
        if (kind == AuxKind::ImproperUniform) return 0.0;
        const double inv = 1.0 / (2.0 * sigma_a * sigma_a);
        double acc = 0.0;
        for (size_t k = 0; k < s.observed_idx.size(); ++k) {
            const double d = y[s.observed_idx[k]] - s.observed_val[k];
            acc -= d * d * inv;
        }
        return acc;
    }

    /// Normalized log-density including the recorded offset (reporting only).
    double log_density(const MaskedSample& s, std::span<const double> y) const {
        if (kind == AuxKind::ImproperUniform) return log_offset;
        const double n = static_cast<double>(s.observed_idx.size());
        return log_base(s, y) - n * (std::log(sigma_a) + 0.91893853320467274) + log_offset;
    }
};

// ---------------------------------------------------------------------------
// Sampler configuration
// ---------------------------------------------------------------------------

enum class KernelTag { Perturb, Resample };
enum class InitPolicy { PriorSample, ObservedFill, ProvidedLatent };

struct SamplerConfig {
    double sigma_p = 0.05;  // perturbation kernel scale
    double sigma_r = 0.5;   // resample kernel scale
    double mix = 0.5;       // probability of the resample kernel per proposal
    AuxiliaryDensity aux{};
    long proposals = 1000;
    InitPolicy init = InitPolicy::PriorSample;
    double init_scale = 0.5;
    std::vector<double> init_latent;
    bool exact_mixture_ratio = false;  // exact mixture kernel density instead of the tag approximation
    long checkpoint_interval = 200;
    bool record_proposals = false;

    void validate() const {
        if (!(sigma_p > 0.0) || !(sigma_r > 0.0))
            throw std::invalid_argument("sampler: sigma_p and sigma_r must be positive");
        if (mix < 0.0 || mix > 1.0) throw std::invalid_argument("sampler: mix must be in [0,1]");
        if (proposals < 0) throw std::invalid_argument("sampler: proposals must be >= 0");
        if (kind_requires_sigma_a() && !(aux.sigma_a > 0.0))
            throw std::invalid_argument("sampler: sigma_a must be positive");
        if (mix > 0.0 && sigma_p > sigma_r / 10.0)
            std::cerr << "[plmcmc] warning: sigma_p " << sigma_p << " > sigma_r/10 ("
                      << sigma_r / 10.0
                      << "); the tag-based kernel approximation assumes sigma_p << sigma_r\n";
    }

  private:
    bool kind_requires_sigma_a() const { return aux.kind == AuxKind::NormalAtObserved; }
};

/// Identifies the reproducible stream of one chain: (run seed, sample index,
/// chain index, resample round).
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t sample_index = 0;
    std::uint64_t round = 0;
};

inline Rng chain_rng(const StreamKey& key, std::uint64_t chain) {
    return Rng(stream_seed(key.seed, key.sample_index, chain, key.round));
}

// ---------------------------------------------------------------------------
// Proposals and kernel ratios
// ---------------------------------------------------------------------------

/// Draws xi' into `out`; consumes one mix uniform and dim normals regardless
/// of which kernel fires, so chain streams have a fixed layout.
inline KernelTag propose(std::span<const double> xi, std::span<double> out,
                         const SamplerConfig& cfg, Rng& rng) {
    const bool resample = rng.uniform01() < cfg.mix;
    if (resample) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = cfg.sigma_r * rng.normal();
        return KernelTag::Resample;
    }
    for (size_t i = 0; i < out.size(); ++i) out[i] = xi[i] + cfg.sigma_p * rng.normal();
    return KernelTag::Perturb;
}

namespace detail {
inline double sq_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

inline double log_mixture_kernel(std::span<const double> to, std::span<const double> from,
                                 const SamplerConfig& cfg) {
    const double d = static_cast<double>(to.size());
    double dp = 0.0, dr = 0.0;
    for (size_t i = 0; i < to.size(); ++i) {
        const double a = to[i] - from[i];
        dp += a * a;
        dr += to[i] * to[i];
    }
    const double half_log_2pi = 0.91893853320467274;
    const double lp = std::log1p(-cfg.mix) - d * (std::log(cfg.sigma_p) + half_log_2pi) -
                      dp / (2.0 * cfg.sigma_p * cfg.sigma_p);
    const double lr = std::log(cfg.mix) - d * (std::log(cfg.sigma_r) + half_log_2pi) -
                      dr / (2.0 * cfg.sigma_r * cfg.sigma_r);
    if (cfg.mix <= 0.0) return lp;
    if (cfg.mix >= 1.0) return lr;
    const double hi = std::max(lp, lr);
    return hi + std::log(std::exp(lp - hi) + std::exp(lr - hi));
}
}  // namespace detail

/// log g(xi | xi') - log g(xi' | xi). Under the tag approximation the
/// perturbation kernel is symmetric (ratio 0) and the resample kernel is
/// state-independent, leaving (|xi'|^2 - |xi|^2) / (2 sigma_r^2).
inline double log_kernel_ratio(std::span<const double> xi, std::span<const double> xi_prop,
                               KernelTag tag, const SamplerConfig& cfg) {
    if (cfg.exact_mixture_ratio && cfg.mix > 0.0 && cfg.mix < 1.0)
        return detail::log_mixture_kernel(xi, xi_prop, cfg) -
               detail::log_mixture_kernel(xi_prop, xi, cfg);
    if (tag == KernelTag::Perturb) return 0.0;
    return (detail::sq_norm(xi_prop) - detail::sq_norm(xi)) / (2.0 * cfg.sigma_r * cfg.sigma_r);
}

// ---------------------------------------------------------------------------
// Target evaluation
// ---------------------------------------------------------------------------

struct TargetParts {
    std::vector<double> y;   // f(xi)
    double log_q_base = 0.0;
    double log_p_proj = 0.0;  // log p(y_M; x_O)
    double fwd_logdet = 0.0;

    double log_t() const { return log_q_base + log_p_proj; }
    double acceptance_term() const { return log_q_base + log_p_proj + fwd_logdet; }
};

/// Maps xi into data space, projects onto the conditioning values and
/// evaluates the pieces of the unnormalized target q(y_O) p(y_M; x_O).
inline TargetParts log_target(const FlowModel& m, std::span<const double> xi,
                              const MaskedSample& s, const AuxiliaryDensity& aux) {
    TargetParts t;
    auto fwd = forward(m, xi);
    t.y = std::move(fwd.value);
    t.fwd_logdet = fwd.logdet;
    t.log_q_base = aux.log_base(s, t.y);
    std::vector<double> proj(m.dim);
    s.project(t.y, proj);
    t.log_p_proj = all_finite(proj) ? log_prob(m, proj) : -std::numeric_limits<double>::infinity();
    return t;
}

// ---------------------------------------------------------------------------
// Chain state and traces
// ---------------------------------------------------------------------------

struct ChainState {
    std::vector<double> xi, y;
    double fwd_logdet = 0.0;
    double log_p_proj = 0.0;
    double log_q_base = 0.0;
    long accepted = 0, proposed = 0, incidents = 0;

    double acceptance_term() const { return log_q_base + log_p_proj + fwd_logdet; }
};

struct ProposalRecord {
    long index = 0;
    bool accepted = false;
    double log_target = 0.0;  // q(y_O) p(y_M; x_O) |J| of the post-decision state, in log
};

struct Checkpoint {
    long proposal_index = 0;
    long accepted_so_far = 0;
    std::vector<double> y_m;
};

struct ChainTrace {
    std::vector<Checkpoint> checkpoints;
    std::vector<ProposalRecord> proposals;
    long accepted = 0, proposed = 0, incidents = 0;
};

struct ChainResult {
    std::vector<double> completion;  // y_M of the final state, missing-index order
    ChainTrace trace;
};

inline ChainState init_chain(const FlowModel& m, const MaskedSample& s, const SamplerConfig& cfg,
                             Rng& rng) {
    std::vector<double> xi;
    switch (cfg.init) {
        case InitPolicy::PriorSample:
            xi = sample_prior(m, cfg.init_scale, rng);
            break;
        case InitPolicy::ObservedFill: {
            if (s.fully_missing())
                throw std::invalid_argument("init_chain: ObservedFill needs observed coordinates");
            std::vector<double> x(m.dim);
            for (int i = 0; i < m.dim; ++i)
                x[i] = s.observed_val[rng.uniform_int(static_cast<int>(s.observed_val.size()))];
            s.project(x, x);
            xi = inverse(m, x).value;
            break;
        }
        case InitPolicy::ProvidedLatent:
            if (static_cast<int>(cfg.init_latent.size()) != m.dim)
                throw std::invalid_argument("init_chain: init_latent has wrong size");
            xi = cfg.init_latent;
            break;
    }
    ChainState st;
    auto t = log_target(m, xi, s, cfg.aux);
    st.xi = std::move(xi);
    st.y = std::move(t.y);
    st.fwd_logdet = t.fwd_logdet;
    st.log_p_proj = t.log_p_proj;
    st.log_q_base = t.log_q_base;
    return st;
}

namespace detail {

struct Decision {
    bool accepted = false;
    bool incident = false;
    double log_alpha = 0.0;
};

/// Acceptance in log space; alpha is exponentiated only when log alpha < 0.
/// Non-finite log alpha rejects and counts as a numerical incident.
inline Decision mh_decide(double log_alpha, double u) {
    Decision d;
    d.log_alpha = log_alpha;
    if (!std::isfinite(log_alpha)) {
        d.incident = true;
        d.accepted = false;
        return d;
    }
    d.accepted = log_alpha >= 0.0 || u < std::exp(log_alpha);
    return d;
}

}  // namespace detail

/// One Metropolis-Hastings update (Algorithm 1). Returns whether the proposal
/// was accepted. The caller owns config validation.
inline bool plmcmc_step(ChainState& st, const FlowModel& m, const MaskedSample& s,
                        const SamplerConfig& cfg, Rng& rng) {
    std::vector<double> xi_prop(st.xi.size());
    const KernelTag tag = propose(st.xi, xi_prop, cfg, rng);
    const double kr = log_kernel_ratio(st.xi, xi_prop, tag, cfg);
    const double u = rng.uniform01();

    auto t = log_target(m, xi_prop, s, cfg.aux);
    const double log_alpha = t.acceptance_term() - st.acceptance_term() + kr;
    auto d = detail::mh_decide(log_alpha, u);
    st.proposed += 1;
    if (d.incident) st.incidents += 1;
    if (d.accepted) {
        st.accepted += 1;
        st.xi = std::move(xi_prop);
        st.y = std::move(t.y);
        st.fwd_logdet = t.fwd_logdet;
        st.log_p_proj = t.log_p_proj;
        st.log_q_base = t.log_q_base;
    }
    return d.accepted;
}

// ---------------------------------------------------------------------------
// Lockstep multi-chain engine
// ---------------------------------------------------------------------------

/// Runs many chains in lockstep so the two flow evaluations per proposal
/// become batched matrix work. Chains may condition on different samples; each
/// owns its stream, so results are bit-identical to running them one by one.
class ChainPack {
  public:
    struct Slot {
        const MaskedSample* sample = nullptr;
        Rng rng;
        ChainState state;
        ChainTrace trace;
    };

    ChainPack(const FlowModel& m, const SamplerConfig& cfg) : model_(m), cfg_(cfg) {}

    void add(const MaskedSample* s, Rng rng) { slots_.push_back({s, rng, {}, {}}); }
    std::vector<Slot>& slots() { return slots_; }

    void run() {
        const int n = static_cast<int>(slots_.size());
        if (n == 0) return;
        const int d = model_.dim;
        init_states();
        for (auto& sl : slots_) record_checkpoint(sl, 0);

        Mat xi_prop(n, d), y_prop, proj(n, d);
        std::vector<KernelTag> tags(n);
        std::vector<double> kr(n), u(n), lp(n);
        for (long step = 1; step <= cfg_.proposals; ++step) {
            for (int i = 0; i < n; ++i) {
                auto& sl = slots_[i];
                tags[i] = propose(sl.state.xi, xi_prop.row_span(i), cfg_, sl.rng);
                kr[i] = log_kernel_ratio(sl.state.xi, xi_prop.row_span(i), tags[i], cfg_);
                u[i] = sl.rng.uniform01();
            }
            const double logdet = forward_batch(model_, xi_prop, y_prop, ws_);
            std::vector<char> bad(n, 0);
            for (int i = 0; i < n; ++i) {
                const auto y = y_prop.row_span(i);
                slots_[i].sample->project(y, proj.row_span(i));
                if (!all_finite(proj.row_span(i))) {
                    bad[i] = 1;
                    std::fill(proj.row(i), proj.row(i) + d, 0.0);
                }
            }
            log_prob_batch(model_, proj, lp, ws_, xi_buf_);
            for (int i = 0; i < n; ++i) {
                auto& sl = slots_[i];
                auto& st = sl.state;
                st.proposed += 1;
                detail::Decision dec;
                double lq = 0.0;
                if (bad[i]) {
                    dec.incident = true;
                } else {
                    lq = cfg_.aux.log_base(*sl.sample, y_prop.row_span(i));
                    const double log_alpha =
                        (lq + lp[i] + logdet) - st.acceptance_term() + kr[i];
                    dec = detail::mh_decide(log_alpha, u[i]);
                }
                if (dec.incident) st.incidents += 1;
                if (dec.accepted) {
                    st.accepted += 1;
                    std::copy(xi_prop.row(i), xi_prop.row(i) + d, st.xi.begin());
                    std::copy(y_prop.row(i), y_prop.row(i) + d, st.y.begin());
                    st.fwd_logdet = logdet;
                    st.log_p_proj = lp[i];
                    st.log_q_base = lq;
                }
                if (cfg_.record_proposals)
                    sl.trace.proposals.push_back({step, dec.accepted, st.acceptance_term()});
                if ((cfg_.checkpoint_interval > 0 && step % cfg_.checkpoint_interval == 0) ||
                    step == cfg_.proposals)
                    record_checkpoint(sl, step);
            }
        }
        for (auto& sl : slots_) {
            sl.trace.accepted = sl.state.accepted;
            sl.trace.proposed = sl.state.proposed;
            sl.trace.incidents = sl.state.incidents;
        }
    }

    ChainResult result(int i) const {
        const auto& sl = slots_[i];
        ChainResult r;
        r.trace = sl.trace;
        r.completion.reserve(sl.sample->missing.size());
        for (int idx : sl.sample->missing) r.completion.push_back(sl.state.y[idx]);
        return r;
    }

  private:
    void init_states() {
        const int n = static_cast<int>(slots_.size());
        const int d = model_.dim;
        Mat xi0(n, d);
        for (int i = 0; i < n; ++i) {
            auto& sl = slots_[i];
            switch (cfg_.init) {
                case InitPolicy::PriorSample: {
                    auto z = sample_prior(model_, cfg_.init_scale, sl.rng);
                    std::copy(z.begin(), z.end(), xi0.row(i));
                    break;
                }
                case InitPolicy::ObservedFill: {
                    const auto& s = *sl.sample;
                    if (s.fully_missing())
                        throw std::invalid_argument(
                            "ChainPack: ObservedFill needs observed coordinates");
                    std::vector<double> x(d);
                    for (int j = 0; j < d; ++j)
                        x[j] = s.observed_val[sl.rng.uniform_int(
                            static_cast<int>(s.observed_val.size()))];
                    s.project(x, x);
                    auto xi = inverse(model_, x).value;
                    std::copy(xi.begin(), xi.end(), xi0.row(i));
                    break;
                }
                case InitPolicy::ProvidedLatent:
                    if (static_cast<int>(cfg_.init_latent.size()) != d)
                        throw std::invalid_argument("ChainPack: init_latent has wrong size");
                    std::copy(cfg_.init_latent.begin(), cfg_.init_latent.end(), xi0.row(i));
                    break;
            }
        }
        Mat y0, proj(n, d);
        const double logdet = forward_batch(model_, xi0, y0, ws_);
        for (int i = 0; i < n; ++i) slots_[i].sample->project(y0.row_span(i), proj.row_span(i));
        std::vector<double> lp(n);
        log_prob_batch(model_, proj, lp, ws_, xi_buf_);
        for (int i = 0; i < n; ++i) {
            auto& st = slots_[i].state;
            st.xi.assign(xi0.row(i), xi0.row(i) + d);
            st.y.assign(y0.row(i), y0.row(i) + d);
            st.fwd_logdet = logdet;
            st.log_p_proj = lp[i];
            st.log_q_base = cfg_.aux.log_base(*slots_[i].sample, st.y);
        }
    }

    void record_checkpoint(Slot& sl, long step) {
        Checkpoint c;
        c.proposal_index = step;
        c.accepted_so_far = sl.state.accepted;
        c.y_m.reserve(sl.sample->missing.size());
        for (int idx : sl.sample->missing) c.y_m.push_back(sl.state.y[idx]);
        sl.trace.checkpoints.push_back(std::move(c));
    }

    const FlowModel& model_;
    const SamplerConfig& cfg_;
    std::vector<Slot> slots_;
    FlowWorkspace ws_;
    Mat xi_buf_;
};

// ---------------------------------------------------------------------------
// Front doors
// ---------------------------------------------------------------------------

/// Runs one chain. A fully observed sample returns an empty completion
/// immediately; a fully missing sample performs unconditional sampling (the
/// auxiliary density contributes nothing).
inline ChainResult run_chain(const FlowModel& m, const MaskedSample& s, const SamplerConfig& cfg,
                             Rng rng) {
    cfg.validate();
    s.validate();
    if (s.fully_observed()) return {};
    ChainPack pack(m, cfg);
    pack.add(&s, std::move(rng));
    pack.run();
    return pack.result(0);
}

inline std::vector<ChainResult> run_chains(const FlowModel& m, const MaskedSample& s,
                                           const SamplerConfig& cfg, int n_chains,
                                           const StreamKey& key) {
    cfg.validate();
    s.validate();
    if (n_chains < 1) throw std::invalid_argument("run_chains: n_chains must be >= 1");
    if (s.fully_observed()) return std::vector<ChainResult>(n_chains);
    ChainPack pack(m, cfg);
    for (int c = 0; c < n_chains; ++c) pack.add(&s, chain_rng(key, c));
    pack.run();
    std::vector<ChainResult> out;
    out.reserve(n_chains);
    for (int c = 0; c < n_chains; ++c) out.push_back(pack.result(c));
    return out;
}

/// Mean over the final completions of independent chains.
inline std::vector<double> conditional_mean(const FlowModel& m, const MaskedSample& s,
                                            const SamplerConfig& cfg, int n_chains,
                                            const StreamKey& key) {
    auto chains = run_chains(m, s, cfg, n_chains, key);
    std::vector<double> mean(s.missing.size(), 0.0);
    for (const auto& c : chains)
        for (size_t j = 0; j < mean.size(); ++j) mean[j] += c.completion[j];
    for (double& v : mean) v /= n_chains;
    return mean;
}

// ---------------------------------------------------------------------------
// Data-space Gibbs baseline
// ---------------------------------------------------------------------------

/// Independence-proposal statistics per column (observed mean / std).
struct GibbsStats {
    std::vector<double> mu, sigma;
};

/// One Metropolis-within-Gibbs sweep over the missing indices in order.
/// `logp` caches log p(x) and is updated in place; returns accepted count.
inline long gibbs_sweep(std::span<double> x, const FlowModel& m, const MaskedSample& s,
                        const GibbsStats& stats, Rng& rng, double& logp) {
    for (int idx : s.missing)
        if (!(stats.sigma[idx] > 0.0))
            throw std::invalid_argument("gibbs_sweep: proposal sigma must be positive");
    long accepted = 0;
    std::vector<double> prop(x.begin(), x.end());
    for (int idx : s.missing) {
        const double mu = stats.mu[idx], sg = stats.sigma[idx];
        const double cur = x[idx];
        const double cand = mu + sg * rng.normal();
        const double u = rng.uniform01();
        prop[idx] = cand;
        const double logp_cand = log_prob(m, prop);
        auto g = [&](double v) {
            const double z = (v - mu) / sg;
            return -0.5 * z * z - std::log(sg) - 0.91893853320467274;
        };
        const double log_alpha = (logp_cand - g(cand)) - (logp - g(cur));
        const auto d = detail::mh_decide(log_alpha, u);
        if (d.accepted) {
            x[idx] = cand;
            logp = logp_cand;
            ++accepted;
        } else {
            prop[idx] = cur;
        }
    }
    return accepted;
}

// ---------------------------------------------------------------------------
// Decision-change diagnostic
// ---------------------------------------------------------------------------

/// How often the configured auxiliary density changes the accept/reject
/// decision relative to an improper-uniform auxiliary, measured on a single
/// chain using shared uniform draws.
struct DecisionChange {
    long accept_count = 0, reject_count = 0;
    long changed_given_accept = 0, changed_given_reject = 0;

    double p_change_given_accept() const {
        return accept_count ? static_cast<double>(changed_given_accept) / accept_count : 0.0;
    }
    double p_change_given_reject() const {
        return reject_count ? static_cast<double>(changed_given_reject) / reject_count : 0.0;
    }
};

inline DecisionChange decision_change_probability(const FlowModel& m, const MaskedSample& s,
                                                  const SamplerConfig& cfg, Rng rng,
                                                  long n_steps) {
    cfg.validate();
    s.validate();
    DecisionChange out;
    ChainState st = init_chain(m, s, cfg, rng);
    std::vector<double> xi_prop(st.xi.size());
    for (long step = 0; step < n_steps; ++step) {
        const KernelTag tag = propose(st.xi, xi_prop, cfg, rng);
        const double kr = log_kernel_ratio(st.xi, xi_prop, tag, cfg);
        const double u = rng.uniform01();
        auto t = log_target(m, xi_prop, s, cfg.aux);

        const double log_alpha = t.acceptance_term() - st.acceptance_term() + kr;
        // Same proposal and uniform draw under an improper-uniform auxiliary:
        // the q terms drop out of the acceptance ratio.
        const double log_alpha_uniform = log_alpha - (t.log_q_base - st.log_q_base);
        const auto primary = detail::mh_decide(log_alpha, u);
        const auto uniform = detail::mh_decide(log_alpha_uniform, u);

        if (primary.accepted) {
            out.accept_count += 1;
            if (!uniform.accepted) out.changed_given_accept += 1;
        } else {
            out.reject_count += 1;
            if (uniform.accepted) out.changed_given_reject += 1;
        }
        st.proposed += 1;
        if (primary.accepted) {
            st.accepted += 1;
            st.xi = xi_prop;
            st.y = std::move(t.y);
            st.fwd_logdet = t.fwd_logdet;
            st.log_p_proj = t.log_p_proj;
            st.log_q_base = t.log_q_base;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trace export
// ---------------------------------------------------------------------------

inline void write_trace_csv(const std::string& path, const ChainTrace& t) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_trace_csv: cannot open " + path);
    f << "proposal_index,accepted,log_target\n";
    char buf[64];
    for (const auto& p : t.proposals) {
        std::snprintf(buf, sizeof buf, "%.17g", p.log_target);
        f << p.index << "," << (p.accepted ? 1 : 0) << "," << buf << "\n";
    }
}

inline void write_checkpoints_csv(const std::string& path, const ChainTrace& t,
                                  const MaskedSample& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_checkpoints_csv: cannot open " + path);
    f << "proposal_index,accepted_so_far";
    for (int idx : s.missing) f << ",y_" << idx;
    f << "\n";
    char buf[64];
    for (const auto& c : t.checkpoints) {
        f << c.proposal_index << "," << c.accepted_so_far;
        for (double v : c.y_m) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            f << "," << buf;
        }
        f << "\n";
    }
}

}  // namespace plmcmc
