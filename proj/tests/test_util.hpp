#pragma once

#include <vector>

#include "plmcmc/flow.hpp"
#include "plmcmc/rng.hpp"

namespace testutil {

using namespace plmcmc;

/// Couplings-free identity flow (log_scale = 0).
inline FlowModel identity_flow(int dim, PriorKind prior = PriorKind::Normal) {
    FlowModel m;
    m.dim = dim;
    m.prior = prior;
    m.in_a.assign(dim, 0);
    for (int i = 0; i < dim / 2; ++i) m.in_a[i] = 1;
    m.finalize();
    m.scaling.log_scale.assign(dim, 0.0);
    m.validate();
    return m;
}

inline FlowModel scaling_flow(std::vector<double> log_scale, PriorKind prior = PriorKind::Normal) {
    FlowModel m = identity_flow(static_cast<int>(log_scale.size()), prior);
    m.scaling.log_scale = std::move(log_scale);
    m.validate();
    return m;
}

/// Small random flow with randomized biases and log-scales on top of the
/// standard weight init.
inline FlowModel random_flow(int dim, int n_couplings, int hidden, int hidden_layers,
                             PriorKind prior, std::uint64_t seed, double weight_scale = 1.0,
                             double log_scale_range = 0.3) {
    FlowSpec spec;
    spec.dim = dim;
    spec.levels = 1;
    spec.depth = n_couplings;
    spec.hidden = hidden;
    spec.hidden_layers = hidden_layers;
    spec.prior = prior;
    Rng rng(stream_seed(seed));
    FlowModel m = make_flow(spec, seed, rng);
    for (auto& c : m.couplings) {
        for (auto& w : c.net.weights)
            for (double& v : w) v *= weight_scale;
        for (auto& b : c.net.biases)
            for (double& v : b) v = 0.2 * (2.0 * rng.uniform01() - 1.0);
    }
    for (double& s : m.scaling.log_scale) s = log_scale_range * (2.0 * rng.uniform01() - 1.0);
    return m;
}

/// Random flow whose coupling nets are linear (no hidden layers), i.e. an
/// affine map overall.
inline FlowModel random_affine_flow(int dim, int n_couplings, std::uint64_t seed,
                                    double weight_scale = 0.8, double log_scale_range = 0.4) {
    return random_flow(dim, n_couplings, 1, 0, PriorKind::Normal, seed, weight_scale,
                       log_scale_range);
}

inline FlowModel zeroed(FlowModel m) {
    for (auto& c : m.couplings) {
        for (auto& w : c.net.weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : c.net.biases) std::fill(b.begin(), b.end(), 0.0);
    }
    std::fill(m.scaling.log_scale.begin(), m.scaling.log_scale.end(), 0.0);
    return m;
}

/// Deterministic 4-attribute tabular dataset at the banknote scale (1372 rows):
/// a correlated Gaussian whose exact conditional structure gives a
/// Bayes-optimal NMSE of ~0.46 under 50% independent missingness. Stands in
/// for the UCI file in environments without dataset access.
inline Mat uci_surrogate(int rows = 1372, std::uint64_t seed = 20200527) {
    // Lower Cholesky factor of the attribute correlation matrix.
    static const double L[4][4] = {
        {1.0, 0.0, 0.0, 0.0},
        {0.55, 0.8351646544245033, 0.0, 0.0},
        {-0.6, -0.5627632796838947, 0.5685925527470673, 0.0},
        {0.45, -0.7154277864066534, 0.2943821753136146, 0.44609664568891366}};
    static const double mu[4] = {0.43, 1.92, 1.40, -1.19};
    static const double sd[4] = {2.84, 5.87, 4.31, 2.10};

    Mat out(rows, 4);
    Rng rng(stream_seed(seed));
    for (int r = 0; r < rows; ++r) {
        double z[4];
        for (double& v : z) v = rng.normal();
        for (int c = 0; c < 4; ++c) {
            double acc = 0.0;
            for (int k = 0; k <= c; ++k) acc += L[c][k] * z[k];
            out.at(r, c) = mu[c] + sd[c] * acc;
        }
    }
    return out;
}

}  // namespace testutil
