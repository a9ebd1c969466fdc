#pragma once

// Imputation scoring exactly as defined for the experiments: per-example
// reconstruction RMSE and ground-truth-normalized MSE, both in the original
// (unwhitened) representation, plus acceptance-rate summaries over traces.

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "plmcmc/matrix.hpp"
#include "plmcmc/sampler.hpp"

namespace plmcmc {

/// (1/T) sum_i sqrt( (1/|M_i|) sum_{j in M_i} (x_ij - xhat_ij)^2 ).
/// Examples with no missing entries are skipped; all-observed input is an
/// error (the metric is undefined).
inline double reconstruction_rmse(const Mat& imputed, const Mat& truth,
                                  std::span<const std::uint8_t> missing) {
    if (imputed.rows != truth.rows || imputed.cols != truth.cols ||
        missing.size() != imputed.a.size())
        throw std::invalid_argument("reconstruction_rmse: shape mismatch");
    double total = 0.0;
    long examples = 0;
    for (int r = 0; r < imputed.rows; ++r) {
        double sq = 0.0;
        long n = 0;
        for (int c = 0; c < imputed.cols; ++c) {
            if (!missing[static_cast<size_t>(r) * imputed.cols + c]) continue;
            const double d = truth.at(r, c) - imputed.at(r, c);
            sq += d * d;
            ++n;
        }
        if (n == 0) continue;
        total += std::sqrt(sq / n);
        ++examples;
    }
    if (examples == 0)
        throw std::invalid_argument("reconstruction_rmse: no missing entries anywhere");
    return total / examples;
}

/// (1/T) sum_i (1/|M_i|) sum_{j in M_i} ((x_ij - xhat_ij) / sigma_j)^2 with
/// sigma_j the ground-truth standard deviation of attribute j.
inline double nmse(const Mat& imputed, const Mat& truth, std::span<const std::uint8_t> missing,
                   std::span<const double> sigmas) {
    if (imputed.rows != truth.rows || imputed.cols != truth.cols ||
        missing.size() != imputed.a.size() ||
        sigmas.size() != static_cast<size_t>(imputed.cols))
        throw std::invalid_argument("nmse: shape mismatch");
    for (double s : sigmas)
        if (!(s > 0.0)) throw std::invalid_argument("nmse: sigmas must be positive");
    double total = 0.0;
    long examples = 0;
    for (int r = 0; r < imputed.rows; ++r) {
        double acc = 0.0;
        long n = 0;
        for (int c = 0; c < imputed.cols; ++c) {
            if (!missing[static_cast<size_t>(r) * imputed.cols + c]) continue;
            const double z = (truth.at(r, c) - imputed.at(r, c)) / sigmas[c];
            acc += z * z;
            ++n;
        }
        if (n == 0) continue;
        total += acc / n;
        ++examples;
    }
    if (examples == 0) throw std::invalid_argument("nmse: no missing entries anywhere");
    return total / examples;
}

/// Ground-truth per-attribute standard deviation (population form).
inline std::vector<double> column_stds(const Mat& data) {
    std::vector<double> out(data.cols, 0.0);
    for (int c = 0; c < data.cols; ++c) {
        double mu = 0.0;
        for (int r = 0; r < data.rows; ++r) mu += data.at(r, c);
        mu /= data.rows;
        double sq = 0.0;
        for (int r = 0; r < data.rows; ++r) sq += (data.at(r, c) - mu) * (data.at(r, c) - mu);
        out[c] = std::sqrt(sq / data.rows);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Acceptance-rate summaries
// ---------------------------------------------------------------------------

struct AcceptancePoint {
    long proposal_index = 0;
    double mean_rate = 0.0;
    double std_rate = 0.0;
};

/// Per-checkpoint interval acceptance rate, averaged across traces. All
/// traces must share the same checkpoint schedule.
inline std::vector<AcceptancePoint> acceptance_summary(std::span<const ChainTrace> traces) {
    if (traces.empty()) throw std::invalid_argument("acceptance_summary: no traces");
    const size_t n_ckpt = traces[0].checkpoints.size();
    if (n_ckpt < 2)
        throw std::invalid_argument("acceptance_summary: traces need at least two checkpoints");
    for (const auto& t : traces)
        if (t.checkpoints.size() != n_ckpt)
            throw std::invalid_argument("acceptance_summary: inconsistent checkpoint schedules");

    std::vector<AcceptancePoint> out;
    for (size_t k = 1; k < n_ckpt; ++k) {
        AcceptancePoint pt;
        pt.proposal_index = traces[0].checkpoints[k].proposal_index;
        std::vector<double> rates;
        rates.reserve(traces.size());
        for (const auto& t : traces) {
            const auto& cur = t.checkpoints[k];
            const auto& prev = t.checkpoints[k - 1];
            const double span = static_cast<double>(cur.proposal_index - prev.proposal_index);
            rates.push_back((cur.accepted_so_far - prev.accepted_so_far) / span);
        }
        for (double r : rates) pt.mean_rate += r;
        pt.mean_rate /= rates.size();
        for (double r : rates) pt.std_rate += (r - pt.mean_rate) * (r - pt.mean_rate);
        pt.std_rate = std::sqrt(pt.std_rate / rates.size());
        out.push_back(pt);
    }
    return out;
}

/// Standard metric report document.
inline nlohmann::json metric_report(const std::string& metric, double value, long n_examples,
                                    const std::string& config_digest) {
    return nlohmann::json{{"metric", metric},
                          {"value", value},
                          {"n_examples", n_examples},
                          {"config_digest", config_digest}};
}

}  // namespace plmcmc
