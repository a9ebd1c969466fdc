#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "plmcmc/flow.hpp"

namespace plmcmc {

/// One data row split into observed values x_O and missing positions x_M.
struct MaskedSample {
    int dim = 0;
    std::vector<int> missing;       // sorted
    std::vector<int> observed_idx;  // sorted, complement of missing
    std::vector<double> observed_val;
    std::optional<std::vector<double>> truth;  // full row, for scoring only

    bool fully_observed() const { return missing.empty(); }
    bool fully_missing() const { return observed_idx.empty(); }

    void validate() const {
        if (dim <= 0) throw std::invalid_argument("sample: dim must be positive");
        if (missing.size() + observed_idx.size() != static_cast<size_t>(dim))
            throw std::invalid_argument("sample: observed and missing must partition 0..dim");
        if (!all_finite(observed_val))
            throw std::invalid_argument("sample: observed values must be finite");
    }

    /// (y_M; x_O): replace the observed block of y with the conditioning values.
    void project(std::span<const double> y, std::span<double> out) const {
        for (int i = 0; i < dim; ++i) out[i] = y[i];
        for (size_t k = 0; k < observed_idx.size(); ++k) out[observed_idx[k]] = observed_val[k];
    }
};

/// Build a sample from a full row and a missing mask (1 = missing).
inline MaskedSample make_sample(std::span<const double> values, std::span<const std::uint8_t> miss,
                                bool keep_truth = false) {
    if (values.size() != miss.size())
        throw std::invalid_argument("make_sample: values/mask size mismatch");
    MaskedSample s;
    s.dim = static_cast<int>(values.size());
    for (int i = 0; i < s.dim; ++i) {
        if (miss[i]) {
            s.missing.push_back(i);
        } else {
            s.observed_idx.push_back(i);
            s.observed_val.push_back(values[i]);
        }
    }
    if (keep_truth) s.truth = std::vector<double>(values.begin(), values.end());
    s.validate();
    return s;
}

}  // namespace plmcmc
