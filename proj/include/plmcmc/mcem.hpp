#pragma once

// Monte Carlo EM: alternate PL-MCMC imputation of the incomplete training set
// with complete-data training epochs, including the Gaussian warm-up fill, the
// resampling schedule and observed-range clamping.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "plmcmc/data.hpp"
#include "plmcmc/grad.hpp"
#include "plmcmc/io.hpp"
#include "plmcmc/metrics.hpp"
#include "plmcmc/parallel.hpp"
#include "plmcmc/sampler.hpp"

namespace plmcmc {

/// Piecewise-constant override of sigma_r by training epoch (the image recipe
/// reduces the resample scale late in training). Empty = constant.
struct SigmaRSchedule {
    std::vector<std::pair<long, double>> points;  // (from_epoch, sigma_r), ascending

    double at(long epoch, double base) const {
        double v = base;
        for (const auto& [from, s] : points)
            if (epoch >= from) v = s;
        return v;
    }
};

struct McemConfig {
    long total_epochs = 1000;
    long resample_interval = 50;
    long warmup_epochs = 50;
    SamplerConfig sampler;
    OptimizerState optimizer;
    long batch_size = 0;
    bool clamp = true;
    SigmaRSchedule sigma_r_schedule;
    std::string run_dir;  // when set: history.csv + ckpt/{epoch}/ snapshots
    std::uint64_t seed = 0;

    void validate() const {
        if (total_epochs < 0 || warmup_epochs < 0)
            throw std::invalid_argument("mcem: epoch counts must be >= 0");
        if (warmup_epochs > total_epochs)
            throw std::invalid_argument("mcem: warmup_epochs must be <= total_epochs");
        if (resample_interval <= 0)
            throw std::invalid_argument("mcem: resample_interval must be positive");
        if (batch_size <= 0) throw std::invalid_argument("mcem: batch_size must be positive");
        sampler.validate();
        optimizer.validate();
    }
};

/// The training set X' in whitened coordinates: current values, mask, clamp
/// bounds and (optionally) original-unit ground truth for scoring.
struct ImputedDataset {
    std::vector<std::string> columns;
    Mat data;                            // whitened representation
    std::vector<std::uint8_t> missing;   // 1 = imputed entry
    ColumnRange clamp_range;             // observed min/max, whitened units
    std::optional<WhiteningStats> stats; // map back to original units
    std::optional<Mat> truth;            // original units
    std::vector<double> truth_sigmas;    // ground-truth per-attribute std

    long rows() const { return data.rows; }
    bool is_missing(long r, int c) const {
        return missing[static_cast<size_t>(r) * data.cols + c] != 0;
    }
};

/// Builds the training-set view from an already-whitened table.
inline ImputedDataset make_imputed_dataset(const MaskedTable& whitened,
                                           std::optional<WhiteningStats> stats) {
    ImputedDataset ds;
    ds.columns = whitened.table.columns;
    ds.data.rows = whitened.table.rows;
    ds.data.cols = whitened.table.cols;
    ds.data.a = whitened.table.values;
    ds.missing = whitened.missing;
    ds.clamp_range = observed_range(whitened);
    ds.stats = std::move(stats);
    if (whitened.truth) {
        Mat t(whitened.table.rows, whitened.table.cols);
        t.a = *whitened.truth;
        ds.truth_sigmas = column_stds(t);
        ds.truth = std::move(t);
    }
    return ds;
}

/// Rows and masks (and truth) repeated k times; adds no information.
inline ImputedDataset duplicate_dataset(const ImputedDataset& ds, int k) {
    if (k < 1) throw std::invalid_argument("duplicate_dataset: k must be >= 1");
    ImputedDataset out = ds;
    out.data.rows = ds.data.rows * k;
    out.data.a.clear();
    out.missing.clear();
    if (ds.truth) out.truth = Mat(out.data.rows, ds.data.cols);
    for (int copy = 0; copy < k; ++copy) {
        out.data.a.insert(out.data.a.end(), ds.data.a.begin(), ds.data.a.end());
        out.missing.insert(out.missing.end(), ds.missing.begin(), ds.missing.end());
        if (ds.truth)
            std::copy(ds.truth->a.begin(), ds.truth->a.end(),
                      out.truth->a.begin() + static_cast<size_t>(copy) * ds.truth->a.size());
    }
    return out;
}

/// Every missing entry becomes a standard normal draw (whitened coordinates);
/// observed entries are untouched.
inline void warmup_fill(ImputedDataset& ds, Rng& rng) {
    for (size_t i = 0; i < ds.missing.size(); ++i)
        if (ds.missing[i]) ds.data.a[i] = rng.normal();
}

struct ImputeReport {
    long imputed_rows = 0;
    long failed_rows = 0;
    long incidents = 0;
};

/// One PL-MCMC chain per incomplete row; final completions overwrite the
/// missing entries, clamped to the observed attribute range when requested.
/// Chains draw from (seed, row index, chain 0, round) streams, so the result
/// is independent of scheduling.
inline ImputeReport impute_dataset(const FlowModel& model, ImputedDataset& ds,
                                   const SamplerConfig& cfg, std::uint64_t seed,
                                   std::uint64_t round, bool clamp) {
    cfg.validate();
    ImputeReport report;
    std::vector<long> todo;
    for (long r = 0; r < ds.rows(); ++r) {
        for (int c = 0; c < ds.data.cols; ++c)
            if (ds.is_missing(r, c)) {
                todo.push_back(r);
                break;
            }
    }
    if (todo.empty()) return report;

    SamplerConfig row_cfg = cfg;
    row_cfg.record_proposals = false;
    row_cfg.checkpoint_interval = 0;

    const long block_size = 512;
    std::vector<MaskedSample> samples(std::min<long>(block_size, (long)todo.size()));
    for (size_t start = 0; start < todo.size(); start += block_size) {
        const size_t end = std::min(todo.size(), start + block_size);
        ChainPack pack(model, row_cfg);
        for (size_t i = start; i < end; ++i) {
            const long r = todo[i];
            samples[i - start] = make_sample(
                std::span<const double>(ds.data.row(r), ds.data.cols),
                std::span<const std::uint8_t>(ds.missing.data() + r * ds.data.cols,
                                              ds.data.cols));
            pack.add(&samples[i - start], chain_rng({seed, static_cast<std::uint64_t>(r), round}, 0));
        }
        auto write_back = [&](size_t i, const ChainResult& res) {
            const long r = todo[i];
            const auto& s = samples[i - start];
            for (size_t j = 0; j < s.missing.size(); ++j) {
                double v = res.completion[j];
                if (clamp)
                    v = std::clamp(v, ds.clamp_range.lo[s.missing[j]],
                                   ds.clamp_range.hi[s.missing[j]]);
                ds.data.at(static_cast<int>(r), s.missing[j]) = v;
            }
            report.incidents += res.trace.incidents;
            report.imputed_rows += 1;
        };
        try {
            pack.run();
            for (size_t i = start; i < end; ++i) write_back(i, pack.result(i - start));
        } catch (const std::exception&) {
            // Retry row by row so one bad row keeps only its own previous value.
            for (size_t i = start; i < end; ++i) {
                const long r = todo[i];
                try {
                    auto res = run_chain(model, samples[i - start], row_cfg,
                                         chain_rng({seed, static_cast<std::uint64_t>(r), round}, 0));
                    write_back(i, res);
                } catch (const std::exception& e) {
                    report.failed_rows += 1;
                    std::cerr << "[plmcmc] warning: imputation failed for row " << r << ": "
                              << e.what() << "\n";
                }
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// MC-EM training loop
// ---------------------------------------------------------------------------

struct McemHistoryRow {
    long epoch = 0;
    double mean_nll = 0.0;
    std::optional<double> nmse;  // recorded at resample events when truth is known
};

struct McemResult {
    FlowModel model;
    std::vector<McemHistoryRow> history;
    bool aborted = false;
    long last_checkpoint_epoch = -1;
};

namespace detail {

inline std::optional<double> dataset_nmse(const ImputedDataset& ds) {
    if (!ds.truth || !ds.stats) return std::nullopt;
    Mat imputed = ds.data;
    unwhiten_values(imputed.a, imputed.cols, *ds.stats);
    return nmse(imputed, *ds.truth, ds.missing, ds.truth_sigmas);
}

inline void write_checkpoint(const std::string& run_dir, long epoch, const FlowModel& m,
                             const ImputedDataset& ds) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(run_dir) / "ckpt" / std::to_string(epoch);
    fs::create_directories(dir);
    save_model((dir / "model.json").string(), m, ds.stats);
    MaskedTable view;
    view.table.columns = ds.columns;
    view.table.rows = static_cast<int>(ds.rows());
    view.table.cols = ds.data.cols;
    view.table.values = ds.data.a;
    view.missing.assign(ds.missing.size(), 0);
    save_csv((dir / "imputed.csv").string(), view, false);
}

}  // namespace detail

/// Algorithm: warm-up fill, then per epoch optionally re-impute with the
/// current model (every `resample_interval` epochs once warm-up has passed)
/// and run one complete-data training epoch on the imputed set. Non-finite
/// training aborts back to the last checkpointed model.
inline McemResult mcem_train(FlowModel model, ImputedDataset ds, const McemConfig& cfg) {
    cfg.validate();
    McemResult out;
    std::ofstream history_file;
    if (!cfg.run_dir.empty()) {
        std::filesystem::create_directories(cfg.run_dir);
        history_file.open(std::filesystem::path(cfg.run_dir) / "history.csv");
        history_file << "epoch,mean_nll,nmse\n";
    }

    Rng train_rng(stream_seed(cfg.seed, 0x747261696eULL));  // training stream
    OptimizerState opt = cfg.optimizer;
    FlowModel last_good = model;
    long last_good_epoch = -1;

    for (long epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        std::optional<double> nmse_now;
        if (epoch < cfg.warmup_epochs) {
            // Fresh Gaussian fill at each warm-up epoch.
            Rng fill_rng(stream_seed(cfg.seed, 0x66696c6cULL, static_cast<std::uint64_t>(epoch)));
            warmup_fill(ds, fill_rng);
        } else if (epoch % cfg.resample_interval == 0) {
            SamplerConfig scfg = cfg.sampler;
            scfg.sigma_r = cfg.sigma_r_schedule.at(epoch, cfg.sampler.sigma_r);
            impute_dataset(model, ds, scfg, cfg.seed, static_cast<std::uint64_t>(epoch),
                           cfg.clamp);
            nmse_now = detail::dataset_nmse(ds);
            if (!cfg.run_dir.empty()) {
                detail::write_checkpoint(cfg.run_dir, epoch, model, ds);
                out.last_checkpoint_epoch = epoch;
            }
            last_good = model;
            last_good_epoch = epoch;
        }

        double mean_nll = 0.0;
        bool failed = false;
        try {
            mean_nll = train_epoch(model, ds.data, cfg.batch_size, opt, train_rng);
            bool finite = true;
            zip_params(model, [&](std::vector<double>& p) { finite = finite && all_finite(p); });
            if (!finite) failed = true;
        } catch (const std::runtime_error& e) {
            std::cerr << "[plmcmc] mcem aborted at epoch " << epoch << ": " << e.what() << "\n";
            failed = true;
        }
        if (failed) {
            out.aborted = true;
            model = last_good;
            std::cerr << "[plmcmc] restored model from epoch " << last_good_epoch << "\n";
            break;
        }

        out.history.push_back({epoch, mean_nll, nmse_now});
        if (history_file.is_open()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", mean_nll);
            history_file << epoch << "," << buf << ",";
            if (nmse_now) {
                std::snprintf(buf, sizeof buf, "%.17g", *nmse_now);
                history_file << buf;
            }
            history_file << "\n";
        }
    }
    out.model = std::move(model);
    return out;
}

// ---------------------------------------------------------------------------
// Imputation scoring (individual samples vs chain averages)
// ---------------------------------------------------------------------------

struct ImputationScores {
    double nmse_avg = 0.0, nmse_ind = 0.0;
    double rmse_avg = 0.0, rmse_ind = 0.0;
    double nmse_mean_baseline = 0.0;
    long n_examples = 0;
    Mat imputed_avg;  // original units
};

/// Runs `chains` independent chains per incomplete row of an original-units
/// masked table and scores the average-completion and individual-sample
/// imputations against the ground truth. The model operates in whitened
/// coordinates given by `stats`.
inline ImputationScores evaluate_imputation(const FlowModel& model, const MaskedTable& masked,
                                            const WhiteningStats& stats, const SamplerConfig& cfg,
                                            int chains, std::uint64_t seed, std::uint64_t round) {
    cfg.validate();
    if (!masked.truth) throw std::invalid_argument("evaluate_imputation: ground truth required");
    if (chains < 1) throw std::invalid_argument("evaluate_imputation: chains must be >= 1");

    MaskedTable white = masked;
    for (int r = 0; r < white.table.rows; ++r)
        for (int c = 0; c < white.table.cols; ++c)
            white.table.at(r, c) = (white.table.at(r, c) - stats.mean[c]) / stats.std[c];

    const int cols = masked.table.cols;
    Mat truth(masked.table.rows, cols);
    truth.a = *masked.truth;
    const auto sigmas = column_stds(truth);

    SamplerConfig row_cfg = cfg;
    row_cfg.record_proposals = false;
    row_cfg.checkpoint_interval = 0;

    ImputationScores out;
    out.imputed_avg = truth;  // observed entries stay; missing overwritten below
    std::vector<Mat> imputed_ind(chains, out.imputed_avg);

    std::vector<long> todo;
    for (int r = 0; r < masked.table.rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (masked.is_missing(r, c)) {
                todo.push_back(r);
                break;
            }
    if (todo.empty()) throw std::invalid_argument("evaluate_imputation: nothing to impute");

    const long rows_per_block = std::max<long>(1, 2048 / chains);
    std::vector<MaskedSample> samples(static_cast<size_t>(rows_per_block));
    for (size_t start = 0; start < todo.size(); start += rows_per_block) {
        const size_t end = std::min(todo.size(), start + rows_per_block);
        ChainPack pack(model, row_cfg);
        for (size_t i = start; i < end; ++i) {
            const long r = todo[i];
            samples[i - start] = make_sample(
                std::span<const double>(white.table.values.data() + r * cols, cols),
                std::span<const std::uint8_t>(white.missing.data() + r * cols, cols));
            for (int c = 0; c < chains; ++c)
                pack.add(&samples[i - start],
                         chain_rng({seed, static_cast<std::uint64_t>(r), round}, c));
        }
        pack.run();
        for (size_t i = start; i < end; ++i) {
            const int r = static_cast<int>(todo[i]);
            const auto& s = samples[i - start];
            std::vector<double> acc(s.missing.size(), 0.0);
            for (int ch = 0; ch < chains; ++ch) {
                const auto res = pack.result(static_cast<int>((i - start) * chains + ch));
                for (size_t j = 0; j < s.missing.size(); ++j) {
                    const int c = s.missing[j];
                    const double v = res.completion[j] * stats.std[c] + stats.mean[c];
                    imputed_ind[ch].at(r, c) = v;
                    acc[j] += v;
                }
            }
            for (size_t j = 0; j < s.missing.size(); ++j)
                out.imputed_avg.at(r, s.missing[j]) = acc[j] / chains;
        }
    }

    out.n_examples = static_cast<long>(todo.size());
    out.nmse_avg = nmse(out.imputed_avg, truth, masked.missing, sigmas);
    out.rmse_avg = reconstruction_rmse(out.imputed_avg, truth, masked.missing);
    for (int ch = 0; ch < chains; ++ch) {
        out.nmse_ind += nmse(imputed_ind[ch], truth, masked.missing, sigmas) / chains;
        out.rmse_ind += reconstruction_rmse(imputed_ind[ch], truth, masked.missing) / chains;
    }

    // Observed-mean baseline.
    Mat mean_imputed = truth;
    const auto obs = observed_stats(masked);
    for (int r = 0; r < masked.table.rows; ++r)
        for (int c = 0; c < cols; ++c)
            if (masked.is_missing(r, c)) mean_imputed.at(r, c) = obs.mean[c];
    out.nmse_mean_baseline = nmse(mean_imputed, truth, masked.missing, sigmas);
    return out;
}

}  // namespace plmcmc
