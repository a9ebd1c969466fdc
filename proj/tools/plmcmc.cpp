// Command-line front end: reproducible train / impute / sample / diagnose runs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "plmcmc/data.hpp"
#include "plmcmc/grad.hpp"
#include "plmcmc/io.hpp"
#include "plmcmc/mcem.hpp"
#include "plmcmc/metrics.hpp"
#include "plmcmc/parallel.hpp"
#include "plmcmc/sampler.hpp"

using nlohmann::json;
using namespace plmcmc;
namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& pointer, const std::string& what)
        : std::runtime_error("config error at " + pointer + ": " + what) {}
};

template <class T>
T require_field(const json& j, const std::string& pointer) {
    try {
        return j.at(json::json_pointer(pointer)).get<T>();
    } catch (const json::out_of_range&) {
        throw ConfigError(pointer, "missing required field");
    } catch (const json::type_error&) {
        throw ConfigError(pointer, "wrong type");
    }
}

template <class T>
T field_or(const json& j, const std::string& pointer, T fallback) {
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) return fallback;
    try {
        return j.at(ptr).get<T>();
    } catch (const json::type_error&) {
        throw ConfigError(pointer, "wrong type");
    }
}

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    f << text;
}

PriorKind parse_prior(const std::string& s, const std::string& ptr) {
    if (s == "normal") return PriorKind::Normal;
    if (s == "logistic") return PriorKind::Logistic;
    throw ConfigError(ptr, "expected 'normal' or 'logistic'");
}

MaskMechanism parse_mechanism(const std::string& s, const std::string& ptr) {
    if (s == "independent") return MaskMechanism::Independent;
    if (s == "patch") return MaskMechanism::Patch;
    if (s == "square_observation") return MaskMechanism::SquareObservation;
    throw ConfigError(ptr, "expected independent | patch | square_observation");
}

/// Sampler block shared by train configs and the impute/diagnose flags.
SamplerConfig sampler_from_json(const json& j, const std::string& base) {
    SamplerConfig cfg;
    cfg.sigma_p = field_or<double>(j, base + "/sigma_p", cfg.sigma_p);
    cfg.sigma_r = field_or<double>(j, base + "/sigma_r", cfg.sigma_r);
    cfg.mix = field_or<double>(j, base + "/mix", cfg.mix);
    cfg.proposals = field_or<long>(j, base + "/proposals", cfg.proposals);
    cfg.init_scale = field_or<double>(j, base + "/init_scale", cfg.init_scale);
    cfg.exact_mixture_ratio = field_or<bool>(j, base + "/exact_mixture", false);
    cfg.checkpoint_interval = field_or<long>(j, base + "/checkpoint_interval", 200);
    const json::json_pointer aux_ptr(base + "/sigma_a");
    if (j.contains(aux_ptr) && j.at(aux_ptr).is_string()) {
        if (j.at(aux_ptr).get<std::string>() != "uniform")
            throw ConfigError(base + "/sigma_a", "expected a number or 'uniform'");
        cfg.aux = AuxiliaryDensity::uniform();
    } else {
        cfg.aux = AuxiliaryDensity::normal_at(field_or<double>(j, base + "/sigma_a", 1e-3));
    }
    const std::string init = field_or<std::string>(j, base + "/init", "prior");
    if (init == "prior") cfg.init = InitPolicy::PriorSample;
    else if (init == "observed_fill") cfg.init = InitPolicy::ObservedFill;
    else throw ConfigError(base + "/init", "expected 'prior' or 'observed_fill'");
    return cfg;
}

json sampler_to_json(const SamplerConfig& cfg) {
    json out{{"sigma_p", cfg.sigma_p},
             {"sigma_r", cfg.sigma_r},
             {"mix", cfg.mix},
             {"proposals", cfg.proposals},
             {"init", cfg.init == InitPolicy::ObservedFill ? "observed_fill" : "prior"},
             {"init_scale", cfg.init_scale},
             {"exact_mixture", cfg.exact_mixture_ratio},
             {"checkpoint_interval", cfg.checkpoint_interval}};
    if (cfg.aux.kind == AuxKind::ImproperUniform) out["sigma_a"] = "uniform";
    else out["sigma_a"] = cfg.aux.sigma_a;
    return out;
}

OptimizerState optimizer_from_json(const json& j) {
    const std::string kind = require_field<std::string>(j, "/optimizer/kind");
    const double lr = require_field<double>(j, "/optimizer/lr");
    if (kind == "adamax")
        return make_adamax(lr, field_or<double>(j, "/optimizer/beta1", 0.9),
                           field_or<double>(j, "/optimizer/beta2", 0.999),
                           field_or<double>(j, "/optimizer/eps", 1e-8));
    if (kind == "rmsprop")
        return make_rmsprop(lr, field_or<double>(j, "/optimizer/momentum", 0.9),
                            field_or<double>(j, "/optimizer/alpha", 0.99),
                            field_or<double>(j, "/optimizer/eps", 1e-8));
    throw ConfigError("/optimizer/kind", "expected 'adamax' or 'rmsprop'");
}

void write_full_csv(const fs::path& path, const std::vector<std::string>& columns, const Mat& m) {
    MaskedTable view;
    view.table.columns = columns;
    view.table.rows = m.rows;
    view.table.cols = m.cols;
    view.table.values = m.a;
    view.missing.assign(m.a.size(), 0);
    save_csv(path.string(), view, false);
}

WhiteningStats stats_or_identity(const LoadedModel& lm) {
    if (lm.whitening) return *lm.whitening;
    WhiteningStats st;
    st.mean.assign(lm.model.dim, 0.0);
    st.std.assign(lm.model.dim, 1.0);
    return st;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_override,
              const std::vector<std::string>& overrides, bool dry_run) {
    json cfg;
    {
        std::ifstream f(config_path);
        if (!f) throw std::runtime_error("cannot open config " + config_path);
        cfg = json::parse(f);
    }
    // Flags take precedence over file values.
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || ov.empty() || ov[0] != '/')
            throw ConfigError(ov, "--set expects /json/pointer=value");
        const std::string ptr = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;  // plain string
        cfg[json::json_pointer(ptr)] = value;
    }

    if (field_or<int>(cfg, "/schema_version", 1) != 1)
        throw ConfigError("/schema_version", "unsupported schema version");

    const std::uint64_t seed = require_field<std::uint64_t>(cfg, "/seed");
    const std::string data_path = require_field<std::string>(cfg, "/dataset/path");

    FlowSpec spec;
    spec.levels = field_or<int>(cfg, "/flow/levels", 4);
    spec.depth = field_or<int>(cfg, "/flow/depth", 5);
    spec.hidden = require_field<int>(cfg, "/flow/hidden");
    spec.hidden_layers = field_or<int>(cfg, "/flow/hidden_layers", 1);
    spec.prior = parse_prior(field_or<std::string>(cfg, "/flow/prior", "normal"), "/flow/prior");

    McemConfig mcem;
    mcem.total_epochs = require_field<long>(cfg, "/mcem/total_epochs");
    mcem.resample_interval = field_or<long>(cfg, "/mcem/resample_interval", 50);
    mcem.warmup_epochs = field_or<long>(cfg, "/mcem/warmup_epochs", 50);
    mcem.batch_size = require_field<long>(cfg, "/mcem/batch_size");
    mcem.clamp = field_or<bool>(cfg, "/mcem/clamp", true);
    const int duplicate = field_or<int>(cfg, "/mcem/duplicate", 1);
    if (cfg.contains(json::json_pointer("/mcem/sigma_r_schedule"))) {
        for (const auto& pair : cfg.at(json::json_pointer("/mcem/sigma_r_schedule"))) {
            if (!pair.is_array() || pair.size() != 2)
                throw ConfigError("/mcem/sigma_r_schedule", "expected [[epoch, sigma_r], ...]");
            mcem.sigma_r_schedule.points.push_back({pair[0].get<long>(), pair[1].get<double>()});
        }
    }
    mcem.sampler = sampler_from_json(cfg, "/sampler");
    mcem.optimizer = optimizer_from_json(cfg);
    mcem.seed = seed;

    const long eval_chains = field_or<long>(cfg, "/eval/chains", 25);
    const long eval_proposals = field_or<long>(cfg, "/eval/proposals", mcem.sampler.proposals);

    // Fully resolved configuration (defaults applied) for the run directory.
    json resolved;
    resolved["schema_version"] = 1;
    resolved["seed"] = seed;
    resolved["threads"] = default_thread_count();
    resolved["dataset"]["path"] = data_path;
    if (cfg.contains(json::json_pointer("/dataset/grid")))
        resolved["dataset"]["grid"] = cfg.at(json::json_pointer("/dataset/grid"));
    if (cfg.contains(json::json_pointer("/dataset/mask"))) {
        resolved["dataset"]["mask"] = {
            {"mechanism", require_field<std::string>(cfg, "/dataset/mask/mechanism")},
            {"rate", require_field<double>(cfg, "/dataset/mask/rate")},
            {"seed", require_field<std::uint64_t>(cfg, "/dataset/mask/seed")}};
    }
    resolved["dataset"]["double_attributes"] =
        field_or<std::string>(cfg, "/dataset/double_attributes", "auto");
    resolved["flow"] = {{"levels", spec.levels},
                        {"depth", spec.depth},
                        {"hidden", spec.hidden},
                        {"hidden_layers", spec.hidden_layers},
                        {"prior", spec.prior == PriorKind::Normal ? "normal" : "logistic"}};
    resolved["mcem"] = {{"total_epochs", mcem.total_epochs},
                        {"resample_interval", mcem.resample_interval},
                        {"warmup_epochs", mcem.warmup_epochs},
                        {"batch_size", mcem.batch_size},
                        {"clamp", mcem.clamp},
                        {"duplicate", duplicate}};
    if (!mcem.sigma_r_schedule.points.empty()) {
        auto sched = json::array();
        for (auto [e, s] : mcem.sigma_r_schedule.points) sched.push_back(json::array({e, s}));
        resolved["mcem"]["sigma_r_schedule"] = sched;
    }
    resolved["sampler"] = sampler_to_json(mcem.sampler);
    resolved["optimizer"] = cfg.at("optimizer");
    resolved["eval"] = {{"chains", eval_chains}, {"proposals", eval_proposals}};

    const std::string digest = fnv1a_hex(resolved.dump());
    resolved["config_digest"] = digest;

    if (dry_run) {
        std::cout << resolved.dump(1) << "\n";
        return 0;
    }

    const fs::path out_dir = out_override.empty()
                                 ? fs::path(field_or<std::string>(cfg, "/out", "run"))
                                 : fs::path(out_override);
    fs::create_directories(out_dir);
    write_text(out_dir / "resolved_config.json", resolved.dump(1) + "\n");

    // Dataset pipeline: load, mask, optionally double attributes, whiten.
    auto loaded = load_csv(data_path);
    if (cfg.contains(json::json_pointer("/dataset/grid"))) {
        auto g = cfg.at(json::json_pointer("/dataset/grid")).get<std::vector<int>>();
        if (g.size() != 2) throw ConfigError("/dataset/grid", "expected [h, w]");
        loaded.table.grid = {{g[0], g[1]}};
    }
    MaskedTable masked;
    if (cfg.contains(json::json_pointer("/dataset/mask"))) {
        if (loaded.n_missing() > 0)
            throw ConfigError("/dataset/mask", "mask spec requires a complete input CSV");
        MaskSpec ms;
        ms.mechanism = parse_mechanism(
            require_field<std::string>(cfg, "/dataset/mask/mechanism"), "/dataset/mask/mechanism");
        ms.rate = require_field<double>(cfg, "/dataset/mask/rate");
        ms.seed = require_field<std::uint64_t>(cfg, "/dataset/mask/seed");
        masked = apply_mask(loaded.table, ms);
    } else {
        masked = std::move(loaded);
    }

    const std::string dbl = field_or<std::string>(cfg, "/dataset/double_attributes", "auto");
    if (dbl == "true" || (dbl == "auto" && masked.table.cols % 2 == 1))
        masked = double_attributes(masked);
    else if (dbl != "false" && dbl != "auto")
        throw ConfigError("/dataset/double_attributes", "expected auto | true | false");

    MaskedTable original = masked;  // original units, pre-duplication (for evaluation)
    auto stats = whiten(masked);
    auto ds = make_imputed_dataset(masked, stats);
    if (duplicate > 1) ds = duplicate_dataset(ds, duplicate);

    spec.dim = masked.table.cols;
    Rng init_rng(stream_seed(seed, 0x696e6974ULL));
    FlowModel model = make_flow(spec, seed, init_rng);

    mcem.run_dir = out_dir.string();
    auto result = mcem_train(std::move(model), std::move(ds), mcem);
    save_model((out_dir / "model.json").string(), result.model, stats);

    json metrics = json::array();
    if (original.truth) {
        SamplerConfig eval_cfg = mcem.sampler;
        eval_cfg.proposals = eval_proposals;
        auto scores = evaluate_imputation(result.model, original, stats, eval_cfg,
                                          static_cast<int>(eval_chains), seed, 1000000007ULL);
        metrics.push_back(metric_report("nmse_avg", scores.nmse_avg, scores.n_examples, digest));
        metrics.push_back(metric_report("nmse_ind", scores.nmse_ind, scores.n_examples, digest));
        metrics.push_back(metric_report("rmse_avg", scores.rmse_avg, scores.n_examples, digest));
        metrics.push_back(metric_report("rmse_ind", scores.rmse_ind, scores.n_examples, digest));
        metrics.push_back(metric_report("nmse_mean_baseline", scores.nmse_mean_baseline,
                                        scores.n_examples, digest));
        write_full_csv(out_dir / "imputed.csv", original.table.columns, scores.imputed_avg);
    }
    metrics.push_back(metric_report(
        "final_mean_nll", result.history.empty() ? 0.0 : result.history.back().mean_nll,
        static_cast<long>(result.history.size()), digest));
    write_text(out_dir / "metrics.json", metrics.dump(1) + "\n");

    if (result.aborted) {
        std::cerr << "plmcmc train: aborted, last good checkpoint written\n";
        return 1;
    }
    std::cout << "trained " << mcem.total_epochs << " epochs; outputs in " << out_dir.string()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// impute
// ---------------------------------------------------------------------------

struct ImputeFlags {
    std::string model_path, data_path, truth_path, out_path, metrics_path, trace_dir;
    std::string mode = "avg";
    std::string sigma_a;
    int chains = 25;
    std::uint64_t seed = 0;
    SamplerConfig sampler;
};

int cmd_impute(ImputeFlags f) {
    if (!f.sigma_a.empty()) {
        if (f.sigma_a == "uniform") f.sampler.aux = AuxiliaryDensity::uniform();
        else f.sampler.aux = AuxiliaryDensity::normal_at(std::stod(f.sigma_a));
    }
    if (f.mode != "avg" && f.mode != "ind")
        throw std::invalid_argument("impute: --mode must be avg or ind");
    if (f.chains < 1) throw std::invalid_argument("impute: --chains must be >= 1");
    auto lm = load_model(f.model_path);
    const auto stats = stats_or_identity(lm);
    auto data = load_csv(f.data_path);
    if (data.table.cols != lm.model.dim)
        throw std::invalid_argument("impute: data width does not match model dim");

    MaskedTable white = data;
    for (int r = 0; r < white.table.rows; ++r)
        for (int c = 0; c < white.table.cols; ++c)
            white.table.at(r, c) = (white.table.at(r, c) - stats.mean[c]) / stats.std[c];

    SamplerConfig cfg = f.sampler;
    cfg.record_proposals = !f.trace_dir.empty();
    cfg.validate();

    Mat imputed(data.table.rows, data.table.cols);
    imputed.a = data.table.values;
    std::vector<MaskedSample> samples(data.table.rows);
    ChainPack pack(lm.model, cfg);
    std::vector<long> rows;
    for (int r = 0; r < data.table.rows; ++r) {
        bool any = false;
        for (int c = 0; c < data.table.cols; ++c) any = any || data.is_missing(r, c);
        if (!any) continue;
        samples[r] = make_sample(
            std::span<const double>(white.table.values.data() + (size_t)r * white.table.cols,
                                    white.table.cols),
            std::span<const std::uint8_t>(white.missing.data() + (size_t)r * white.table.cols,
                                          white.table.cols));
        for (int c = 0; c < f.chains; ++c)
            pack.add(&samples[r], chain_rng({f.seed, static_cast<std::uint64_t>(r), 0}, c));
        rows.push_back(r);
    }
    if (rows.empty()) throw std::invalid_argument("impute: no missing cells in the data CSV");
    pack.run();

    for (size_t i = 0; i < rows.size(); ++i) {
        const int r = static_cast<int>(rows[i]);
        const auto& s = samples[r];
        for (size_t j = 0; j < s.missing.size(); ++j) {
            const int c = s.missing[j];
            double v = 0.0;
            if (f.mode == "ind") {
                v = pack.result(static_cast<int>(i * f.chains)).completion[j];
            } else {
                for (int ch = 0; ch < f.chains; ++ch)
                    v += pack.result(static_cast<int>(i * f.chains + ch)).completion[j];
                v /= f.chains;
            }
            imputed.at(r, c) = v * stats.std[c] + stats.mean[c];
        }
        if (!f.trace_dir.empty()) {
            fs::create_directories(f.trace_dir);
            const auto res = pack.result(static_cast<int>(i * f.chains));
            write_trace_csv(
                (fs::path(f.trace_dir) / ("row" + std::to_string(r) + "_trace.csv")).string(),
                res.trace);
            write_checkpoints_csv(
                (fs::path(f.trace_dir) / ("row" + std::to_string(r) + "_checkpoints.csv")).string(),
                res.trace, s);
        }
    }
    write_full_csv(f.out_path, data.table.columns, imputed);

    if (!f.truth_path.empty()) {
        auto truth_csv = load_csv(f.truth_path);
        if (truth_csv.n_missing() > 0 || truth_csv.table.rows != data.table.rows)
            throw std::invalid_argument("impute: truth CSV must be complete and match the data");
        Mat truth(data.table.rows, data.table.cols);
        truth.a = truth_csv.table.values;
        const auto sigmas = column_stds(truth);
        json metrics = json::array();
        const std::string digest = fnv1a_hex(sampler_to_json(cfg).dump() + f.mode);
        metrics.push_back(metric_report("nmse_" + f.mode,
                                        nmse(imputed, truth, data.missing, sigmas),
                                        static_cast<long>(rows.size()), digest));
        metrics.push_back(metric_report("rmse_" + f.mode,
                                        reconstruction_rmse(imputed, truth, data.missing),
                                        static_cast<long>(rows.size()), digest));
        const auto obs = observed_stats(data);
        Mat mean_imputed = truth;
        for (int r = 0; r < data.table.rows; ++r)
            for (int c = 0; c < data.table.cols; ++c)
                if (data.is_missing(r, c)) mean_imputed.at(r, c) = obs.mean[c];
        metrics.push_back(metric_report("nmse_mean_baseline",
                                        nmse(mean_imputed, truth, data.missing, sigmas),
                                        static_cast<long>(rows.size()), digest));
        if (f.metrics_path.empty()) f.metrics_path = f.out_path + ".metrics.json";
        write_text(f.metrics_path, metrics.dump(1) + "\n");
    }
    std::cout << "imputed " << rows.size() << " rows -> " << f.out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

int cmd_sample(const std::string& model_path, int n, double scale, std::uint64_t seed,
               const std::string& out_path) {
    auto lm = load_model(model_path);
    const auto stats = stats_or_identity(lm);
    Rng rng(stream_seed(seed, 0x73616d706cULL));
    Mat xi(n, lm.model.dim);
    for (int r = 0; r < n; ++r) {
        auto z = sample_prior(lm.model, scale, rng);
        std::copy(z.begin(), z.end(), xi.row(r));
    }
    FlowWorkspace ws;
    Mat x;
    forward_batch(lm.model, xi, x, ws);
    unwhiten_values(x.a, x.cols, stats);
    std::vector<std::string> columns;
    for (int c = 0; c < lm.model.dim; ++c) columns.push_back("x" + std::to_string(c));
    write_full_csv(out_path, columns, x);
    std::cout << "sampled " << n << " rows -> " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct DiagnoseFlags {
    std::string model_path, data_path, truth_path, stats_path, out_dir;
    int row = 0;
    int chains = 100;
    int replications = 10;
    long proposals = 2000;
    long checkpoint_interval = 200;
    double sigma_p = 0.01, sigma_r = 1.0, mix = 0.5, init_scale = 1.0;
    std::vector<std::string> sigma_a_list;
    bool baseline_gibbs = false;
    std::uint64_t seed = 0;
};

struct EnvelopeRow {
    std::string setting;
    long checkpoint = 0, proposals = 0, transformations = 0;
    double rmse_mean = 0, rmse_std = 0, acc_mean = 0, acc_std = 0;
};

void mean_and_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.size();
    sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / v.size());
}

int cmd_diagnose(const DiagnoseFlags& f) {
    auto lm = load_model(f.model_path);
    const auto stats = stats_or_identity(lm);
    const int dim = lm.model.dim;

    auto data = load_csv(f.data_path);
    if (f.row < 0 || f.row >= data.table.rows)
        throw std::invalid_argument("diagnose: --row out of range");
    if (data.table.cols != dim) throw std::invalid_argument("diagnose: data width != model dim");

    // Whitened conditioning row.
    std::vector<double> row_white(dim);
    std::vector<std::uint8_t> row_miss(dim);
    for (int c = 0; c < dim; ++c) {
        row_white[c] = (data.table.at(f.row, c) - stats.mean[c]) / stats.std[c];
        row_miss[c] = data.is_missing(f.row, c) ? 1 : 0;
    }
    auto sample = make_sample(row_white, row_miss);
    if (sample.fully_observed()) throw std::invalid_argument("diagnose: row has no missing values");

    auto truth_csv = load_csv(f.truth_path);
    if (truth_csv.table.cols != dim || f.row >= truth_csv.table.rows)
        throw std::invalid_argument("diagnose: truth CSV does not cover the row");
    std::vector<double> truth_m;
    for (int idx : sample.missing) truth_m.push_back(truth_csv.table.at(f.row, idx));

    // Gibbs proposal statistics: observed per-attribute mean/std of the
    // training data, mapped into the model's whitened space.
    GibbsStats gstats;
    if (f.baseline_gibbs) {
        if (f.stats_path.empty())
            throw std::invalid_argument("diagnose: --stats-from required for the gibbs baseline");
        auto train_csv = load_csv(f.stats_path);
        if (train_csv.table.cols != dim)
            throw std::invalid_argument("diagnose: stats CSV width != model dim");
        const auto obs = observed_stats(train_csv);
        gstats.mu.resize(dim);
        gstats.sigma.resize(dim);
        for (int c = 0; c < dim; ++c) {
            gstats.mu[c] = (obs.mean[c] - stats.mean[c]) / stats.std[c];
            gstats.sigma[c] = obs.std[c] / stats.std[c];
        }
    }

    auto unwhitened_rmse = [&](const std::vector<double>& est_white) {
        double acc = 0.0;
        for (size_t j = 0; j < est_white.size(); ++j) {
            const int c = sample.missing[j];
            const double v = est_white[j] * stats.std[c] + stats.mean[c];
            acc += (v - truth_m[j]) * (v - truth_m[j]);
        }
        return std::sqrt(acc / est_white.size());
    };

    std::vector<EnvelopeRow> rows;
    json decisions = json::array();
    const long n_ckpt = f.proposals / f.checkpoint_interval;

    // PL-MCMC settings: one per sigma_a value. Chains reuse the same streams
    // across settings, so comparisons run under common random numbers.
    for (const auto& tok : f.sigma_a_list) {
        SamplerConfig cfg;
        cfg.sigma_p = f.sigma_p;
        cfg.sigma_r = f.sigma_r;
        cfg.mix = f.mix;
        cfg.proposals = f.proposals;
        cfg.checkpoint_interval = f.checkpoint_interval;
        cfg.init = InitPolicy::PriorSample;
        cfg.init_scale = f.init_scale;
        cfg.aux = tok == "uniform" ? AuxiliaryDensity::uniform()
                                   : AuxiliaryDensity::normal_at(std::stod(tok));
        cfg.validate();
        const std::string name = "plmcmc_sigma_a=" + tok;

        std::vector<std::vector<double>> rmse(n_ckpt), acc(n_ckpt);
        DecisionChange pooled;
        for (int rep = 0; rep < f.replications; ++rep) {
            ChainPack pack(lm.model, cfg);
            for (int c = 0; c < f.chains; ++c)
                pack.add(&sample, chain_rng({f.seed, 0, static_cast<std::uint64_t>(rep)}, c));
            pack.run();
            for (long k = 1; k <= n_ckpt; ++k) {
                std::vector<double> est(sample.missing.size(), 0.0);
                double acc_rate = 0.0;
                for (int c = 0; c < f.chains; ++c) {
                    const auto& ck = pack.slots()[c].trace.checkpoints[k];
                    const auto& prev = pack.slots()[c].trace.checkpoints[k - 1];
                    for (size_t j = 0; j < est.size(); ++j) est[j] += ck.y_m[j];
                    acc_rate += static_cast<double>(ck.accepted_so_far - prev.accepted_so_far) /
                                (ck.proposal_index - prev.proposal_index);
                }
                for (double& v : est) v /= f.chains;
                rmse[k - 1].push_back(unwhitened_rmse(est));
                acc[k - 1].push_back(acc_rate / f.chains);
            }
            auto dc = decision_change_probability(
                lm.model, sample, cfg,
                chain_rng({f.seed, 1, static_cast<std::uint64_t>(rep)}, 0), f.proposals);
            pooled.accept_count += dc.accept_count;
            pooled.reject_count += dc.reject_count;
            pooled.changed_given_accept += dc.changed_given_accept;
            pooled.changed_given_reject += dc.changed_given_reject;
        }
        for (long k = 1; k <= n_ckpt; ++k) {
            EnvelopeRow r;
            r.setting = name;
            r.checkpoint = k;
            r.proposals = k * f.checkpoint_interval;
            r.transformations = 2 * r.proposals;  // forward + inverse per proposal
            mean_and_std(rmse[k - 1], r.rmse_mean, r.rmse_std);
            mean_and_std(acc[k - 1], r.acc_mean, r.acc_std);
            rows.push_back(r);
        }
        decisions.push_back({{"setting", name},
                             {"p_change_given_accept", pooled.p_change_given_accept()},
                             {"p_change_given_reject", pooled.p_change_given_reject()},
                             {"accept_count", pooled.accept_count},
                             {"reject_count", pooled.reject_count}});
    }

    if (f.baseline_gibbs) {
        // Budget matching: one flow transformation per Gibbs proposal vs two
        // per PL-MCMC proposal, so the Gibbs chain gets 2x the proposals.
        const long g_interval = 2 * f.checkpoint_interval;
        std::vector<std::vector<double>> rmse(n_ckpt), acc(n_ckpt);
        for (int rep = 0; rep < f.replications; ++rep) {
            std::vector<std::vector<double>> xs(f.chains);
            std::vector<double> lps(f.chains);
            std::vector<Rng> rngs;
            std::vector<long> accepted(f.chains, 0), proposals_done(f.chains, 0);
            std::vector<long> prev_acc(f.chains, 0);
            for (int c = 0; c < f.chains; ++c) {
                rngs.push_back(chain_rng({f.seed, 2, static_cast<std::uint64_t>(rep)}, c));
                auto z = sample_prior(lm.model, 1.0, rngs[c]);
                auto x0 = forward(lm.model, z).value;
                std::vector<double> proj(dim);
                sample.project(x0, proj);
                xs[c] = proj;
                lps[c] = log_prob(lm.model, xs[c]);
            }
            for (long k = 1; k <= n_ckpt; ++k) {
                std::vector<double> est(sample.missing.size(), 0.0);
                double acc_rate = 0.0;
                for (int c = 0; c < f.chains; ++c) {
                    while (proposals_done[c] < k * g_interval) {
                        accepted[c] +=
                            gibbs_sweep(xs[c], lm.model, sample, gstats, rngs[c], lps[c]);
                        proposals_done[c] += static_cast<long>(sample.missing.size());
                    }
                    for (size_t j = 0; j < est.size(); ++j) est[j] += xs[c][sample.missing[j]];
                    acc_rate += static_cast<double>(accepted[c] - prev_acc[c]) / g_interval;
                    prev_acc[c] = accepted[c];
                }
                for (double& v : est) v /= f.chains;
                rmse[k - 1].push_back(unwhitened_rmse(est));
                acc[k - 1].push_back(acc_rate / f.chains);
            }
        }
        for (long k = 1; k <= n_ckpt; ++k) {
            EnvelopeRow r;
            r.setting = "gibbs";
            r.checkpoint = k;
            r.proposals = k * g_interval;
            r.transformations = r.proposals;  // one transformation per proposal
            mean_and_std(rmse[k - 1], r.rmse_mean, r.rmse_std);
            mean_and_std(acc[k - 1], r.acc_mean, r.acc_std);
            rows.push_back(r);
        }
    }

    fs::create_directories(f.out_dir);
    {
        std::ofstream env(fs::path(f.out_dir) / "envelopes.csv");
        env << "setting,checkpoint,proposals,transformations,rmse_mean,rmse_std,acc_mean,acc_std\n";
        char buf[64];
        for (const auto& r : rows) {
            env << r.setting << "," << r.checkpoint << "," << r.proposals << ","
                << r.transformations;
            for (double v : {r.rmse_mean, r.rmse_std, r.acc_mean, r.acc_std}) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                env << "," << buf;
            }
            env << "\n";
        }
    }
    write_text(fs::path(f.out_dir) / "decisions.json", decisions.dump(1) + "\n");

    json resolved{{"model", f.model_path},
                  {"data", f.data_path},
                  {"row", f.row},
                  {"chains", f.chains},
                  {"replications", f.replications},
                  {"proposals", f.proposals},
                  {"checkpoint_interval", f.checkpoint_interval},
                  {"sigma_p", f.sigma_p},
                  {"sigma_r", f.sigma_r},
                  {"mix", f.mix},
                  {"init_scale", f.init_scale},
                  {"sigma_a", f.sigma_a_list},
                  {"baseline_gibbs", f.baseline_gibbs},
                  {"seed", f.seed},
                  {"threads", default_thread_count()}};
    write_text(fs::path(f.out_dir) / "resolved_config.json", resolved.dump(1) + "\n");
    std::cout << "diagnose wrote " << rows.size() << " envelope rows -> " << f.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PL-MCMC conditional sampling and MC-EM training for NICE-style flows"};
    app.require_subcommand(1);

    auto* train_cmd = app.add_subcommand("train", "MC-EM training from a JSON config");
    std::string config_path, out_override;
    std::vector<std::string> overrides;
    bool dry_run = false;
    train_cmd->add_option("--config", config_path, "JSON config path")->required();
    train_cmd->add_option("--out", out_override, "output directory (overrides config)");
    train_cmd->add_option("--set", overrides,
                          "override a config value: /json/pointer=value (repeatable)");
    train_cmd->add_flag("--dry-run", dry_run, "print the resolved config and exit");

    auto* impute_cmd = app.add_subcommand("impute", "conditional imputation of a holey CSV");
    ImputeFlags imp;
    impute_cmd->add_option("--model", imp.model_path)->required();
    impute_cmd->add_option("--data", imp.data_path)->required();
    impute_cmd->add_option("--truth", imp.truth_path);
    impute_cmd->add_option("--out", imp.out_path)->required();
    impute_cmd->add_option("--metrics", imp.metrics_path);
    impute_cmd->add_option("--trace-dir", imp.trace_dir);
    impute_cmd->add_option("--chains", imp.chains);
    impute_cmd->add_option("--mode", imp.mode, "avg | ind");
    impute_cmd->add_option("--seed", imp.seed);
    impute_cmd->add_option("--sigma-p", imp.sampler.sigma_p);
    impute_cmd->add_option("--sigma-r", imp.sampler.sigma_r);
    impute_cmd->add_option("--mix", imp.sampler.mix);
    impute_cmd->add_option("--sigma-a", imp.sigma_a, "number or 'uniform'");
    impute_cmd->add_option("--proposals", imp.sampler.proposals);
    impute_cmd->add_option("--init-scale", imp.sampler.init_scale);
    impute_cmd->add_option("--checkpoint-interval", imp.sampler.checkpoint_interval);

    auto* sample_cmd = app.add_subcommand("sample", "unconditional samples from a model");
    std::string smp_model, smp_out;
    int smp_n = 100;
    double smp_scale = 1.0;
    std::uint64_t smp_seed = 0;
    sample_cmd->add_option("--model", smp_model)->required();
    sample_cmd->add_option("-n,--n", smp_n);
    sample_cmd->add_option("--scale", smp_scale);
    sample_cmd->add_option("--seed", smp_seed);
    sample_cmd->add_option("--out", smp_out)->required();

    auto* diag_cmd = app.add_subcommand("diagnose", "sampler-efficiency study on one sample");
    DiagnoseFlags dg;
    diag_cmd->add_option("--model", dg.model_path)->required();
    diag_cmd->add_option("--data", dg.data_path)->required();
    diag_cmd->add_option("--row", dg.row);
    diag_cmd->add_option("--truth", dg.truth_path)->required();
    diag_cmd->add_option("--stats-from", dg.stats_path);
    diag_cmd->add_option("--out", dg.out_dir)->required();
    diag_cmd->add_option("--chains", dg.chains);
    diag_cmd->add_option("--replications", dg.replications);
    diag_cmd->add_option("--proposals", dg.proposals);
    diag_cmd->add_option("--checkpoint-interval", dg.checkpoint_interval);
    diag_cmd->add_option("--sigma-p", dg.sigma_p);
    diag_cmd->add_option("--sigma-r", dg.sigma_r);
    diag_cmd->add_option("--mix", dg.mix);
    diag_cmd->add_option("--init-scale", dg.init_scale);
    diag_cmd->add_option("--sigma-a", dg.sigma_a_list, "list of numbers / 'uniform'");
    diag_cmd->add_flag("--baseline-gibbs", dg.baseline_gibbs);
    diag_cmd->add_option("--seed", dg.seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, out_override, overrides, dry_run);
        if (impute_cmd->parsed()) return cmd_impute(imp);
        if (sample_cmd->parsed()) return cmd_sample(smp_model, smp_n, smp_scale, smp_seed, smp_out);
        if (diag_cmd->parsed()) {
            if (dg.sigma_a_list.empty()) dg.sigma_a_list = {"0.001"};
            return cmd_diagnose(dg);
        }
    } catch (const ConfigError& e) {
        std::cerr << "plmcmc: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "plmcmc: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "plmcmc: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
