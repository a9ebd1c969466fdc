#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "plmcmc/data.hpp"
#include "plmcmc/flow.hpp"

namespace plmcmc {

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_to_json(const FlowModel& m,
                                    const std::optional<WhiteningStats>& stats = std::nullopt) {
    nlohmann::json j;
    j["schema_version"] = kModelSchemaVersion;
    j["kind"] = "plmcmc_flow";
    j["dim"] = m.dim;
    j["prior"] = m.prior == PriorKind::Normal ? "normal" : "logistic";
    j["partition_seed"] = m.partition_seed;
    j["partition_a"] = m.idx_a;
    auto couplings = nlohmann::json::array();
    for (const auto& c : m.couplings) {
        nlohmann::json jc;
        jc["swap"] = c.swap;
        jc["sizes"] = c.net.sizes;
        jc["weights"] = c.net.weights;
        jc["biases"] = c.net.biases;
        couplings.push_back(std::move(jc));
    }
    j["couplings"] = std::move(couplings);
    j["log_scale"] = m.scaling.log_scale;
    if (stats) {
        j["whitening"] = {{"mean", stats->mean}, {"std", stats->std}};
    }
    return j;
}

struct LoadedModel {
    FlowModel model;
    std::optional<WhiteningStats> whitening;
};

inline LoadedModel model_from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kModelSchemaVersion)
        throw std::runtime_error("model json: unsupported schema_version");
    if (j.value("kind", "") != "plmcmc_flow")
        throw std::runtime_error("model json: not a plmcmc_flow document");
    LoadedModel out;
    FlowModel& m = out.model;
    m.dim = j.at("dim").get<int>();
    m.prior = j.at("prior").get<std::string>() == "logistic" ? PriorKind::Logistic : PriorKind::Normal;
    m.partition_seed = j.at("partition_seed").get<std::uint64_t>();
    m.in_a.assign(m.dim, 0);
    for (int i : j.at("partition_a").get<std::vector<int>>()) {
        if (i < 0 || i >= m.dim) throw std::runtime_error("model json: partition index out of range");
        m.in_a[i] = 1;
    }
    m.finalize();
    for (const auto& jc : j.at("couplings")) {
        CouplingLayer c;
        c.swap = jc.at("swap").get<bool>();
        c.net.sizes = jc.at("sizes").get<std::vector<int>>();
        c.net.weights = jc.at("weights").get<std::vector<std::vector<double>>>();
        c.net.biases = jc.at("biases").get<std::vector<std::vector<double>>>();
        m.couplings.push_back(std::move(c));
    }
    m.scaling.log_scale = j.at("log_scale").get<std::vector<double>>();
    m.validate();
    if (j.contains("whitening")) {
        WhiteningStats ws;
        ws.mean = j.at("whitening").at("mean").get<std::vector<double>>();
        ws.std = j.at("whitening").at("std").get<std::vector<double>>();
        if (ws.mean.size() != static_cast<size_t>(m.dim) || ws.std.size() != ws.mean.size())
            throw std::runtime_error("model json: whitening stats size mismatch");
        out.whitening = std::move(ws);
    }
    return out;
}

inline void save_model(const std::string& path, const FlowModel& m,
                       const std::optional<WhiteningStats>& stats = std::nullopt) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_model: cannot open " + path);
    f << model_to_json(m, stats).dump(1) << "\n";
}

inline LoadedModel load_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_model: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return model_from_json(j);
}

}  // namespace plmcmc
