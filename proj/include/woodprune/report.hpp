#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <string>
#include <vector>

#include <json.hpp>

#include "woodprune/io.hpp"
#include "woodprune/model.hpp"
#include "woodprune/pruner.hpp"
#include "woodprune/schedule.hpp"

namespace woodprune {

// Shortest round-trippable decimal form; keeps CSV output byte-stable across
// reruns of the same seed.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double parsed = 0.0;
    for (int precision = 1; precision <= 16; ++precision) {
        char probe[32];
        std::snprintf(probe, sizeof(probe), "%.*g", precision, v);
        std::sscanf(probe, "%lf", &parsed);
        if (parsed == v) return probe;
    }
    return buf;
}

inline std::string iso_timestamp_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

inline nlohmann::json fisher_config_json(const FisherConfig& cfg) {
    return nlohmann::json{
        {"subsample_size", cfg.subsample_size},
        {"minibatch_size", cfg.minibatch_size},
        {"damp", cfg.damp},
        {"chunk_size", cfg.chunk_size},
        {"label_mode", cfg.label_mode == LabelMode::sampled ? "sampled" : "empirical"},
    };
}

inline nlohmann::json one_shot_report_json(const OneShotReport& report) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& row : report.per_layer) {
        layers.push_back({{"layer", row.layer},
                          {"dense_params", row.dense_params},
                          {"pruned", row.pruned},
                          {"sparsity_percent", 100.0 * row.sparsity}});
    }
    return nlohmann::json{
        {"method", report.method},
        {"scope", report.scope},
        {"target_sparsity", report.target},
        {"seed", report.seed},
        {"recompute_steps", report.recompute_steps},
        {"beta", report.beta},
        {"accuracy_before", report.acc_before},
        {"accuracy_after", report.acc_after},
        {"loss_before", report.loss_before},
        {"loss_after", report.loss_after},
        {"predicted_delta_loss", report.predicted_delta_loss},
        {"final_sparsity", report.final_sparsity},
        {"per_layer", layers},
        {"fisher", fisher_config_json(report.fisher)},
        {"generated_at", iso_timestamp_now()},
    };
}

inline void write_json_report(const std::string& path, const nlohmann::json& j) {
    atomic_write_file(path, j.dump(2) + "\n");
}

inline std::string train_metrics_csv(const std::vector<EpochStats>& trace) {
    std::string out = "epoch,train_loss,test_acc,lr\n";
    for (const auto& row : trace) {
        out += std::to_string(row.epoch) + "," + format_double(row.train_loss) + "," +
               format_double(row.test_acc) + "," + format_double(row.lr) + "\n";
    }
    return out;
}

inline std::string gradual_trace_csv(const std::vector<GradualTraceRow>& trace) {
    std::string out = "epoch,sparsity,train_loss,test_acc,lr\n";
    for (const auto& row : trace) {
        out += std::to_string(row.epoch) + "," + format_double(row.sparsity) + "," +
               format_double(row.train_loss) + "," + format_double(row.test_acc) + "," +
               format_double(row.lr) + "\n";
    }
    return out;
}

inline std::string quad_scan_csv(const std::vector<QuadScanRow>& rows) {
    std::string out = "t,actual,predicted\n";
    for (const auto& row : rows) {
        out += format_double(row.t) + "," + format_double(row.actual) + "," +
               format_double(row.predicted) + "\n";
    }
    return out;
}

}  // namespace woodprune
