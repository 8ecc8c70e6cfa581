#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "woodprune/core.hpp"
#include "woodprune/errors.hpp"
#include "woodprune/fisher.hpp"
#include "woodprune/model.hpp"
#include "woodprune/pruner.hpp"

namespace woodprune {

struct LrDecay {
    std::size_t start_epoch = 13;
    double factor = 0.6;
    std::size_t period = 2;
};

// Desk-scale defaults: 20 epochs, prune steps at epochs 1, 4, 7, 10 (interval
// 3 capped by last_prune_epoch), exponential learning-rate decay afterwards.
struct ScheduleConfig {
    double initial_sparsity = 0.05;
    double final_sparsity = 0.9;
    std::size_t first_prune_epoch = 1;
    std::size_t prune_interval = 3;
    std::size_t last_prune_epoch = 12;
    std::size_t total_epochs = 20;
    LrDecay lr_decay;

    // first_prune_epoch > last_prune_epoch encodes an empty schedule (plain
    // SGD training).
    std::vector<std::size_t> prune_epochs() const {
        std::vector<std::size_t> epochs;
        for (std::size_t e = first_prune_epoch; e <= last_prune_epoch; e += prune_interval)
            epochs.push_back(e);
        return epochs;
    }

    void validate() const {
        if (!(initial_sparsity >= 0.0) || !(final_sparsity <= 1.0) ||
            initial_sparsity > final_sparsity)
            throw ConfigError("schedule: need 0 <= initial <= final <= 1");
        if (prune_interval == 0) throw ConfigError("schedule: prune_interval must be >= 1");
        const auto epochs = prune_epochs();
        if (!epochs.empty() && epochs.back() >= total_epochs)
            throw ConfigError("schedule: prune epochs must fit inside total_epochs");
    }

    double lr_at(std::size_t epoch, double base_lr) const {
        if (epoch < lr_decay.start_epoch || lr_decay.period == 0) return base_lr;
        const std::size_t steps = (epoch - lr_decay.start_epoch) / lr_decay.period + 1;
        return base_lr * std::pow(lr_decay.factor, static_cast<double>(steps));
    }
};

// Cubic polynomial schedule: s(k) = s_f + (s_i - s_f) (1 - k/K)^3.
inline double sparsity_at(const ScheduleConfig& cfg, std::size_t k, std::size_t big_k) {
    if (big_k == 0) {
        if (cfg.initial_sparsity != cfg.final_sparsity)
            throw ConfigError("schedule: zero prune steps but initial != final sparsity");
        return cfg.final_sparsity;
    }
    if (k > big_k) throw ConfigError("schedule: step index beyond step count");
    if (k == 0) return cfg.initial_sparsity;    // exact endpoint
    if (k == big_k) return cfg.final_sparsity;  // exact endpoint
    const double r = 1.0 - static_cast<double>(k) / static_cast<double>(big_k);
    return cfg.final_sparsity + (cfg.initial_sparsity - cfg.final_sparsity) * r * r * r;
}

struct GradualTraceRow {
    std::size_t epoch = 0;
    double sparsity = 0.0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
};

struct GradualResult {
    std::vector<GradualTraceRow> trace;
    Mask mask;
};

// Prune-retrain loop: at each scheduled epoch the Fisher estimate is rebuilt
// on the current weights from fresh samples, the mask is extended to the
// scheduled sparsity and the pruning direction applied; every epoch then runs
// one pass of masked SGD at the (possibly decayed) learning rate.
inline GradualResult gradual_prune(MlpModel& model, const Dataset& train, const Dataset& test,
                                   const TrainConfig& train_cfg, const FisherConfig& fisher_cfg,
                                   const ScheduleConfig& sched, StatMethod method,
                                   SelectScope scope, std::size_t threads = 1) {
    sched.validate();
    train_cfg.validate();
    fisher_cfg.validate();

    GradualResult result;
    result.mask = Mask::all_active(model.dim());
    const auto prune_epochs = sched.prune_epochs();
    const std::size_t big_k = prune_epochs.empty() ? 0 : prune_epochs.size() - 1;

    SgdTrainer trainer(model.dim());
    std::size_t next_prune = 0;
    for (std::size_t epoch = 0; epoch < sched.total_epochs; ++epoch) {
        if (next_prune < prune_epochs.size() && epoch == prune_epochs[next_prune]) {
            OneShotOptions step;
            step.target_sparsity = sparsity_at(sched, next_prune, big_k);
            step.scope = scope;
            step.method = method;
            step.recompute_steps = 1;
            step.seed = train_cfg.seed;
            step.sample_round = epoch + 1;  // fresh samples at every prune step
            step.threads = threads;
            one_shot_prune(model, result.mask, train, test, fisher_cfg, step);
            ++next_prune;
        }
        const double lr = sched.lr_at(epoch, train_cfg.learning_rate);
        const double train_loss =
            trainer.run_epoch(model, train, train_cfg, result.mask, epoch, lr);
        result.trace.push_back({epoch, sparsity_of(result.mask, model.space()), train_loss,
                                model.accuracy(test), lr});
    }
    return result;
}

}  // namespace woodprune
