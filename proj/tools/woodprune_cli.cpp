// Command-line surface for the pruning toolkit. One command is one process;
// everything is reproducible from --seed, and result files are written
// atomically (write-then-rename).

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "woodprune/core.hpp"
#include "woodprune/errors.hpp"
#include "woodprune/fisher.hpp"
#include "woodprune/io.hpp"
#include "woodprune/model.hpp"
#include "woodprune/parallel.hpp"
#include "woodprune/pruner.hpp"
#include "woodprune/report.hpp"
#include "woodprune/schedule.hpp"

namespace wp = woodprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct DataFlags {
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t limit = 0;
    std::size_t test_limit = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags, bool need_test) {
    cmd->add_option("--train-images", flags.train_images, "IDX images file (train split)")
        ->required();
    cmd->add_option("--train-labels", flags.train_labels, "IDX labels file (train split)")
        ->required();
    auto* ti = cmd->add_option("--test-images", flags.test_images, "IDX images file (test split)");
    auto* tl = cmd->add_option("--test-labels", flags.test_labels, "IDX labels file (test split)");
    if (need_test) {
        ti->required();
        tl->required();
    }
    cmd->add_option("--limit", flags.limit, "keep only the first N train examples");
    cmd->add_option("--test-limit", flags.test_limit, "keep only the first N test examples");
}

wp::Dataset load_train(const DataFlags& flags) {
    return wp::load_mnist_idx(flags.train_images, flags.train_labels, flags.limit,
                              wp::Split::train);
}

wp::Dataset load_test(const DataFlags& flags) {
    return wp::load_mnist_idx(flags.test_images, flags.test_labels, flags.test_limit,
                              wp::Split::test);
}

struct FisherFlags {
    std::size_t subsample = 80;
    std::size_t minibatch = 100;
    double damp = 1e-5;
    std::size_t chunk_size = 1000;
    std::string label_mode = "empirical";
};

void add_fisher_flags(CLI::App* cmd, FisherFlags& flags) {
    cmd->add_option("--fisher-subsample", flags.subsample,
                    "number of rank-one terms in the estimator");
    cmd->add_option("--fisher-minibatch", flags.minibatch, "examples averaged into each term");
    cmd->add_option("--damp", flags.damp, "dampening added to the Fisher diagonal");
    cmd->add_option("--chunk-size", flags.chunk_size, "diagonal block size within a layer");
    cmd->add_option("--label-mode", flags.label_mode, "empirical | sampled")
        ->check(CLI::IsMember({"empirical", "sampled"}));
}

wp::FisherConfig to_fisher_config(const FisherFlags& flags) {
    wp::FisherConfig cfg;
    cfg.subsample_size = flags.subsample;
    cfg.minibatch_size = flags.minibatch;
    cfg.damp = flags.damp;
    cfg.chunk_size = flags.chunk_size;
    cfg.label_mode =
        flags.label_mode == "sampled" ? wp::LabelMode::sampled : wp::LabelMode::empirical;
    cfg.validate();
    return cfg;
}

struct MethodChoice {
    wp::StatMethod method = wp::StatMethod::woodfisher;
    bool force_joint = false;
    bool force_independent = false;
};

MethodChoice parse_method(const std::string& name) {
    if (name == "woodfisher") return {wp::StatMethod::woodfisher, false, false};
    if (name == "woodtaylor") return {wp::StatMethod::woodtaylor, false, false};
    if (name == "magnitude") return {wp::StatMethod::magnitude, false, true};
    if (name == "global-magnitude") return {wp::StatMethod::magnitude, true, false};
    if (name == "diag-fisher") return {wp::StatMethod::diagonal_fisher, false, false};
    if (name == "obd") return {wp::StatMethod::obd, false, false};
    throw wp::ConfigError("unknown method '" + name + "'");
}

wp::SelectScope parse_scope(const std::string& mode) {
    if (mode == "joint") return wp::SelectScope::joint;
    if (mode == "independent") return wp::SelectScope::independent;
    throw wp::ConfigError("unknown mode '" + mode + "'");
}

void print_per_layer_table(const std::vector<wp::LayerSparsityRow>& rows) {
    std::printf("%-14s %12s %12s %10s\n", "layer", "dense params", "pruned", "sparsity");
    for (const auto& row : rows) {
        std::printf("%-14s %12zu %12zu %9.2f%%\n", row.layer.c_str(), row.dense_params,
                    row.pruned, 100.0 * row.sparsity);
    }
}

// ---- subcommand: train ----

int cmd_train(const DataFlags& data_flags, const wp::TrainConfig& cfg,
              const std::vector<std::size_t>& layers, const std::string& checkpoint_path,
              const std::string& metrics_path) {
    const auto train = load_train(data_flags);
    const auto test = load_test(data_flags);
    if (train.in_dim != layers.front())
        throw wp::DataError("train: input dim " + std::to_string(train.in_dim) +
                            " does not match first layer " + std::to_string(layers.front()));

    wp::MlpModel model = wp::MlpModel::init(layers, cfg.seed);
    const wp::Mask mask = wp::Mask::all_active(model.dim());
    const auto trace = wp::sgd_train(model, train, test, cfg, mask);

    wp::save_checkpoint(checkpoint_path, model, {cfg.seed, cfg.epochs});
    if (!metrics_path.empty()) wp::atomic_write_file(metrics_path, wp::train_metrics_csv(trace));

    const double acc = trace.empty() ? model.accuracy(test) : trace.back().test_acc;
    std::printf("trained %zu epochs, test accuracy %.4f\n", cfg.epochs, acc);
    std::printf("checkpoint written to %s\n", checkpoint_path.c_str());
    return kExitOk;
}

// ---- subcommand: prune-oneshot ----

wp::GroupSpec load_groups(const std::string& path, const std::string& mode) {
    std::ifstream in(path);
    if (!in) throw wp::DataError("groups: cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    wp::GroupSpec spec;
    spec.mode = (mode == "correlated") ? wp::GroupSpec::Mode::correlated : wp::GroupSpec::Mode::sum;
    for (const auto& g : j) spec.groups.push_back(g.get<std::vector<std::size_t>>());
    return spec;
}

int cmd_prune_oneshot(const DataFlags& data_flags, const FisherFlags& fisher_flags,
                      const std::string& checkpoint_path, const std::string& method_name,
                      const std::string& mode_name, double sparsity, std::size_t recompute_steps,
                      double beta, std::uint64_t seed, std::size_t threads,
                      const std::string& report_path, const std::string& checkpoint_out,
                      const std::string& groups_path, const std::string& group_mode) {
    const auto train = load_train(data_flags);
    const auto test = load_test(data_flags);
    wp::MlpModel model = wp::load_checkpoint(checkpoint_path);

    const MethodChoice choice = parse_method(method_name);
    wp::SelectScope scope = parse_scope(mode_name);
    if (choice.force_joint) scope = wp::SelectScope::joint;
    if (choice.force_independent) scope = wp::SelectScope::independent;

    wp::Mask mask = wp::Mask::all_active(model.dim());
    const wp::FisherConfig fisher_cfg = to_fisher_config(fisher_flags);

    nlohmann::json report_json;
    if (groups_path.empty()) {
        wp::OneShotOptions opts;
        opts.target_sparsity = sparsity;
        opts.scope = scope;
        opts.method = choice.method;
        opts.recompute_steps = recompute_steps;
        opts.beta = beta;
        opts.seed = seed;
        opts.threads = threads;
        const auto report = wp::one_shot_prune(model, mask, train, test, fisher_cfg, opts);
        print_per_layer_table(report.per_layer);
        std::printf("accuracy %.4f -> %.4f, predicted delta loss %.6g\n", report.acc_before,
                    report.acc_after, report.predicted_delta_loss);
        report_json = wp::one_shot_report_json(report);
    } else {
        // structured removal: rank whole groups by rho_Q, take the cheapest
        // until the target weight count is reached, apply the combined
        // perturbation per group
        const double acc_before = model.accuracy(test);
        auto& space = model.space();
        const auto samples = wp::collect_grad_samples(model, train, fisher_cfg, seed, 1);
        const auto inv = wp::woodfisher_build(samples, space.layout, fisher_cfg, threads);
        const wp::GroupSpec spec = load_groups(groups_path, group_mode);
        const auto rho = wp::stat_structured(space, inv, spec, mask);

        std::vector<std::size_t> order(spec.groups.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (rho[a] != rho[b]) return rho[a] < rho[b];
            return a < b;
        });
        const auto budget =
            static_cast<std::size_t>(sparsity * static_cast<double>(space.prunable_count()));
        std::size_t taken = 0;
        double predicted = 0.0;
        for (std::size_t g : order) {
            const auto& group = spec.groups[g];
            if (taken + group.size() > budget) break;
            const auto delta = wp::structured_direction(space, inv, group);
            for (std::size_t q = 0; q < space.dim(); ++q) space.values[q] += delta[q];
            for (std::size_t q : group) {
                space.values[q] = 0.0;
                mask.active[q] = 0;
            }
            wp::apply_mask(space, mask);
            predicted += rho[g];
            taken += group.size();
        }
        const auto per_layer = wp::per_layer_sparsity(space, mask);
        print_per_layer_table(per_layer);
        const double acc_after = model.accuracy(test);
        std::printf("accuracy %.4f -> %.4f, predicted delta loss %.6g\n", acc_before, acc_after,
                    predicted);
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& row : per_layer) {
            layers.push_back({{"layer", row.layer},
                              {"dense_params", row.dense_params},
                              {"pruned", row.pruned},
                              {"sparsity_percent", 100.0 * row.sparsity}});
        }
        report_json = {{"method", "structured-" + group_mode},
                       {"scope", mode_name},
                       {"target_sparsity", sparsity},
                       {"seed", seed},
                       {"accuracy_before", acc_before},
                       {"accuracy_after", acc_after},
                       {"predicted_delta_loss", predicted},
                       {"final_sparsity", wp::sparsity_of(mask, space)},
                       {"per_layer", layers},
                       {"fisher", wp::fisher_config_json(fisher_cfg)},
                       {"generated_at", wp::iso_timestamp_now()}};
    }

    if (!report_path.empty()) wp::write_json_report(report_path, report_json);
    if (!checkpoint_out.empty()) wp::save_checkpoint(checkpoint_out, model, {seed, 0});
    return kExitOk;
}

// ---- subcommand: prune-gradual ----

int cmd_prune_gradual(const DataFlags& data_flags, const FisherFlags& fisher_flags,
                      const wp::TrainConfig& train_cfg, const wp::ScheduleConfig& sched,
                      const std::string& checkpoint_path, const std::string& method_name,
                      const std::string& mode_name, std::size_t threads,
                      const std::string& trace_path, const std::string& checkpoint_out) {
    const auto train = load_train(data_flags);
    const auto test = load_test(data_flags);
    wp::MlpModel model = wp::load_checkpoint(checkpoint_path);

    const MethodChoice choice = parse_method(method_name);
    wp::SelectScope scope = parse_scope(mode_name);
    if (choice.force_joint) scope = wp::SelectScope::joint;
    if (choice.force_independent) scope = wp::SelectScope::independent;

    const auto result = wp::gradual_prune(model, train, test, train_cfg,
                                          to_fisher_config(fisher_flags), sched, choice.method,
                                          scope, threads);
    if (!trace_path.empty())
        wp::atomic_write_file(trace_path, wp::gradual_trace_csv(result.trace));
    if (!checkpoint_out.empty())
        wp::save_checkpoint(checkpoint_out, model, {train_cfg.seed, sched.total_epochs});

    const auto& last = result.trace.back();
    std::printf("gradual pruning done: sparsity %.4f, test accuracy %.4f\n", last.sparsity,
                last.test_acc);
    return kExitOk;
}

// ---- subcommand: quad-scan ----

int cmd_quad_scan(const DataFlags& data_flags, const FisherFlags& fisher_flags,
                  const std::string& checkpoint_path, const std::string& layer_name,
                  double sparsity, std::size_t steps, std::uint64_t seed, std::size_t threads,
                  const std::string& out_path) {
    const auto train = load_train(data_flags);
    wp::MlpModel model = wp::load_checkpoint(checkpoint_path);
    auto& space = model.space();

    bool found = false;
    for (const auto& seg : space.layout.segments) found = found || seg.name == layer_name;
    if (!found) throw wp::ConfigError("quad-scan: no layer named '" + layer_name + "'");

    const wp::FisherConfig fisher_cfg = to_fisher_config(fisher_flags);
    const auto samples = wp::collect_grad_samples(model, train, fisher_cfg, seed, 1);
    const auto inv = wp::woodfisher_build(samples, space.layout, fisher_cfg, threads);
    const wp::Mask mask = wp::Mask::all_active(model.dim());
    const auto stat = wp::stat_woodfisher(space, inv, mask);

    // restrict the selection to the chosen layer at the requested sparsity
    wp::PruneStat restricted = stat;
    for (const auto& seg : space.layout.segments) {
        if (seg.name == layer_name) continue;
        for (std::size_t q = seg.offset; q < seg.offset + seg.length; ++q)
            restricted.rho[q] = std::numeric_limits<double>::infinity();
    }
    std::vector<std::size_t> removed;
    {
        std::size_t prunable = 0;
        std::vector<std::size_t> candidates;
        for (const auto& seg : space.layout.segments) {
            if (seg.name != layer_name) continue;
            for (std::size_t q = seg.offset; q < seg.offset + seg.length; ++q) {
                if (!space.prunable[q]) continue;
                ++prunable;
                candidates.push_back(q);
            }
        }
        if (prunable == 0) throw wp::ConfigError("quad-scan: layer has no prunable weights");
        const auto count = static_cast<std::size_t>(sparsity * static_cast<double>(prunable));
        std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
            if (restricted.rho[a] != restricted.rho[b]) return restricted.rho[a] < restricted.rho[b];
            return a < b;
        });
        candidates.resize(count);
        removed = std::move(candidates);
    }

    const auto delta = wp::pruning_direction(space, inv, removed, mask);
    const std::vector<double> base = space.values;
    auto loss_fn = [&](std::span<const double> w) {
        wp::MlpModel probe = model;
        std::copy(w.begin(), w.end(), probe.space().values.begin());
        return probe.mean_loss(train);
    };
    const auto rows = wp::quad_scan(loss_fn, base, delta, steps, samples, fisher_cfg.damp);
    wp::atomic_write_file(out_path, wp::quad_scan_csv(rows));
    std::printf("quad scan written to %s (%zu rows)\n", out_path.c_str(), rows.size());
    return kExitOk;
}

// ---- subcommand: synth-data ----

int cmd_synth_data(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                   std::uint64_t seed, const std::string& split, const std::string& images_out,
                   const std::string& labels_out) {
    const wp::Split tag = split == "test" ? wp::Split::test : wp::Split::train;
    const auto ds = wp::synth_gaussian_classes(classes, per_class, dim, separation, seed, tag);
    wp::write_mnist_idx(ds, images_out, labels_out);
    std::printf("wrote %zu examples (%zu classes, dim %zu) to %s / %s\n", ds.size(), classes, dim,
                images_out.c_str(), labels_out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"woodprune: second-order neural-network pruning toolkit"};
    app.require_subcommand(1);

    long threads_flag = 0;
    app.add_option("--threads", threads_flag,
                   "worker threads for chunk builds (env WOODPRUNE_THREADS)");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the built-in MLP and write a checkpoint");
    DataFlags train_data;
    add_data_flags(train_cmd, train_data, true);
    std::vector<std::size_t> layers = {784, 40, 20, 10};
    wp::TrainConfig train_cfg;
    std::string train_checkpoint = "checkpoint.json";
    std::string train_metrics;
    train_cmd->add_option("--layers", layers, "layer sizes, e.g. 784,40,20,10")->delimiter(',');
    train_cmd->add_option("--epochs", train_cfg.epochs, "training epochs");
    train_cmd->add_option("--lr", train_cfg.learning_rate, "learning rate");
    train_cmd->add_option("--momentum", train_cfg.momentum, "SGD momentum");
    train_cmd->add_option("--weight-decay", train_cfg.weight_decay, "L2 coefficient");
    train_cmd->add_option("--batch-size", train_cfg.batch_size, "SGD batch size");
    train_cmd->add_option("--seed", train_cfg.seed, "random seed");
    train_cmd->add_option("--checkpoint", train_checkpoint, "output checkpoint (json)");
    train_cmd->add_option("--metrics", train_metrics, "output per-epoch metrics csv");

    // prune-oneshot
    auto* oneshot_cmd = app.add_subcommand("prune-oneshot", "one-shot pruning, no retraining");
    DataFlags oneshot_data;
    add_data_flags(oneshot_cmd, oneshot_data, true);
    FisherFlags oneshot_fisher;
    add_fisher_flags(oneshot_cmd, oneshot_fisher);
    std::string oneshot_checkpoint, oneshot_report, oneshot_ckpt_out, groups_path;
    std::string oneshot_method = "woodfisher", oneshot_mode = "joint", group_mode = "correlated";
    double oneshot_sparsity = 0.5, oneshot_beta = 0.0;
    std::size_t oneshot_recompute = 1;
    std::uint64_t oneshot_seed = 1;
    oneshot_cmd->add_option("--checkpoint", oneshot_checkpoint, "input checkpoint")->required();
    oneshot_cmd->add_option("--sparsity", oneshot_sparsity, "target sparsity in [0,1]");
    oneshot_cmd->add_option("--mode", oneshot_mode, "independent | joint")
        ->check(CLI::IsMember({"independent", "joint"}));
    oneshot_cmd
        ->add_option("--method", oneshot_method,
                     "woodfisher | woodtaylor | magnitude | global-magnitude | diag-fisher | obd")
        ->check(CLI::IsMember(
            {"woodfisher", "woodtaylor", "magnitude", "global-magnitude", "diag-fisher", "obd"}));
    oneshot_cmd->add_option("--recompute-steps", oneshot_recompute,
                            "stages with estimator recomputation");
    oneshot_cmd->add_option("--beta", oneshot_beta, "FLOPs-aware exponent (0 disables)");
    oneshot_cmd->add_option("--seed", oneshot_seed, "random seed");
    oneshot_cmd->add_option("--report", oneshot_report, "output report json");
    oneshot_cmd->add_option("--checkpoint-out", oneshot_ckpt_out, "write pruned checkpoint");
    oneshot_cmd->add_option("--groups", groups_path, "json file with index groups (structured)");
    oneshot_cmd->add_option("--group-mode", group_mode, "sum | correlated")
        ->check(CLI::IsMember({"sum", "correlated"}));

    // prune-gradual
    auto* gradual_cmd = app.add_subcommand("prune-gradual", "gradual pruning with retraining");
    DataFlags gradual_data;
    add_data_flags(gradual_cmd, gradual_data, true);
    FisherFlags gradual_fisher;
    add_fisher_flags(gradual_cmd, gradual_fisher);
    wp::TrainConfig gradual_train;
    wp::ScheduleConfig sched;
    std::string gradual_checkpoint, gradual_trace, gradual_ckpt_out;
    std::string gradual_method = "woodfisher", gradual_mode = "joint";
    gradual_cmd->add_option("--checkpoint", gradual_checkpoint, "input checkpoint")->required();
    gradual_cmd->add_option("--method", gradual_method, "pruning statistic")
        ->check(CLI::IsMember(
            {"woodfisher", "woodtaylor", "magnitude", "global-magnitude", "diag-fisher", "obd"}));
    gradual_cmd->add_option("--mode", gradual_mode, "independent | joint")
        ->check(CLI::IsMember({"independent", "joint"}));
    gradual_cmd->add_option("--initial-sparsity", sched.initial_sparsity, "s_i of the schedule");
    gradual_cmd->add_option("--final-sparsity", sched.final_sparsity, "s_f of the schedule");
    gradual_cmd->add_option("--first-prune-epoch", sched.first_prune_epoch, "first prune step");
    gradual_cmd->add_option("--prune-interval", sched.prune_interval, "epochs between steps");
    gradual_cmd->add_option("--last-prune-epoch", sched.last_prune_epoch, "last eligible epoch");
    gradual_cmd->add_option("--total-epochs", sched.total_epochs, "overall epochs");
    gradual_cmd->add_option("--lr-decay-start", sched.lr_decay.start_epoch, "decay start epoch");
    gradual_cmd->add_option("--lr-decay-factor", sched.lr_decay.factor, "decay multiplier");
    gradual_cmd->add_option("--lr-decay-period", sched.lr_decay.period, "epochs between decays");
    gradual_cmd->add_option("--lr", gradual_train.learning_rate, "base learning rate");
    gradual_cmd->add_option("--momentum", gradual_train.momentum, "SGD momentum");
    gradual_cmd->add_option("--weight-decay", gradual_train.weight_decay, "L2 coefficient");
    gradual_cmd->add_option("--batch-size", gradual_train.batch_size, "SGD batch size");
    gradual_cmd->add_option("--seed", gradual_train.seed, "random seed");
    gradual_cmd->add_option("--trace", gradual_trace, "output trace csv");
    gradual_cmd->add_option("--checkpoint-out", gradual_ckpt_out, "write final checkpoint");

    // quad-scan
    auto* scan_cmd = app.add_subcommand("quad-scan", "local quadratic model vs actual loss");
    DataFlags scan_data;
    add_data_flags(scan_cmd, scan_data, false);
    FisherFlags scan_fisher;
    add_fisher_flags(scan_cmd, scan_fisher);
    std::string scan_checkpoint, scan_layer = "fc1.weight", scan_out = "quad_scan.csv";
    double scan_sparsity = 0.5;
    std::size_t scan_steps = 21;
    std::uint64_t scan_seed = 1;
    scan_cmd->add_option("--checkpoint", scan_checkpoint, "input checkpoint")->required();
    scan_cmd->add_option("--layer", scan_layer, "layer whose pruning direction to scan");
    scan_cmd->add_option("--sparsity", scan_sparsity, "direction prunes the layer to this level");
    scan_cmd->add_option("--steps", scan_steps, "points on t in [0,1]");
    scan_cmd->add_option("--seed", scan_seed, "random seed");
    scan_cmd->add_option("--out", scan_out, "output csv");

    // synth-data
    auto* synth_cmd = app.add_subcommand("synth-data", "generate a synthetic IDX dataset");
    std::size_t synth_classes = 10, synth_per_class = 500, synth_dim = 784;
    double synth_separation = 1.0;
    std::uint64_t synth_seed = 1;
    std::string synth_split = "train", synth_images = "images.idx", synth_labels = "labels.idx";
    synth_cmd->add_option("--classes", synth_classes, "number of classes");
    synth_cmd->add_option("--per-class", synth_per_class, "examples per class");
    synth_cmd->add_option("--dim", synth_dim, "input dimension");
    synth_cmd->add_option("--separation", synth_separation, "distance between class means");
    synth_cmd->add_option("--seed", synth_seed, "random seed");
    synth_cmd->add_option("--split", synth_split, "train | test")
        ->check(CLI::IsMember({"train", "test"}));
    synth_cmd->add_option("--images-out", synth_images, "output IDX images path");
    synth_cmd->add_option("--labels-out", synth_labels, "output IDX labels path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    const std::size_t threads = wp::resolve_threads(threads_flag);
    try {
        if (train_cmd->parsed())
            return cmd_train(train_data, train_cfg, layers, train_checkpoint, train_metrics);
        if (oneshot_cmd->parsed())
            return cmd_prune_oneshot(oneshot_data, oneshot_fisher, oneshot_checkpoint,
                                     oneshot_method, oneshot_mode, oneshot_sparsity,
                                     oneshot_recompute, oneshot_beta, oneshot_seed, threads,
                                     oneshot_report, oneshot_ckpt_out, groups_path, group_mode);
        if (gradual_cmd->parsed())
            return cmd_prune_gradual(gradual_data, gradual_fisher, gradual_train, sched,
                                     gradual_checkpoint, gradual_method, gradual_mode, threads,
                                     gradual_trace, gradual_ckpt_out);
        if (scan_cmd->parsed())
            return cmd_quad_scan(scan_data, scan_fisher, scan_checkpoint, scan_layer,
                                 scan_sparsity, scan_steps, scan_seed, threads, scan_out);
        if (synth_cmd->parsed())
            return cmd_synth_data(synth_classes, synth_per_class, synth_dim, synth_separation,
                                  synth_seed, synth_split, synth_images, synth_labels);
    } catch (const wp::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const wp::StructuralError& e) {
        std::fprintf(stderr, "structural error: %s\n", e.what());
        return kExitConfig;
    } catch (const wp::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const wp::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return kExitConfig;
}
