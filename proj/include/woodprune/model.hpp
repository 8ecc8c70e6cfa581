#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "woodprune/core.hpp"
#include "woodprune/errors.hpp"
#include "woodprune/io.hpp"
#include "woodprune/rng.hpp"

namespace woodprune {

struct TrainConfig {
    double learning_rate = 0.005;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    }
};

// Scratch buffers for forward/backward; reuse across examples to keep the
// per-example gradient path allocation-free.
struct MlpWorkspace {
    std::vector<double> acts;    // post-activation units for layers 1..L
    std::vector<double> deltas;  // matching pre-activation gradients
};

// Fully-connected ReLU classifier with a softmax cross-entropy head. All
// parameters live in one flat vector addressed through LayerLayout, which is
// what lets the Fisher and pruning machinery treat the network generically.
class MlpModel {
public:
    MlpModel() = default;

    MlpModel(std::vector<std::size_t> layer_sizes, ParamSpace space)
        : layer_sizes_(std::move(layer_sizes)), space_(std::move(space)) {
        if (layer_sizes_.size() < 2) throw ConfigError("mlp: need at least two layer sizes");
        std::size_t units = 0;
        for (std::size_t l = 1; l < layer_sizes_.size(); ++l) units += layer_sizes_[l];
        unit_count_ = units;
    }

    // Glorot-uniform weights, zero biases.
    static MlpModel init(std::span<const std::size_t> layer_sizes, std::uint64_t seed) {
        LayerLayout layout = LayerLayout::for_mlp(layer_sizes);
        std::vector<double> values(layout.dim(), 0.0);
        Rng rng(seed, RngStream::weight_init);
        for (const auto& seg : layout.segments) {
            if (seg.kind != SegmentKind::dense_weight) continue;
            const double bound = std::sqrt(6.0 / static_cast<double>(seg.fan_in + seg.fan_out));
            for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i)
                values[i] = (2.0 * rng.next_double() - 1.0) * bound;
        }
        return MlpModel(std::vector<std::size_t>(layer_sizes.begin(), layer_sizes.end()),
                        ParamSpace::make(std::move(values), std::move(layout)));
    }

    const ParamSpace& space() const { return space_; }
    ParamSpace& space() { return space_; }
    const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
    std::size_t dim() const { return space_.dim(); }
    std::size_t input_dim() const { return layer_sizes_.front(); }
    std::size_t num_classes() const { return layer_sizes_.back(); }
    std::size_t layer_count() const { return layer_sizes_.size() - 1; }

    MlpWorkspace make_workspace() const {
        return MlpWorkspace{std::vector<double>(unit_count_), std::vector<double>(unit_count_)};
    }

    // Flat index of weight (out_unit, in_unit) in layer `l` (0-based).
    std::size_t weight_index(std::size_t l, std::size_t out_unit, std::size_t in_unit) const {
        const auto& seg = space_.layout.segments[2 * l];
        return seg.offset + out_unit * seg.fan_in + in_unit;
    }

    // Forward pass; fills ws.acts and returns a view of the logits.
    std::span<const double> forward(std::span<const double> input, MlpWorkspace& ws) const {
        if (input.size() != input_dim()) throw DataError("mlp: input dimension mismatch");
        const double* prev = input.data();
        std::size_t unit_offset = 0;
        for (std::size_t l = 0; l < layer_count(); ++l) {
            const auto& wseg = space_.layout.segments[2 * l];
            const auto& bseg = space_.layout.segments[2 * l + 1];
            const std::size_t fan_in = wseg.fan_in;
            const std::size_t fan_out = wseg.fan_out;
            double* out = ws.acts.data() + unit_offset;
            const bool hidden = (l + 1 < layer_count());
            for (std::size_t o = 0; o < fan_out; ++o) {
                const double* w_row = space_.values.data() + wseg.offset + o * fan_in;
                double z = space_.values[bseg.offset + o];
                for (std::size_t i = 0; i < fan_in; ++i) z += w_row[i] * prev[i];
                if (!std::isfinite(z))
                    throw NumericError("mlp: non-finite activation in layer " +
                                       std::to_string(l + 1));
                out[o] = hidden ? std::max(z, 0.0) : z;
            }
            prev = out;
            unit_offset += fan_out;
        }
        return {ws.acts.data() + unit_offset - num_classes(), num_classes()};
    }

    std::vector<double> logits(std::span<const double> input) const {
        MlpWorkspace ws = make_workspace();
        auto view = forward(input, ws);
        return {view.begin(), view.end()};
    }

    // Cross-entropy loss plus gradient of the loss w.r.t. every parameter,
    // ADDED into grad_accum (length d). Returns the loss.
    double add_loss_grad(std::span<const double> input, std::size_t label,
                         std::span<double> grad_accum, MlpWorkspace& ws) const {
        if (grad_accum.size() != dim()) throw StructuralError("mlp: gradient buffer length mismatch");
        if (label >= num_classes()) throw DataError("mlp: label out of range");
        auto logit_view = forward(input, ws);

        // softmax cross-entropy, max-shifted
        const std::size_t k = num_classes();
        double max_logit = logit_view[0];
        for (double z : logit_view) max_logit = std::max(max_logit, z);
        double sum_exp = 0.0;
        for (double z : logit_view) sum_exp += std::exp(z - max_logit);
        const double log_sum = std::log(sum_exp) + max_logit;
        const double loss = log_sum - logit_view[label];

        // delta at the head: softmax - onehot
        const std::size_t head_offset = unit_count_ - k;
        for (std::size_t c = 0; c < k; ++c)
            ws.deltas[head_offset + c] =
                std::exp(logit_view[c] - log_sum) - (c == label ? 1.0 : 0.0);

        // walk layers backwards
        std::size_t unit_offset = head_offset;
        for (std::size_t l = layer_count(); l-- > 0;) {
            const auto& wseg = space_.layout.segments[2 * l];
            const auto& bseg = space_.layout.segments[2 * l + 1];
            const std::size_t fan_in = wseg.fan_in;
            const std::size_t fan_out = wseg.fan_out;
            const double* in_act =
                (l == 0) ? input.data() : ws.acts.data() + unit_offset - fan_in;
            const double* dz = ws.deltas.data() + unit_offset;

            for (std::size_t o = 0; o < fan_out; ++o) {
                const double g = dz[o];
                grad_accum[bseg.offset + o] += g;
                double* gw_row = grad_accum.data() + wseg.offset + o * fan_in;
                for (std::size_t i = 0; i < fan_in; ++i) gw_row[i] += g * in_act[i];
            }
            if (l > 0) {
                double* dx = ws.deltas.data() + unit_offset - fan_in;
                std::fill(dx, dx + fan_in, 0.0);
                for (std::size_t o = 0; o < fan_out; ++o) {
                    const double g = dz[o];
                    const double* w_row = space_.values.data() + wseg.offset + o * fan_in;
                    for (std::size_t i = 0; i < fan_in; ++i) dx[i] += g * w_row[i];
                }
                // ReLU gate of the producing layer
                for (std::size_t i = 0; i < fan_in; ++i) {
                    if (in_act[i] <= 0.0) dx[i] = 0.0;
                }
            }
            unit_offset -= fan_in * (l > 0 ? 1 : 0);
        }
        return loss;
    }

    std::pair<double, std::vector<double>> loss_and_grad(std::span<const double> input,
                                                         std::size_t label) const {
        MlpWorkspace ws = make_workspace();
        std::vector<double> grad(dim(), 0.0);
        const double loss = add_loss_grad(input, label, grad, ws);
        return {loss, std::move(grad)};
    }

    // One draw from the model's own softmax at `input` (sampled-label mode).
    std::size_t sample_label(std::span<const double> input, Rng& rng) const {
        MlpWorkspace ws = make_workspace();
        auto logit_view = forward(input, ws);
        double max_logit = logit_view[0];
        for (double z : logit_view) max_logit = std::max(max_logit, z);
        std::vector<double> probs(logit_view.size());
        for (std::size_t c = 0; c < probs.size(); ++c) probs[c] = std::exp(logit_view[c] - max_logit);
        return rng.categorical(probs);
    }

    double mean_loss(const Dataset& data) const {
        MlpWorkspace ws = make_workspace();
        double total = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto logit_view = forward(data.input(i), ws);
            double max_logit = logit_view[0];
            for (double z : logit_view) max_logit = std::max(max_logit, z);
            double sum_exp = 0.0;
            for (double z : logit_view) sum_exp += std::exp(z - max_logit);
            total += std::log(sum_exp) + max_logit - logit_view[data.labels[i]];
        }
        return data.size() ? total / static_cast<double>(data.size()) : 0.0;
    }

    double accuracy(const Dataset& data) const {
        MlpWorkspace ws = make_workspace();
        std::size_t correct = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            auto logit_view = forward(data.input(i), ws);
            std::size_t best = 0;
            for (std::size_t c = 1; c < logit_view.size(); ++c) {
                if (logit_view[c] > logit_view[best]) best = c;
            }
            correct += (best == data.labels[i]);
        }
        return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
    }

private:
    std::vector<std::size_t> layer_sizes_;
    ParamSpace space_;
    std::size_t unit_count_ = 0;
};

// SGD with momentum and weight decay. Masked coordinates receive no gradient,
// no weight decay, and no momentum, so once a weight is pruned to zero it
// stays exactly zero through any amount of retraining.
class SgdTrainer {
public:
    explicit SgdTrainer(std::size_t dim) : velocity_(dim, 0.0) {}

    // One pass over the training set; epoch_index seeds the shuffle stream so
    // the schedule is reproducible no matter how epochs are partitioned
    // between callers. Returns the mean per-example loss seen during the pass.
    double run_epoch(MlpModel& model, const Dataset& train, const TrainConfig& cfg,
                     const Mask& mask, std::size_t epoch_index, double learning_rate) {
        cfg.validate();
        if (mask.dim() != model.dim()) throw StructuralError("sgd: mask length mismatch");
        if (train.size() == 0) return 0.0;

        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng(cfg.seed, RngStream::train_shuffle, epoch_index);
        rng.shuffle(order);

        MlpWorkspace ws = model.make_workspace();
        std::vector<double> grad(model.dim(), 0.0);
        auto& values = model.space().values;
        double loss_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i)
                loss_sum += model.add_loss_grad(train.input(order[i]), train.labels[order[i]],
                                                grad, ws);
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            for (std::size_t q = 0; q < values.size(); ++q) {
                if (!mask.active[q]) {
                    velocity_[q] = 0.0;
                    continue;
                }
                const double g = grad[q] * inv_batch + cfg.weight_decay * values[q];
                velocity_[q] = cfg.momentum * velocity_[q] + g;
                values[q] -= learning_rate * velocity_[q];
            }
        }
        const double mean_loss = loss_sum / static_cast<double>(train.size());
        if (!std::isfinite(mean_loss)) throw NumericError("sgd: training diverged (non-finite loss)");
        return mean_loss;
    }

    void reset() { std::fill(velocity_.begin(), velocity_.end(), 0.0); }

private:
    std::vector<double> velocity_;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;
};

inline std::vector<EpochStats> sgd_train(MlpModel& model, const Dataset& train,
                                         const Dataset& test, const TrainConfig& cfg,
                                         const Mask& mask) {
    cfg.validate();
    apply_mask(model.space(), mask);
    SgdTrainer trainer(model.dim());
    std::vector<EpochStats> trace;
    trace.reserve(cfg.epochs);
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const double loss = trainer.run_epoch(model, train, cfg, mask, e, cfg.learning_rate);
        trace.push_back({e, loss, model.accuracy(test), cfg.learning_rate});
    }
    return trace;
}

// ---- checkpoint format: JSON header + little-endian float64 sidecar ----

namespace detail {

inline void append_le_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

inline double read_le_f64(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t(p[b]) << (8 * b);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
};

inline void save_checkpoint(const std::string& json_path, const MlpModel& model,
                            const CheckpointMeta& meta) {
    namespace fs = std::filesystem;
    const fs::path jp(json_path);
    const std::string bin_name = jp.stem().string() + ".bin";
    const fs::path bin_path = jp.parent_path() / bin_name;

    std::string payload;
    payload.reserve(model.dim() * 8);
    for (double v : model.space().values) detail::append_le_f64(payload, v);
    atomic_write_file(bin_path.string(), payload);

    std::string json = "{\n  \"format\": \"woodprune-checkpoint\",\n  \"version\": 1,\n";
    json += "  \"layer_sizes\": [";
    for (std::size_t i = 0; i < model.layer_sizes().size(); ++i) {
        if (i) json += ", ";
        json += std::to_string(model.layer_sizes()[i]);
    }
    json += "],\n";
    json += "  \"seed\": " + std::to_string(meta.seed) + ",\n";
    json += "  \"epoch\": " + std::to_string(meta.epoch) + ",\n";
    json += "  \"dim\": " + std::to_string(model.dim()) + ",\n";
    json += "  \"weights_file\": \"" + bin_name + "\"\n}\n";
    atomic_write_file(json_path, json);
}

namespace detail {

// Minimal field scanners for our own checkpoint header; the full JSON
// machinery in the CLI is not needed down here.
inline std::string json_find_string(const std::string& text, const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    auto pos = text.find(needle);
    if (pos == std::string::npos) throw FormatError("checkpoint: missing field '" + key + "'", 0);
    pos = text.find('"', text.find(':', pos));
    const auto end = text.find('"', pos + 1);
    return text.substr(pos + 1, end - pos - 1);
}

inline std::vector<std::size_t> json_find_uint_array(const std::string& text,
                                                     const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    auto pos = text.find(needle);
    if (pos == std::string::npos) throw FormatError("checkpoint: missing field '" + key + "'", 0);
    const auto open = text.find('[', pos);
    const auto close = text.find(']', open);
    std::vector<std::size_t> out;
    std::size_t value = 0;
    bool in_number = false;
    for (std::size_t i = open + 1; i <= close; ++i) {
        const char c = text[i];
        if (c >= '0' && c <= '9') {
            value = value * 10 + static_cast<std::size_t>(c - '0');
            in_number = true;
        } else if (in_number) {
            out.push_back(value);
            value = 0;
            in_number = false;
        }
    }
    return out;
}

inline std::uint64_t json_find_uint(const std::string& text, const std::string& key) {
    const std::string needle = "\"" + key + "\"";
    auto pos = text.find(needle);
    if (pos == std::string::npos) throw FormatError("checkpoint: missing field '" + key + "'", 0);
    pos = text.find(':', pos) + 1;
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
    std::uint64_t value = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9')
        value = value * 10 + static_cast<std::uint64_t>(text[pos++] - '0');
    return value;
}

}  // namespace detail

inline MlpModel load_checkpoint(const std::string& json_path, CheckpointMeta* meta = nullptr) {
    namespace fs = std::filesystem;
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + json_path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (detail::json_find_string(text, "format") != "woodprune-checkpoint")
        throw FormatError("checkpoint: unrecognized format tag", 0);
    const auto layer_sizes = detail::json_find_uint_array(text, "layer_sizes");
    const std::size_t dim = detail::json_find_uint(text, "dim");
    const std::string bin_name = detail::json_find_string(text, "weights_file");
    if (meta != nullptr) {
        meta->seed = detail::json_find_uint(text, "seed");
        meta->epoch = detail::json_find_uint(text, "epoch");
    }

    const fs::path bin_path = fs::path(json_path).parent_path() / bin_name;
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw DataError("checkpoint: cannot open weights file '" + bin_path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() != dim * 8)
        throw FormatError("checkpoint: weights payload has wrong length", bytes.size());

    std::vector<double> values(dim);
    for (std::size_t i = 0; i < dim; ++i) values[i] = detail::read_le_f64(bytes.data() + i * 8);

    LayerLayout layout = LayerLayout::for_mlp(layer_sizes);
    return MlpModel(layer_sizes, ParamSpace::make(std::move(values), std::move(layout)));
}

}  // namespace woodprune
