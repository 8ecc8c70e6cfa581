#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "woodprune/errors.hpp"

namespace woodprune {

enum class SegmentKind { dense_weight, bias };

struct LayerSegment {
    std::string name;
    SegmentKind kind = SegmentKind::dense_weight;
    std::size_t offset = 0;
    std::size_t length = 0;
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
};

// Flat-vector address book: every parameter lives at one offset in [0, d),
// segments are contiguous and never overlap.
struct LayerLayout {
    std::vector<LayerSegment> segments;

    std::size_t dim() const {
        return segments.empty() ? 0 : segments.back().offset + segments.back().length;
    }

    void validate() const {
        std::size_t expected = 0;
        for (const auto& seg : segments) {
            if (seg.offset != expected)
                throw StructuralError("layout: segment '" + seg.name + "' not contiguous");
            if (seg.length == 0)
                throw StructuralError("layout: segment '" + seg.name + "' is empty");
            if (seg.kind == SegmentKind::dense_weight && seg.length != seg.fan_in * seg.fan_out)
                throw StructuralError("layout: segment '" + seg.name +
                                      "' length != fan_in * fan_out");
            expected += seg.length;
        }
    }

    // fc1.weight, fc1.bias, fc2.weight, ... for a chain of dense layers.
    static LayerLayout for_mlp(std::span<const std::size_t> sizes) {
        if (sizes.size() < 2) throw ConfigError("layout: need at least two layer sizes");
        LayerLayout layout;
        std::size_t offset = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const std::string base = "fc" + std::to_string(l + 1);
            const std::size_t fan_in = sizes[l];
            const std::size_t fan_out = sizes[l + 1];
            layout.segments.push_back(
                {base + ".weight", SegmentKind::dense_weight, offset, fan_in * fan_out, fan_in, fan_out});
            offset += fan_in * fan_out;
            layout.segments.push_back({base + ".bias", SegmentKind::bias, offset, fan_out, fan_out, 1});
            offset += fan_out;
        }
        layout.validate();
        return layout;
    }

    std::size_t segment_index_of(std::size_t q) const {
        for (std::size_t s = 0; s < segments.size(); ++s) {
            if (q >= segments[s].offset && q < segments[s].offset + segments[s].length) return s;
        }
        throw StructuralError("layout: index " + std::to_string(q) + " outside all segments");
    }

    const LayerSegment& segment_of(std::size_t q) const { return segments[segment_index_of(q)]; }
};

// Weights plus the layout that addresses them. Bias entries are never
// prunable; everything in a dense-weight segment is.
struct ParamSpace {
    std::vector<double> values;
    LayerLayout layout;
    std::vector<std::uint8_t> prunable;

    std::size_t dim() const { return values.size(); }

    static ParamSpace make(std::vector<double> values, LayerLayout layout) {
        layout.validate();
        if (values.size() != layout.dim())
            throw StructuralError("param space: value count does not match layout");
        ParamSpace space;
        space.values = std::move(values);
        space.layout = std::move(layout);
        space.prunable.assign(space.values.size(), 0);
        for (const auto& seg : space.layout.segments) {
            if (seg.kind != SegmentKind::dense_weight) continue;
            std::fill(space.prunable.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                      space.prunable.begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.length),
                      std::uint8_t{1});
        }
        space.check_finite();
        return space;
    }

    void check_finite() const {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!std::isfinite(values[i]))
                throw NumericError("param space: non-finite value at index " + std::to_string(i));
        }
    }

    std::size_t prunable_count() const {
        std::size_t n = 0;
        for (auto p : prunable) n += p;
        return n;
    }
};

struct Mask {
    std::vector<std::uint8_t> active;

    std::size_t dim() const { return active.size(); }

    static Mask all_active(std::size_t d) {
        Mask m;
        m.active.assign(d, 1);
        return m;
    }

    std::size_t active_count() const {
        std::size_t n = 0;
        for (auto a : active) n += a;
        return n;
    }
};

// Fraction of prunable weights currently removed. Biases count in neither
// the numerator nor the denominator.
inline double sparsity_of(const Mask& mask, const ParamSpace& space) {
    if (mask.dim() != space.dim())
        throw StructuralError("sparsity_of: mask length does not match parameter count");
    std::size_t prunable = 0;
    std::size_t pruned = 0;
    for (std::size_t i = 0; i < space.dim(); ++i) {
        if (!space.prunable[i]) continue;
        ++prunable;
        if (!mask.active[i]) ++pruned;
    }
    if (prunable == 0) return 0.0;
    return static_cast<double>(pruned) / static_cast<double>(prunable);
}

// Zero out every masked value; masked entries stay zero from then on.
inline void apply_mask(ParamSpace& space, const Mask& mask) {
    if (mask.dim() != space.dim())
        throw StructuralError("apply_mask: mask length does not match parameter count");
    for (std::size_t i = 0; i < space.dim(); ++i) {
        if (!mask.active[i]) space.values[i] = 0.0;
    }
}

// Per-layer theoretical FLOP budget, measured against active parameters.
struct FlopLayer {
    std::string layer;
    double flops_total = 0.0;
    std::size_t active_params = 0;
};

struct FlopTable {
    std::vector<FlopLayer> layers;

    const FlopLayer* find(const std::string& name) const {
        for (const auto& l : layers) {
            if (l.layer == name) return &l;
        }
        return nullptr;
    }
};

// Convention: a dense layer costs 2 * fan_in * fan_out FLOPs at full density
// (multiply-add counted as two), and the cost scales with the active weights.
inline FlopTable dense_layer_flops(const LayerLayout& layout, const Mask& mask) {
    if (mask.dim() != layout.dim())
        throw StructuralError("dense_layer_flops: mask length does not match layout");
    FlopTable table;
    for (const auto& seg : layout.segments) {
        if (seg.kind != SegmentKind::dense_weight) continue;
        std::size_t active = 0;
        for (std::size_t i = seg.offset; i < seg.offset + seg.length; ++i) active += mask.active[i];
        table.layers.push_back({seg.name, 2.0 * static_cast<double>(active), active});
    }
    return table;
}

// Broadcast each layer's flops/active-param ratio to its indices. Indices in
// segments without a table entry (biases) get a neutral 1.0; they are never
// candidates for FLOPs-normalized selection.
inline std::vector<double> flops_per_param(const FlopTable& table, const LayerLayout& layout) {
    std::vector<double> fpp(layout.dim(), 1.0);
    for (const auto& seg : layout.segments) {
        const FlopLayer* entry = table.find(seg.name);
        if (entry == nullptr) {
            if (seg.kind == SegmentKind::dense_weight)
                throw StructuralError("flops_per_param: no table entry for layer '" + seg.name + "'");
            continue;
        }
        if (entry->active_params == 0)
            throw NumericError("flops_per_param: layer '" + seg.name + "' has zero active params");
        const double ratio = entry->flops_total / static_cast<double>(entry->active_params);
        if (!(ratio > 0.0))
            throw NumericError("flops_per_param: non-positive ratio for layer '" + seg.name + "'");
        std::fill(fpp.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                  fpp.begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.length), ratio);
    }
    return fpp;
}

}  // namespace woodprune
