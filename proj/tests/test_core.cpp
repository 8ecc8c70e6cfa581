#include <catch2/catch_amalgamated.hpp>

#include "woodprune/core.hpp"

using namespace woodprune;

namespace {

ParamSpace tiny_space() {
    // two dense layers (3->2, 2->1) with biases: d = 6 + 2 + 2 + 1 = 11
    std::vector<std::size_t> sizes = {3, 2, 1};
    LayerLayout layout = LayerLayout::for_mlp(sizes);
    std::vector<double> values(layout.dim());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i) + 1.0;
    return ParamSpace::make(std::move(values), std::move(layout));
}

}  // namespace

TEST_CASE("mlp layout covers [0, d) contiguously") {
    std::vector<std::size_t> sizes = {784, 40, 20, 10};
    const LayerLayout layout = LayerLayout::for_mlp(sizes);
    REQUIRE(layout.dim() == 784 * 40 + 40 + 40 * 20 + 20 + 20 * 10 + 10);
    REQUIRE(layout.segments.size() == 6);
    std::size_t expected = 0;
    for (const auto& seg : layout.segments) {
        REQUIRE(seg.offset == expected);
        expected += seg.length;
    }
    REQUIRE(layout.segments[0].name == "fc1.weight");
    REQUIRE(layout.segments[1].kind == SegmentKind::bias);
    REQUIRE(layout.segment_of(784 * 40).name == "fc1.bias");
}

TEST_CASE("layout validation rejects gaps and bad dense lengths") {
    LayerLayout layout;
    layout.segments.push_back({"a.weight", SegmentKind::dense_weight, 0, 6, 3, 2});
    layout.segments.push_back({"a.bias", SegmentKind::bias, 7, 2, 2, 1});  // gap at 6
    REQUIRE_THROWS_AS(layout.validate(), StructuralError);

    LayerLayout bad;
    bad.segments.push_back({"a.weight", SegmentKind::dense_weight, 0, 5, 3, 2});  // 5 != 6
    REQUIRE_THROWS_AS(bad.validate(), StructuralError);
}

TEST_CASE("biases are never prunable") {
    const ParamSpace space = tiny_space();
    for (const auto& seg : space.layout.segments) {
        for (std::size_t q = seg.offset; q < seg.offset + seg.length; ++q) {
            if (seg.kind == SegmentKind::bias) {
                REQUIRE_FALSE(space.prunable[q]);
            } else {
                REQUIRE(space.prunable[q]);
            }
        }
    }
    REQUIRE(space.prunable_count() == 8);
}

TEST_CASE("non-finite values are rejected") {
    std::vector<std::size_t> sizes = {3, 2, 1};
    LayerLayout layout = LayerLayout::for_mlp(sizes);
    std::vector<double> values(layout.dim(), 0.0);
    values[3] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(ParamSpace::make(std::move(values), std::move(layout)), NumericError);
}

TEST_CASE("sparsity counts only prunable indices") {
    const ParamSpace space = tiny_space();
    Mask mask = Mask::all_active(space.dim());
    REQUIRE(sparsity_of(mask, space) == 0.0);

    // prune 4 of the 8 prunable weights; flipping biases must not count
    mask.active[0] = 0;
    mask.active[1] = 0;
    mask.active[8] = 0;  // fc2.weight offset = 6 + 2 = 8
    mask.active[9] = 0;
    REQUIRE(sparsity_of(mask, space) == 0.5);

    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (space.prunable[q]) mask.active[q] = 0;
    }
    REQUIRE(sparsity_of(mask, space) == 1.0);

    Mask wrong;
    wrong.active.assign(space.dim() + 1, 1);
    REQUIRE_THROWS_AS(sparsity_of(wrong, space), StructuralError);
}

TEST_CASE("mask application keeps exact zeros and round-trips the fraction") {
    ParamSpace space = tiny_space();
    Mask mask = Mask::all_active(space.dim());
    auto prunable_indices = std::vector<std::size_t>{};
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (space.prunable[q]) prunable_indices.push_back(q);
    }
    // request exactly 1/4 of the prunable weights
    for (std::size_t i = 0; i < prunable_indices.size() / 4; ++i)
        mask.active[prunable_indices[i]] = 0;
    apply_mask(space, mask);
    REQUIRE(sparsity_of(mask, space) == 0.25);
    for (std::size_t q = 0; q < space.dim(); ++q) {
        if (!mask.active[q]) REQUIRE(space.values[q] == 0.0);
    }
}

TEST_CASE("flops per param broadcasts layer ratios") {
    const ParamSpace space = tiny_space();

    SECTION("explicit table") {
        FlopTable table;
        table.layers.push_back({"fc1.weight", 10.0, 5});
        table.layers.push_back({"fc2.weight", 30.0, 3});
        const auto fpp = flops_per_param(table, space.layout);
        for (std::size_t q = 0; q < 6; ++q) REQUIRE(fpp[q] == Catch::Approx(2.0));
        for (std::size_t q = 8; q < 10; ++q) REQUIRE(fpp[q] == Catch::Approx(10.0));
    }

    SECTION("dense convention: 2 flops per active weight") {
        Mask mask = Mask::all_active(space.dim());
        const auto table = dense_layer_flops(space.layout, mask);
        REQUIRE(table.layers.size() == 2);
        REQUIRE(table.layers[0].flops_total == Catch::Approx(12.0));
        const auto fpp = flops_per_param(table, space.layout);
        REQUIRE(fpp[0] == Catch::Approx(2.0));

        // pruning 4 of 6 weights preserves the ratio for dense layers
        for (std::size_t q = 0; q < 4; ++q) mask.active[q] = 0;
        const auto pruned_table = dense_layer_flops(space.layout, mask);
        REQUIRE(pruned_table.layers[0].flops_total == Catch::Approx(4.0));
        REQUIRE(flops_per_param(pruned_table, space.layout)[0] == Catch::Approx(2.0));
    }

    SECTION("degenerate layer errors") {
        FlopTable table;
        table.layers.push_back({"fc1.weight", 0.0, 0});
        table.layers.push_back({"fc2.weight", 30.0, 3});
        REQUIRE_THROWS_AS(flops_per_param(table, space.layout), NumericError);
    }

    SECTION("missing layer errors") {
        FlopTable table;
        table.layers.push_back({"fc1.weight", 10.0, 5});
        REQUIRE_THROWS_AS(flops_per_param(table, space.layout), StructuralError);
    }
}
