#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "woodprune/errors.hpp"

namespace woodprune {

// Every random choice in the toolkit flows from one 64-bit seed through
// named streams, so any run is reproducible bit-for-bit from (seed, stream).
// Streams are combined with the seed via SplitMix64-style mixing; the
// generator itself is counter-based, so split-off substreams never overlap.
enum class RngStream : std::uint64_t {
    weight_init = 1,
    train_shuffle = 2,
    fisher_sampling = 3,
    label_sampling = 4,
    synth_data = 5,
};

class Rng {
public:
    Rng(std::uint64_t seed, RngStream stream, std::uint64_t substream = 0)
        : key_(mix(mix(seed ^ 0x9e3779b97f4a7c15ull) ^
                   mix(static_cast<std::uint64_t>(stream) * 0xbf58476d1ce4e5b9ull) ^
                   mix(substream * 0x94d049bb133111ebull))) {}

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; the spare is cached.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw ConfigError("next_below: n must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Draw from a categorical distribution given (unnormalized) probabilities.
    std::size_t categorical(std::span<const double> probs) {
        double total = 0.0;
        for (double p : probs) total += p;
        if (!(total > 0.0)) throw NumericError("categorical: non-positive probability mass");
        double r = next_double() * total;
        for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
            r -= probs[i];
            if (r < 0.0) return i;
        }
        return probs.size() - 1;
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace woodprune
