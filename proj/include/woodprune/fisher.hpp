#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "woodprune/core.hpp"
#include "woodprune/errors.hpp"
#include "woodprune/io.hpp"
#include "woodprune/model.hpp"
#include "woodprune/parallel.hpp"
#include "woodprune/rng.hpp"

namespace woodprune {

// One rank-one term of the empirical Fisher: a per-example gradient, or the
// mean over a mini-batch of them. `weight` records how many raw examples
// were averaged in.
struct GradSample {
    std::vector<double> grad;
    std::size_t weight = 1;
};

enum class LabelMode { empirical, sampled };

struct FisherConfig {
    std::size_t subsample_size = 80;   // m: number of rank-one terms
    std::size_t minibatch_size = 100;  // raw examples averaged into each term
    double damp = 1e-5;                // lambda
    std::size_t chunk_size = 1000;     // c: diagonal block size inside a layer
    LabelMode label_mode = LabelMode::empirical;

    // Blocks up to this size store the explicit dense inverse; larger blocks
    // keep the algebraically identical factored form inv = I/lambda - U U'.
    std::size_t dense_block_limit = 4096;

    void validate() const {
        if (subsample_size == 0) throw ConfigError("fisher: subsample_size must be >= 1");
        if (minibatch_size == 0) throw ConfigError("fisher: minibatch_size must be >= 1");
        if (chunk_size == 0) throw ConfigError("fisher: chunk_size must be >= 1");
        if (!(damp > 0.0)) throw ConfigError("fisher: damp must be positive");
    }
};

// Draw m mini-batches without replacement (one pass over a shuffled index
// list) and average the per-example gradients within each. In sampled mode
// the labels come from the model's own softmax instead of the dataset.
inline std::vector<GradSample> collect_grad_samples(const MlpModel& model, const Dataset& data,
                                                    const FisherConfig& cfg, std::uint64_t seed,
                                                    std::uint64_t round = 0) {
    cfg.validate();
    const std::size_t needed = cfg.subsample_size * cfg.minibatch_size;
    if (data.size() < needed)
        throw DataError("fisher: need " + std::to_string(needed) + " examples, dataset has " +
                        std::to_string(data.size()));

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng pick_rng(seed, RngStream::fisher_sampling, round);
    pick_rng.shuffle(order);
    Rng label_rng(seed, RngStream::label_sampling, round);

    MlpWorkspace ws = model.make_workspace();
    std::vector<GradSample> samples;
    samples.reserve(cfg.subsample_size);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < cfg.subsample_size; ++s) {
        GradSample sample;
        sample.grad.assign(model.dim(), 0.0);
        sample.weight = cfg.minibatch_size;
        for (std::size_t b = 0; b < cfg.minibatch_size; ++b) {
            const std::size_t idx = order[cursor++];
            const std::size_t label = (cfg.label_mode == LabelMode::sampled)
                                          ? model.sample_label(data.input(idx), label_rng)
                                          : data.labels[idx];
            model.add_loss_grad(data.input(idx), label, sample.grad, ws);
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.minibatch_size);
        for (double& g : sample.grad) g *= inv_b;
        samples.push_back(std::move(sample));
    }
    return samples;
}

// One diagonal block of the inverse estimate. Either the dense c x c inverse
// is held explicitly, or (for large blocks) the factored form
//   inv = I/lambda - U U'
// with U built column-by-column from the same rank-one recurrence.
struct FisherChunk {
    std::size_t offset = 0;
    std::size_t length = 0;
    bool factored = false;
    std::vector<double> dense;   // length x length, row-major (dense storage)
    std::vector<double> factor;  // length x rank, row-major (factored storage)
    std::size_t rank = 0;

    bool is_dense() const { return !factored; }

    double diag_entry(std::size_t local, double damp) const {
        if (is_dense()) return dense[local * length + local];
        double v = 1.0 / damp;
        const double* row = factor.data() + local * rank;
        for (std::size_t n = 0; n < rank; ++n) v -= row[n] * row[n];
        return v;
    }

    // out = block_inverse * v (both of chunk length)
    void apply(std::span<const double> v, std::span<double> out, double damp) const {
        if (is_dense()) {
            for (std::size_t i = 0; i < length; ++i) {
                const double* row = dense.data() + i * length;
                double acc = 0.0;
                for (std::size_t j = 0; j < length; ++j) acc += row[j] * v[j];
                out[i] = acc;
            }
            return;
        }
        std::vector<double> t(rank, 0.0);
        for (std::size_t i = 0; i < length; ++i) {
            const double* row = factor.data() + i * rank;
            const double vi = v[i];
            for (std::size_t n = 0; n < rank; ++n) t[n] += row[n] * vi;
        }
        const double inv_damp = 1.0 / damp;
        for (std::size_t i = 0; i < length; ++i) {
            const double* row = factor.data() + i * rank;
            double acc = v[i] * inv_damp;
            for (std::size_t n = 0; n < rank; ++n) acc -= row[n] * t[n];
            out[i] = acc;
        }
    }
};

// Block-diagonal estimate of the inverse dampened empirical Fisher. Chunks
// partition the parameter vector and never straddle a layout segment.
class ChunkedFisherInverse {
public:
    ChunkedFisherInverse() = default;
    ChunkedFisherInverse(std::vector<FisherChunk> chunks, std::size_t dim, FisherConfig cfg)
        : chunks_(std::move(chunks)), dim_(dim), cfg_(cfg) {}

    std::size_t dim() const { return dim_; }
    double damp() const { return cfg_.damp; }
    const FisherConfig& config() const { return cfg_; }
    const std::vector<FisherChunk>& chunks() const { return chunks_; }

    void ihvp_into(std::span<const double> v, std::span<double> out) const {
        if (v.size() != dim_ || out.size() != dim_)
            throw StructuralError("ihvp: vector length mismatch");
        // anything not covered by a chunk scales by 1/lambda
        const double inv_damp = 1.0 / cfg_.damp;
        for (std::size_t i = 0; i < dim_; ++i) out[i] = v[i] * inv_damp;
        for (const auto& chunk : chunks_)
            chunk.apply(v.subspan(chunk.offset, chunk.length),
                        out.subspan(chunk.offset, chunk.length), cfg_.damp);
    }

    std::vector<double> ihvp(std::span<const double> v) const {
        std::vector<double> out(dim_);
        ihvp_into(v, out);
        return out;
    }

    std::vector<double> inverse_diagonal() const {
        std::vector<double> diag(dim_, 1.0 / cfg_.damp);
        for (const auto& chunk : chunks_)
            for (std::size_t i = 0; i < chunk.length; ++i)
                diag[chunk.offset + i] = chunk.diag_entry(i, cfg_.damp);
        return diag;
    }

    double diag_entry(std::size_t q) const {
        for (const auto& chunk : chunks_) {
            if (q >= chunk.offset && q < chunk.offset + chunk.length)
                return chunk.diag_entry(q - chunk.offset, cfg_.damp);
        }
        return 1.0 / cfg_.damp;
    }

    // H^-1 e_q; nonzero only inside q's chunk.
    std::vector<double> column(std::size_t q) const {
        std::vector<double> e(dim_, 0.0);
        e[q] = 1.0;
        return ihvp(e);
    }

private:
    std::vector<FisherChunk> chunks_;
    std::size_t dim_ = 0;
    FisherConfig cfg_;
};

namespace detail {

// Chunk boundaries: each layout segment is cut into ceil(len / c) pieces; the
// last piece may be short. Chunks therefore never span segments.
inline std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(const LayerLayout& layout,
                                                                     std::size_t chunk_size) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (const auto& seg : layout.segments) {
        std::size_t pos = 0;
        while (pos < seg.length) {
            const std::size_t len = std::min(chunk_size, seg.length - pos);
            ranges.emplace_back(seg.offset + pos, len);
            pos += len;
        }
    }
    return ranges;
}

inline void build_dense_chunk(FisherChunk& chunk, const std::vector<GradSample>& samples,
                              double damp) {
    const std::size_t c = chunk.length;
    const std::size_t m = samples.size();
    chunk.dense.assign(c * c, 0.0);
    for (std::size_t i = 0; i < c; ++i) chunk.dense[i * c + i] = 1.0 / damp;
    if (m == 0) return;

    std::vector<double> u(c);
    for (std::size_t n = 0; n < m; ++n) {
        const double* g = samples[n].grad.data() + chunk.offset;
        double denom = static_cast<double>(m);
        for (std::size_t i = 0; i < c; ++i) {
            const double* row = chunk.dense.data() + i * c;
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += row[j] * g[j];
            u[i] = acc;
        }
        for (std::size_t i = 0; i < c; ++i) denom += g[i] * u[i];
        if (!std::isfinite(denom) || denom <= 0.0)
            throw NumericError("woodfisher: bad denominator at update " + std::to_string(n));
        const double inv_denom = 1.0 / denom;
        for (std::size_t i = 0; i < c; ++i) {
            const double ui = u[i] * inv_denom;
            double* row = chunk.dense.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) row[j] -= ui * u[j];
        }
    }
    for (double v : chunk.dense) {
        if (!std::isfinite(v)) throw NumericError("woodfisher: non-finite inverse block entry");
    }
}

inline void build_factored_chunk(FisherChunk& chunk, const std::vector<GradSample>& samples,
                                 double damp) {
    const std::size_t c = chunk.length;
    const std::size_t m = samples.size();
    chunk.factored = true;
    chunk.rank = m;
    chunk.factor.assign(c * m, 0.0);
    if (m == 0) return;

    std::vector<double> t(m);
    std::vector<double> v(c);
    const double inv_damp = 1.0 / damp;
    for (std::size_t n = 0; n < m; ++n) {
        const double* g = samples[n].grad.data() + chunk.offset;
        // v = B_{n-1} g  via the factored form accumulated so far
        std::fill(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
        for (std::size_t i = 0; i < c; ++i) {
            const double* row = chunk.factor.data() + i * m;
            const double gi = g[i];
            for (std::size_t k = 0; k < n; ++k) t[k] += row[k] * gi;
        }
        double denom = static_cast<double>(m);
        for (std::size_t i = 0; i < c; ++i) {
            const double* row = chunk.factor.data() + i * m;
            double acc = g[i] * inv_damp;
            for (std::size_t k = 0; k < n; ++k) acc -= row[k] * t[k];
            v[i] = acc;
            denom += g[i] * acc;
        }
        if (!std::isfinite(denom) || denom <= 0.0)
            throw NumericError("woodfisher: bad denominator at update " + std::to_string(n));
        const double scale = 1.0 / std::sqrt(denom);
        for (std::size_t i = 0; i < c; ++i) chunk.factor[i * m + n] = v[i] * scale;
    }
}

}  // namespace detail

// Sequential Sherman-Morrison updates per chunk, starting from I/lambda with
// denominator m + g' B g. Chunks are independent, so the build parallelizes
// across them without changing any result.
inline ChunkedFisherInverse woodfisher_build(const std::vector<GradSample>& samples,
                                             const LayerLayout& layout, const FisherConfig& cfg,
                                             std::size_t threads = 1) {
    cfg.validate();
    layout.validate();
    const std::size_t d = layout.dim();
    for (const auto& s : samples) {
        if (s.grad.size() != d) throw StructuralError("woodfisher: sample length mismatch");
    }

    const auto ranges = detail::chunk_ranges(layout, cfg.chunk_size);
    std::vector<FisherChunk> chunks(ranges.size());
    parallel_for(ranges.size(), threads, [&](std::size_t idx) {
        FisherChunk& chunk = chunks[idx];
        chunk.offset = ranges[idx].first;
        chunk.length = ranges[idx].second;
        if (chunk.length <= cfg.dense_block_limit)
            detail::build_dense_chunk(chunk, samples, cfg.damp);
        else
            detail::build_factored_chunk(chunk, samples, cfg.damp);
    });
    return ChunkedFisherInverse(std::move(chunks), d, cfg);
}

// Diagonal of the dampened empirical Fisher itself (not of its inverse).
struct DiagonalFisher {
    std::vector<double> diag;
};

inline DiagonalFisher diagonal_fisher(const std::vector<GradSample>& samples, double damp) {
    if (!(damp > 0.0)) throw ConfigError("fisher: damp must be positive");
    if (samples.empty()) return DiagonalFisher{};
    const std::size_t d = samples.front().grad.size();
    DiagonalFisher out;
    out.diag.assign(d, 0.0);
    for (const auto& s : samples) {
        if (s.grad.size() != d) throw StructuralError("diagonal_fisher: sample length mismatch");
        for (std::size_t i = 0; i < d; ++i) out.diag[i] += s.grad[i] * s.grad[i];
    }
    const double inv_m = 1.0 / static_cast<double>(samples.size());
    for (double& v : out.diag) v = damp + v * inv_m;
    return out;
}

// Action of the dampened empirical Fisher: Hv = lambda v + (1/m) sum g (g'v).
// This is the exact operator the inverse chunks approximate block-wise.
inline std::vector<double> fisher_matvec(const std::vector<GradSample>& samples, double damp,
                                         std::span<const double> v) {
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = damp * v[i];
    if (samples.empty()) return out;
    const double inv_m = 1.0 / static_cast<double>(samples.size());
    for (const auto& s : samples) {
        if (s.grad.size() != v.size()) throw StructuralError("fisher_matvec: length mismatch");
        double dot = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) dot += s.grad[i] * v[i];
        const double scale = dot * inv_m;
        for (std::size_t i = 0; i < v.size(); ++i) out[i] += scale * s.grad[i];
    }
    return out;
}

// ---- gradient dump: "WFGD" | version u32 | d u64 | m u64 | minibatch u32,
// all little-endian, followed by m vectors of d little-endian float64 ----

constexpr std::uint32_t kGradDumpVersion = 1;

namespace detail {

template <typename T>
void append_le(std::string& out, T value) {
    for (std::size_t b = 0; b < sizeof(T); ++b)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * b)) & 0xff));
}

template <typename T>
T read_le(std::istream& in, std::size_t& offset, const char* what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw FormatError(std::string("grad dump: truncated while reading ") + what, offset);
    offset += sizeof(T);
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= std::uint64_t(buf[b]) << (8 * b);
    return static_cast<T>(bits);
}

}  // namespace detail

inline void write_grad_dump(const std::string& path, const std::vector<GradSample>& samples,
                            std::uint32_t minibatch) {
    const std::size_t d = samples.empty() ? 0 : samples.front().grad.size();
    std::string out;
    out.reserve(4 + 4 + 8 + 8 + 4 + samples.size() * d * 8);
    out += "WFGD";
    detail::append_le<std::uint32_t>(out, kGradDumpVersion);
    detail::append_le<std::uint64_t>(out, d);
    detail::append_le<std::uint64_t>(out, samples.size());
    detail::append_le<std::uint32_t>(out, minibatch);
    for (const auto& s : samples) {
        if (s.grad.size() != d) throw StructuralError("grad dump: sample length mismatch");
        for (double v : s.grad) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::append_le<std::uint64_t>(out, bits);
        }
    }
    atomic_write_file(path, out);
}

inline std::vector<GradSample> read_grad_dump(const std::string& path,
                                              std::uint32_t* minibatch_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("grad dump: cannot open '" + path + "'");
    std::size_t offset = 0;
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "WFGD", 4) != 0)
        throw FormatError("grad dump: bad magic", 0);
    offset = 4;
    const auto version = detail::read_le<std::uint32_t>(in, offset, "version");
    if (version != kGradDumpVersion)
        throw FormatError("grad dump: unsupported version " + std::to_string(version), 4);
    const auto d = detail::read_le<std::uint64_t>(in, offset, "dimension");
    const auto m = detail::read_le<std::uint64_t>(in, offset, "sample count");
    const auto minibatch = detail::read_le<std::uint32_t>(in, offset, "minibatch");
    if (minibatch_out != nullptr) *minibatch_out = minibatch;

    std::vector<GradSample> samples(m);
    for (std::size_t s = 0; s < m; ++s) {
        samples[s].grad.resize(d);
        samples[s].weight = minibatch;
        for (std::size_t i = 0; i < d; ++i) {
            const auto bits = detail::read_le<std::uint64_t>(in, offset, "gradient payload");
            double v;
            std::memcpy(&v, &bits, 8);
            samples[s].grad[i] = v;
        }
    }
    return samples;
}

}  // namespace woodprune
