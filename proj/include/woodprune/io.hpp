#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "woodprune/errors.hpp"
#include "woodprune/rng.hpp"

namespace woodprune {

enum class Split { train, test };

struct Dataset {
    std::vector<double> inputs;  // n x in_dim, row-major, values in [0, 1]
    std::vector<std::size_t> labels;
    std::size_t in_dim = 0;
    std::size_t num_classes = 0;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }

    std::span<const double> input(std::size_t i) const {
        return {inputs.data() + i * in_dim, in_dim};
    }

    void validate() const {
        if (inputs.size() != labels.size() * in_dim)
            throw DataError("dataset: input/label sizes disagree");
        for (std::size_t l : labels) {
            if (l >= num_classes) throw DataError("dataset: label out of range");
        }
    }
};

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, std::size_t& offset, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw FormatError(std::string("idx: truncated while reading ") + what, offset);
    offset += 4;
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace detail

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// MNIST-style IDX pair: big-endian headers, unsigned-byte payloads. Pixels
// are scaled to [0, 1] by dividing by 255. `limit` keeps the first examples.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::size_t limit = 0, Split split = Split::train) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw DataError("idx: cannot open images file '" + images_path + "'");
    std::size_t offset = 0;
    const std::uint32_t magic = detail::read_be_u32(images, offset, "images magic");
    if (magic != kIdxImagesMagic)
        throw FormatError("idx: bad images magic 0x" + std::to_string(magic), 0);
    const std::uint32_t n_images = detail::read_be_u32(images, offset, "image count");
    const std::uint32_t rows = detail::read_be_u32(images, offset, "row count");
    const std::uint32_t cols = detail::read_be_u32(images, offset, "column count");

    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw DataError("idx: cannot open labels file '" + labels_path + "'");
    std::size_t label_offset = 0;
    const std::uint32_t label_magic = detail::read_be_u32(labels, label_offset, "labels magic");
    if (label_magic != kIdxLabelsMagic)
        throw FormatError("idx: bad labels magic 0x" + std::to_string(label_magic), 0);
    const std::uint32_t n_labels = detail::read_be_u32(labels, label_offset, "label count");
    if (n_labels != n_images) throw FormatError("idx: image/label count mismatch", label_offset);

    std::size_t n = n_images;
    if (limit > 0) n = std::min<std::size_t>(n, limit);

    Dataset ds;
    ds.in_dim = static_cast<std::size_t>(rows) * cols;
    ds.num_classes = 10;
    ds.split = split;
    ds.inputs.resize(n * ds.in_dim);
    ds.labels.resize(n);

    std::vector<unsigned char> pixel_row(ds.in_dim);
    for (std::size_t i = 0; i < n; ++i) {
        images.read(reinterpret_cast<char*>(pixel_row.data()),
                    static_cast<std::streamsize>(ds.in_dim));
        if (!images) throw FormatError("idx: truncated image payload", offset);
        offset += ds.in_dim;
        for (std::size_t j = 0; j < ds.in_dim; ++j)
            ds.inputs[i * ds.in_dim + j] = static_cast<double>(pixel_row[j]) / 255.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        char c;
        labels.read(&c, 1);
        if (!labels) throw FormatError("idx: truncated label payload", label_offset);
        ++label_offset;
        ds.labels[i] = static_cast<unsigned char>(c);
    }
    ds.validate();
    return ds;
}

// Writes a dataset back out as an IDX pair; values are quantized to bytes.
// Row/column split is (rows, dim/rows) with rows the largest square-ish factor.
inline void write_mnist_idx(const Dataset& ds, const std::string& images_path,
                            const std::string& labels_path) {
    std::size_t rows = 1;
    for (std::size_t r = 1; r * r <= ds.in_dim; ++r) {
        if (ds.in_dim % r == 0) rows = r;
    }
    const std::size_t cols = ds.in_dim / rows;

    std::ofstream images(images_path, std::ios::binary | std::ios::trunc);
    if (!images) throw DataError("idx: cannot open '" + images_path + "' for writing");
    detail::write_be_u32(images, kIdxImagesMagic);
    detail::write_be_u32(images, static_cast<std::uint32_t>(ds.size()));
    detail::write_be_u32(images, static_cast<std::uint32_t>(rows));
    detail::write_be_u32(images, static_cast<std::uint32_t>(cols));
    std::vector<unsigned char> pixel_row(ds.in_dim);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (std::size_t j = 0; j < ds.in_dim; ++j) {
            const double v = std::clamp(ds.inputs[i * ds.in_dim + j], 0.0, 1.0);
            pixel_row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        images.write(reinterpret_cast<const char*>(pixel_row.data()),
                     static_cast<std::streamsize>(ds.in_dim));
    }

    std::ofstream labels(labels_path, std::ios::binary | std::ios::trunc);
    if (!labels) throw DataError("idx: cannot open '" + labels_path + "' for writing");
    detail::write_be_u32(labels, kIdxLabelsMagic);
    detail::write_be_u32(labels, static_cast<std::uint32_t>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const char c = static_cast<char>(ds.labels[i]);
        labels.write(&c, 1);
    }
}

// Class-conditional Gaussians in [0, 1]^dim. Class mean directions are random
// dense unit vectors, orthogonalized against each other while the dimension
// allows, so distinct classes never collapse onto the same mean. Means sit at
// 0.5 + (separation/2) * u_c, coordinate-clamped into the box; per-coordinate
// noise is fixed at sigma = 0.125 and samples are clamped into range. Class
// order is interleaved (0, 1, ..., C-1, 0, 1, ...), so any prefix stays
// balanced.
inline Dataset synth_gaussian_classes(std::size_t classes, std::size_t per_class, std::size_t dim,
                                      double separation, std::uint64_t seed,
                                      Split split = Split::train) {
    if (!(separation > 0.0)) throw ConfigError("synth: separation must be positive");
    if (classes == 0 || dim == 0) throw ConfigError("synth: classes and dim must be positive");

    constexpr double kSigma = 0.125;
    Rng rng(seed, RngStream::synth_data, split == Split::train ? 0 : 1);

    // Directions depend only on (seed, classes, dim), not on the split, so
    // train/test draws come from the same class-conditional distributions.
    Rng mean_rng(seed, RngStream::synth_data, 0xC1A55ull);
    std::vector<double> dirs(classes * dim);
    for (std::size_t c = 0; c < classes; ++c) {
        double* u = dirs.data() + c * dim;
        for (std::size_t j = 0; j < dim; ++j) u[j] = mean_rng.next_normal();
        for (std::size_t prev = 0; prev < std::min(c, dim); ++prev) {
            const double* v = dirs.data() + prev * dim;
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) dot += u[j] * v[j];
            for (std::size_t j = 0; j < dim; ++j) u[j] -= dot * v[j];
        }
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) norm_sq += u[j] * u[j];
        const double inv_norm = 1.0 / std::sqrt(std::max(norm_sq, 1e-300));
        for (std::size_t j = 0; j < dim; ++j) u[j] *= inv_norm;
    }

    std::vector<double> means(classes * dim);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t j = 0; j < dim; ++j)
            means[c * dim + j] =
                std::clamp(0.5 + (separation / 2.0) * dirs[c * dim + j], 0.0, 1.0);

    Dataset ds;
    ds.in_dim = dim;
    ds.num_classes = classes;
    ds.split = split;
    const std::size_t n = classes * per_class;
    ds.inputs.resize(n * dim);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        ds.labels[i] = c;
        for (std::size_t j = 0; j < dim; ++j) {
            const double v = means[c * dim + j] + kSigma * rng.next_normal();
            ds.inputs[i * dim + j] = std::clamp(v, 0.0, 1.0);
        }
    }
    return ds;
}

// All result files are written to a temp path then renamed, so an interrupted
// run never leaves a partial file at the destination.
inline void atomic_write_file(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + tmp + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw DataError("short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw DataError("rename '" + tmp + "' -> '" + path + "' failed: " + ec.message());
}

}  // namespace woodprune
