// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pqkd/rng.hpp"

namespace pqkd {

namespace {

constexpr int kImgSide = 28;
constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::ifstream& in, const std::string& path, const char* what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw FormatError("load_idx: truncated " + std::string(what) + " at offset " +
                          std::to_string(static_cast<long>(in.tellg())) + " in " + path);
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

void write_be32(std::ofstream& out, std::uint32_t v) {
    const unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                                  static_cast<unsigned char>(v >> 16),
                                  static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

Dataset Dataset::subset(const std::vector<long>& indices, std::string split_tag) const {
    Dataset out;
    out.split = std::move(split_tag);
    out.images = Tensor({static_cast<int>(indices.size()), 1, kImgSide, kImgSide});
    out.labels.resize(indices.size());
    const std::size_t stride = static_cast<std::size_t>(kImgSide) * kImgSide;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const long src = indices[i];
        if (src < 0 || src >= size()) throw UsageError("Dataset::subset: index out of range");
        std::copy_n(images.ptr() + static_cast<std::size_t>(src) * stride, stride,
                    out.images.ptr() + i * stride);
        out.labels[i] = labels[static_cast<std::size_t>(src)];
    }
    return out;
}

std::pair<Tensor, std::vector<int>> Dataset::batch(long lo, long hi) const {
    if (lo < 0 || hi > size() || lo >= hi) throw UsageError("Dataset::batch: bad range");
    const std::size_t stride = static_cast<std::size_t>(kImgSide) * kImgSide;
    Tensor x({static_cast<int>(hi - lo), 1, kImgSide, kImgSide});
    std::copy_n(images.ptr() + static_cast<std::size_t>(lo) * stride,
                static_cast<std::size_t>(hi - lo) * stride, x.ptr());
    std::vector<int> y(labels.begin() + lo, labels.begin() + hi);
    return {std::move(x), std::move(y)};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw FormatError("load_idx: cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw FormatError("load_idx: cannot open " + labels_path);

    const std::uint32_t imagic = read_be32(imgs, images_path, "image magic");
    if (imagic != kImageMagic)
        throw FormatError("load_idx: bad image magic in " + images_path + " at offset 0");
    const std::uint32_t n_img = read_be32(imgs, images_path, "image count");
    const std::uint32_t rows = read_be32(imgs, images_path, "row count");
    const std::uint32_t cols = read_be32(imgs, images_path, "column count");
    if (rows != kImgSide || cols != kImgSide)
        throw FormatError("load_idx: expected 28x28 images, got " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " in " + images_path);

    const std::uint32_t lmagic = read_be32(labs, labels_path, "label magic");
    if (lmagic != kLabelMagic)
        throw FormatError("load_idx: bad label magic in " + labels_path + " at offset 0");
    const std::uint32_t n_lab = read_be32(labs, labels_path, "label count");
    if (n_img != n_lab)
        throw FormatError("load_idx: " + std::to_string(n_img) + " images vs " +
                          std::to_string(n_lab) + " labels");

    Dataset ds;
    ds.split = "all";
    ds.images = Tensor({static_cast<int>(n_img), 1, kImgSide, kImgSide});
    ds.labels.resize(n_img);
    std::vector<unsigned char> buf(static_cast<std::size_t>(kImgSide) * kImgSide);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (!imgs)
            throw FormatError("load_idx: truncated image " + std::to_string(i) + " in " +
                              images_path);
        double* dst = ds.images.ptr() + static_cast<std::size_t>(i) * buf.size();
        for (std::size_t p = 0; p < buf.size(); ++p) dst[p] = static_cast<double>(buf[p]) / 255.0;
        char lab;
        labs.read(&lab, 1);
        if (!labs)
            throw FormatError("load_idx: truncated label " + std::to_string(i) + " in " +
                              labels_path);
        const int y = static_cast<unsigned char>(lab);
        if (y >= 10)
            throw DataError("load_idx: label " + std::to_string(y) + " outside [0,10) in " +
                            labels_path);
        ds.labels[i] = y;
    }
    return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw FormatError("write_idx: cannot open " + images_path);
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw FormatError("write_idx: cannot open " + labels_path);
    write_be32(imgs, kImageMagic);
    write_be32(imgs, static_cast<std::uint32_t>(ds.size()));
    write_be32(imgs, kImgSide);
    write_be32(imgs, kImgSide);
    write_be32(labs, kLabelMagic);
    write_be32(labs, static_cast<std::uint32_t>(ds.size()));
    const std::size_t stride = static_cast<std::size_t>(kImgSide) * kImgSide;
    std::vector<unsigned char> buf(stride);
    for (long i = 0; i < ds.size(); ++i) {
        const double* src = ds.images.ptr() + static_cast<std::size_t>(i) * stride;
        for (std::size_t p = 0; p < stride; ++p)
            buf[p] = static_cast<unsigned char>(std::lround(std::clamp(src[p], 0.0, 1.0) * 255.0));
        imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(stride));
        const char lab = static_cast<char>(ds.labels[static_cast<std::size_t>(i)]);
        labs.write(&lab, 1);
    }
}

std::vector<std::array<double, 2>> SyntheticConfig::anchors_for_class(int cls) {
    if (cls < 0 || cls >= 10) throw ConfigError("anchors_for_class: class outside [0,10)");
    // 4x4 grid at pixel centers {4.5, 10.5, 16.5, 22.5}^2, indexed row-major.
    auto grid = [](int cell) -> std::array<double, 2> {
        const double coord[4] = {4.5, 10.5, 16.5, 22.5};
        return {coord[cell / 4], coord[cell % 4]};
    };
    const int m = 2 + (cls % 2);
    std::vector<std::array<double, 2>> anchors;
    anchors.push_back(grid(cls));
    anchors.push_back(grid((cls + 5) % 16));
    if (m == 3) anchors.push_back(grid((cls + 11) % 16));
    return anchors;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.sigma_blob <= 0.0 || cfg.sigma_jit < 0.0 || cfg.sigma_pix < 0.0)
        throw ConfigError("gen_synthetic: widths must be nonnegative (sigma_blob positive)");
    if (cfg.n_per_class < 1) throw ConfigError("gen_synthetic: n_per_class must be >= 1");
    for (int c = 0; c < 10; ++c)
        for (const auto& [au, av] : SyntheticConfig::anchors_for_class(c))
            if (au < 0.0 || au > kImgSide - 1 || av < 0.0 || av > kImgSide - 1)
                throw ConfigError("gen_synthetic: anchor outside image bounds");

    const long n = 10L * cfg.n_per_class;
    Dataset ds;
    ds.split = "all";
    ds.images = Tensor({static_cast<int>(n), 1, kImgSide, kImgSide});
    ds.labels.resize(static_cast<std::size_t>(n));
    RngStream rng = RngStream::named(cfg.seed, "synthetic");

    long idx = 0;
    for (int c = 0; c < 10; ++c) {
        const auto anchors = SyntheticConfig::anchors_for_class(c);
        for (int s = 0; s < cfg.n_per_class; ++s, ++idx) {
            double* img = ds.images.ptr() + static_cast<std::size_t>(idx) * kImgSide * kImgSide;
            ds.labels[static_cast<std::size_t>(idx)] = c;
            for (const auto& [au, av] : anchors) {
                const double mu = au + cfg.sigma_jit * rng.next_gaussian();
                const double nu = av + cfg.sigma_jit * rng.next_gaussian();
                const double amp = rng.next_uniform(cfg.amp_lo, cfg.amp_hi);
                const double inv2s2 = 1.0 / (2.0 * cfg.sigma_blob * cfg.sigma_blob);
                for (int u = 0; u < kImgSide; ++u) {
                    const double du = u - mu;
                    for (int v = 0; v < kImgSide; ++v) {
                        const double dv = v - nu;
                        img[u * kImgSide + v] += amp * std::exp(-(du * du + dv * dv) * inv2s2);
                    }
                }
            }
            for (int p = 0; p < kImgSide * kImgSide; ++p) {
                const double noisy = img[p] + cfg.sigma_pix * rng.next_gaussian();
                img[p] = std::clamp(noisy, 0.0, 1.0);
            }
        }
    }
    return ds;
}

std::array<Dataset, 3> split(const Dataset& ds, std::uint64_t seed, std::array<long, 2> sizes) {
    const long n = ds.size();
    if (sizes[0] < 0 || sizes[1] < 0 || sizes[0] + sizes[1] > n)
        throw UsageError("split: requested " + std::to_string(sizes[0] + sizes[1]) +
                         " rows from a dataset of " + std::to_string(n));
    std::vector<long> perm(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    RngStream rng = RngStream::named(seed, "split");
    for (long i = n - 1; i > 0; --i) {
        const long j = static_cast<long>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const std::vector<long> tr(perm.begin(), perm.begin() + sizes[0]);
    const std::vector<long> va(perm.begin() + sizes[0], perm.begin() + sizes[0] + sizes[1]);
    const std::vector<long> te(perm.begin() + sizes[0] + sizes[1], perm.end());
    return {ds.subset(tr, "train"), ds.subset(va, "val"), ds.subset(te, "test")};
}

}  // namespace pqkd
