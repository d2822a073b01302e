// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_DATA_HPP
#define PQKD_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pqkd/tensor.hpp"

namespace pqkd {

struct Dataset {
    Tensor images;            // [n,1,28,28], values in [0,1]
    std::vector<int> labels;  // in [0,10)
    std::string split;

    long size() const { return images.empty() ? 0 : images.dim(0); }

    // Copies rows `indices` into a new dataset (order preserved).
    Dataset subset(const std::vector<long>& indices, std::string split_tag) const;

    // Batch slice [lo, hi) as a [hi-lo,1,28,28] tensor plus labels.
    std::pair<Tensor, std::vector<int>> batch(long lo, long hi) const;
};

// IDX files: big-endian magic 0x00000803 (images, dims n,rows,cols) or
// 0x00000801 (labels, dim n); raw bytes follow. Pixels are divided by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Class-c ink templates: anchors picked from a coarse 4x4 grid with
// deterministic per-class offsets, so classes are geometrically separable.
struct SyntheticConfig {
    double sigma_blob = 1.6;
    double sigma_jit = 0.8;
    double sigma_pix = 0.05;
    double amp_lo = 0.8, amp_hi = 1.2;
    int n_per_class = 200;
    std::uint64_t seed = 0;

    // m anchors for class c (m = 2 when c is even, 3 when odd).
    static std::vector<std::array<double, 2>> anchors_for_class(int cls);
};

Dataset gen_synthetic(const SyntheticConfig& cfg);

// Disjoint (train, val, test) index sets from a seeded permutation.
// sizes = {n_train, n_val}; the remainder becomes test.
std::array<Dataset, 3> split(const Dataset& ds, std::uint64_t seed,
                             std::array<long, 2> sizes);

}  // namespace pqkd

#endif
