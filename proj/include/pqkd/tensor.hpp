// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_TENSOR_HPP
#define PQKD_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pqkd/common.hpp"

namespace pqkd {

// Dense row-major tensor of 64-bit reals. Shapes are small generic vectors;
// all numerics in this project are double precision.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shp, double fill = 0.0);

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }
    static Tensor full(std::vector<int> shp, double v) { return Tensor(std::move(shp), v); }
    static Tensor scalar(double v);
    static Tensor from(std::vector<int> shp, std::vector<double> values);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool empty() const { return data.empty(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Throws ConfigError naming `what` when the shapes differ.
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

bool all_finite(const Tensor& t);

}  // namespace pqkd

#endif
