// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#include "pqkd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace pqkd {

Tensor::Tensor(std::vector<int> shp, double fill) : shape(std::move(shp)) {
    const std::int64_t n = shape_numel(shape);
    data.assign(static_cast<std::size_t>(n), fill);
}

Tensor Tensor::scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<int> shp, std::vector<double> values) {
    if (shape_numel(shp) != static_cast<std::int64_t>(values.size()))
        throw ConfigError("Tensor::from: " + shape_str(shp) + " does not hold " +
                          std::to_string(values.size()) + " values");
    Tensor t;
    t.shape = std::move(shp);
    t.data = std::move(values);
    return t;
}

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_shape(b))
        throw ConfigError(what + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace pqkd
