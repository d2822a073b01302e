// Copyright (c) 2026 PQKD Project Contributors
// SPDX-License-Identifier: Apache-2.0
#ifndef PQKD_COMMON_HPP
#define PQKD_COMMON_HPP

#include <stdexcept>
#include <string>

namespace pqkd {

// Error taxonomy. Configuration errors are caller mistakes in static setup
// (shapes, ranges); usage errors are API misuse at runtime; data/format
// errors come from external inputs; capability errors mark guarded
// operations requested outside their supported regime.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CapabilityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace pqkd

#endif
