// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace lumbar_align {

/// Incompatible tensor shapes or dimensions passed to an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input data, manifests, configs, or files (CLI exit code 1).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values during training or evaluation (CLI exit code 2).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of the autodiff graph, e.g. a second backward pass.
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace lumbar_align
