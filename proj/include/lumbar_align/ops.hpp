// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace lumbar_align {

// Differentiable primitives. Shapes are checked up front and a ShapeError names
// the primitive together with the offending shapes. Every primitive records a
// backward rule when grad mode is on and any input requires grad.

/// (M x K) . (K x N) -> (M x N)
Tensor matmul(const Tensor& a, const Tensor& b);
/// (M x N) -> (N x M)
Tensor transpose(const Tensor& a);
/// Elementwise sum of equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise product of equal shapes.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Adds a length-N vector to every row of an (M x N) matrix.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor relu(const Tensor& a);
/// Max-subtracted softmax applied independently to each row of a matrix.
Tensor row_softmax(const Tensor& a);
/// Elementwise natural logarithm; non-positive inputs raise NumericError.
Tensor elementwise_log(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
/// Divides each row by max(||row||, 1e-12).
Tensor l2_normalize_rows(const Tensor& a);
/// Gathers rows of a (V x E) table: (T ids) -> (T x E).
Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids);
/// Cross-correlation of a (C x H x W) input with (O x C x k x k) weights and a
/// length-O bias, zero padding on all sides.
Tensor conv2d_small(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    std::size_t stride, std::size_t padding);
/// Column means of a (T x E) matrix -> (1 x E).
Tensor mean_pool_rows(const Tensor& a);
/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);
/// Stacks equal-length vectors (or 1 x E rows) into an (N x E) matrix.
Tensor stack_rows(std::span<const Tensor> rows);
/// Splits a (C x H x W) image into non-overlapping p x p patches ->
/// ((H/p)(W/p) x C p p), one flattened patch per row.
Tensor patchify(const Tensor& image, std::size_t patch);

} // namespace lumbar_align
