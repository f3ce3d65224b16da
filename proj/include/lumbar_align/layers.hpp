// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/rng.hpp"
#include "lumbar_align/tensor.hpp"

#include <string>
#include <vector>

namespace lumbar_align {

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], trainable.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// Appends `params` to `out` with `prefix` prepended to every name.
void append_parameters(ParameterList& out, const std::string& prefix, const ParameterList& params);

/// Flat copy of every parameter value, in list order.
std::vector<std::vector<double>> snapshot_values(const ParameterList& params);

void set_trainable(const ParameterList& params, bool trainable);

/// y = x W + b with W stored as (in x out).
class Linear {
public:
    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng);

    /// (N x in) -> (N x out)
    Tensor operator()(const Tensor& x) const;
    ParameterList parameters() const;

    std::size_t in_dim() const { return weight_.dim(0); }
    std::size_t out_dim() const { return weight_.dim(1); }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    Tensor weight_;
    Tensor bias_;
};

/// Residual single-head self-attention followed by a residual two-layer
/// feed-forward (hidden width 2x). No normalisation layers.
class AttentionBlock {
public:
    AttentionBlock(std::size_t width, Rng& rng);

    /// (T x width) -> (T x width)
    Tensor operator()(const Tensor& x) const;
    ParameterList parameters() const;

private:
    std::size_t width_;
    Linear query_;
    Linear key_;
    Linear value_;
    Linear output_;
    Linear ff_in_;
    Linear ff_out_;
};

} // namespace lumbar_align
