// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/projection.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/ops.hpp"

namespace lumbar_align {

std::string to_string(HeadMode mode) {
    switch (mode) {
    case HeadMode::none:
        return "none";
    case HeadMode::linear:
        return "linear";
    case HeadMode::nonlinear:
        return "nonlinear";
    }
    return "none";
}

HeadMode parse_head_mode(const std::string& text) {
    if (text == "none") {
        return HeadMode::none;
    }
    if (text == "linear") {
        return HeadMode::linear;
    }
    if (text == "nonlinear") {
        return HeadMode::nonlinear;
    }
    throw InputError("unknown projection mode '" + text + "' (expected none, linear or nonlinear)");
}

void ProjectionConfig::validate() const {
    if (in_dim == 0) {
        throw InputError("projection: in_dim must be positive");
    }
    if (mode != HeadMode::none && out_dim == 0) {
        throw InputError("projection: out_dim must be positive");
    }
    if (mode == HeadMode::nonlinear && hidden_dim && *hidden_dim == 0) {
        throw InputError("projection: hidden_dim must be positive");
    }
}

std::size_t ProjectionConfig::effective_dim() const { return mode == HeadMode::none ? in_dim : out_dim; }

ProjectionHead::ProjectionHead(ProjectionConfig config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    if (config_.mode == HeadMode::linear) {
        first_ = Linear(config_.in_dim, config_.out_dim, rng);
    } else if (config_.mode == HeadMode::nonlinear) {
        const std::size_t hidden = config_.hidden_dim.value_or(config_.in_dim);
        first_ = Linear(config_.in_dim, hidden, rng);
        second_ = Linear(hidden, config_.out_dim, rng);
    }
}

Tensor ProjectionHead::project(const Tensor& z) const {
    if (z.numel() != config_.in_dim || z.rank() != 1) {
        throw ShapeError("project: expected a vector of length " + std::to_string(config_.in_dim) +
                         ", got shape " + shape_to_string(z.shape()));
    }
    const Tensor out = project_batch(reshape(z, {1, config_.in_dim}));
    return reshape(out, {config_.effective_dim()});
}

Tensor ProjectionHead::project_batch(const Tensor& batch) const {
    if (batch.rank() != 2 || batch.dim(1) != config_.in_dim || batch.dim(0) == 0) {
        throw ShapeError("project_batch: expected (N x " + std::to_string(config_.in_dim) +
                         ") with N >= 1, got shape " + shape_to_string(batch.shape()));
    }
    switch (config_.mode) {
    case HeadMode::none:
        return l2_normalize_rows(batch);
    case HeadMode::linear:
        return l2_normalize_rows(first_(batch));
    case HeadMode::nonlinear:
        return l2_normalize_rows(second_(relu(first_(batch))));
    }
    return batch;
}

ParameterList ProjectionHead::parameters() const {
    ParameterList out;
    if (config_.mode == HeadMode::linear) {
        append_parameters(out, "fc.", first_.parameters());
    } else if (config_.mode == HeadMode::nonlinear) {
        append_parameters(out, "fc1.", first_.parameters());
        append_parameters(out, "fc2.", second_.parameters());
    }
    return out;
}

} // namespace lumbar_align
