// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/layers.hpp"
#include "lumbar_align/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace lumbar_align {

enum class HeadMode { none, linear, nonlinear };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

struct ProjectionConfig {
    HeadMode mode = HeadMode::linear;
    std::size_t in_dim = 512;
    /// Shared latent dimension d; ignored when mode is none.
    std::size_t out_dim = 256;
    /// Nonlinear only; defaults to in_dim when unset.
    std::optional<std::size_t> hidden_dim;
    std::uint64_t seed = 0;

    void validate() const;
    /// in_dim for mode none, out_dim otherwise.
    std::size_t effective_dim() const;
};

/// Maps encoder embeddings into the shared latent space and L2-normalises
/// them. Mode none skips the learned map but still normalises, so dot
/// products of outputs remain cosine similarities.
class ProjectionHead {
public:
    explicit ProjectionHead(ProjectionConfig config);

    /// (in_dim) -> (effective_dim)
    Tensor project(const Tensor& z) const;
    /// (N x in_dim) -> (N x effective_dim); row i equals project(row i).
    Tensor project_batch(const Tensor& batch) const;

    ParameterList parameters() const;
    const ProjectionConfig& config() const { return config_; }

private:
    ProjectionConfig config_;
    Linear first_;
    Linear second_;
};

} // namespace lumbar_align
