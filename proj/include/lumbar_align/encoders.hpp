// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/layers.hpp"
#include "lumbar_align/tensor.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lumbar_align {

enum class ImageStyle { conv, patch };

std::string to_string(ImageStyle style);
ImageStyle parse_image_style(const std::string& text);

struct ImageEncoderConfig {
    ImageStyle style = ImageStyle::conv;
    std::size_t input_resolution = 64;
    std::size_t input_channels = 3;
    std::size_t output_dim = 512;
    /// Conv channels, or the token width of the patch style.
    std::size_t width = 16;
    std::size_t depth = 3;
    std::size_t patch_size = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TextEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t max_tokens = 32;
    std::size_t embed_dim = 64;
    std::size_t output_dim = 512;
    /// Number of self-attention blocks before pooling; 0 means pure mean pool.
    std::size_t depth = 0;
    std::uint64_t seed = 0;
    /// Token id excluded from pooling (position 0 is always pooled).
    std::int64_t pad_id = 0;

    void validate() const;
};

/// Small image backbone: stride-2 conv stack or a patch transformer, each
/// followed by a global mean pool and a linear map to output_dim.
class ImageEncoder {
public:
    explicit ImageEncoder(ImageEncoderConfig config);

    /// (3 x R x R) -> (output_dim)
    Tensor encode(const Tensor& image) const;

    /// Stable order and identities across calls.
    ParameterList parameters() const;

    const ImageEncoderConfig& config() const { return config_; }

    /// Stops gradient tracking on every parameter.
    void freeze();
    void unfreeze();
    bool frozen() const { return frozen_; }

private:
    struct ConvBlock {
        Tensor weight;
        Tensor bias;
    };

    ImageEncoderConfig config_;
    std::vector<ConvBlock> conv_blocks_;
    Linear patch_embed_;
    Tensor patch_positions_;
    std::vector<AttentionBlock> attention_blocks_;
    Linear head_;
    bool frozen_ = false;
};

/// Embedding lookup, optional positional self-attention, mean pool over
/// non-pad positions, then a two-layer feed-forward to output_dim.
class TextEncoder {
public:
    explicit TextEncoder(TextEncoderConfig config);

    /// Token ids of length 1..max_tokens -> (output_dim)
    Tensor encode(std::span<const std::int64_t> token_ids) const;

    ParameterList parameters() const;
    const TextEncoderConfig& config() const { return config_; }

    void freeze();
    void unfreeze();
    bool frozen() const { return frozen_; }

private:
    TextEncoderConfig config_;
    Tensor embedding_;
    Tensor positions_;
    std::vector<AttentionBlock> blocks_;
    Linear hidden_;
    Linear output_;
    bool frozen_ = false;
};

} // namespace lumbar_align
