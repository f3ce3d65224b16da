// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/encoders.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/ops.hpp"

#include <numeric>

namespace lumbar_align {

std::string to_string(ImageStyle style) { return style == ImageStyle::conv ? "conv" : "patch"; }

ImageStyle parse_image_style(const std::string& text) {
    if (text == "conv") {
        return ImageStyle::conv;
    }
    if (text == "patch") {
        return ImageStyle::patch;
    }
    throw InputError("unknown image encoder style '" + text + "' (expected conv or patch)");
}

void ImageEncoderConfig::validate() const {
    if (input_resolution == 0 || input_channels == 0 || output_dim == 0 || width == 0) {
        throw InputError("image encoder: resolution, channels, output_dim and width must be positive");
    }
    if (style == ImageStyle::patch) {
        if (patch_size == 0 || input_resolution % patch_size != 0) {
            throw InputError("image encoder: resolution " + std::to_string(input_resolution) +
                             " is not divisible by patch size " + std::to_string(patch_size));
        }
    }
}

void TextEncoderConfig::validate() const {
    if (vocab_size == 0 || max_tokens == 0 || embed_dim == 0 || output_dim == 0) {
        throw InputError("text encoder: vocab_size, max_tokens, embed_dim and output_dim must be positive");
    }
    if (pad_id < 0 || static_cast<std::size_t>(pad_id) >= vocab_size) {
        throw InputError("text encoder: pad id outside the vocabulary");
    }
}

ImageEncoder::ImageEncoder(ImageEncoderConfig config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t c = config_.input_channels;
    if (config_.style == ImageStyle::conv) {
        std::size_t in_channels = c;
        for (std::size_t b = 0; b < config_.depth; ++b) {
            const std::size_t fan_in = in_channels * 9;
            ConvBlock block{init_uniform({config_.width, in_channels, 3, 3}, fan_in, rng),
                            init_uniform({config_.width}, fan_in, rng)};
            conv_blocks_.push_back(std::move(block));
            in_channels = config_.width;
        }
        head_ = Linear(in_channels, config_.output_dim, rng);
    } else {
        const std::size_t p = config_.patch_size;
        const std::size_t grid = config_.input_resolution / p;
        patch_embed_ = Linear(c * p * p, config_.width, rng);
        patch_positions_ = init_uniform({grid * grid, config_.width}, config_.width, rng);
        for (std::size_t b = 0; b < config_.depth; ++b) {
            attention_blocks_.emplace_back(config_.width, rng);
        }
        head_ = Linear(config_.width, config_.output_dim, rng);
    }
}

Tensor ImageEncoder::encode(const Tensor& image) const {
    const std::size_t r = config_.input_resolution;
    if (image.shape() != Shape{config_.input_channels, r, r}) {
        throw ShapeError("encode_image: expected shape " +
                         shape_to_string({config_.input_channels, r, r}) + ", got " +
                         shape_to_string(image.shape()));
    }
    Tensor pooled;
    if (config_.style == ImageStyle::conv) {
        Tensor x = image;
        for (const auto& block : conv_blocks_) {
            x = relu(conv2d_small(x, block.weight, block.bias, 2, 1));
        }
        const std::size_t channels = x.dim(0);
        const std::size_t positions = x.numel() / channels;
        pooled = mean_pool_rows(transpose(reshape(x, {channels, positions})));
    } else {
        Tensor tokens = add(patch_embed_(patchify(image, config_.patch_size)), patch_positions_);
        for (const auto& block : attention_blocks_) {
            tokens = block(tokens);
        }
        pooled = mean_pool_rows(tokens);
    }
    return reshape(head_(pooled), {config_.output_dim});
}

ParameterList ImageEncoder::parameters() const {
    ParameterList out;
    for (std::size_t b = 0; b < conv_blocks_.size(); ++b) {
        const std::string prefix = "conv" + std::to_string(b) + ".";
        out.push_back({prefix + "weight", conv_blocks_[b].weight});
        out.push_back({prefix + "bias", conv_blocks_[b].bias});
    }
    if (config_.style == ImageStyle::patch) {
        append_parameters(out, "patch_embed.", patch_embed_.parameters());
        out.push_back({"patch_positions", patch_positions_});
        for (std::size_t b = 0; b < attention_blocks_.size(); ++b) {
            append_parameters(out, "block" + std::to_string(b) + ".", attention_blocks_[b].parameters());
        }
    }
    append_parameters(out, "head.", head_.parameters());
    return out;
}

void ImageEncoder::freeze() {
    set_trainable(parameters(), false);
    frozen_ = true;
}

void ImageEncoder::unfreeze() {
    set_trainable(parameters(), true);
    frozen_ = false;
}

TextEncoder::TextEncoder(TextEncoderConfig config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const std::size_t e = config_.embed_dim;
    embedding_ = init_uniform({config_.vocab_size, e}, e, rng);
    if (config_.depth > 0) {
        positions_ = init_uniform({config_.max_tokens, e}, e, rng);
        for (std::size_t b = 0; b < config_.depth; ++b) {
            blocks_.emplace_back(e, rng);
        }
    }
    hidden_ = Linear(e, e, rng);
    output_ = Linear(e, config_.output_dim, rng);
}

Tensor TextEncoder::encode(std::span<const std::int64_t> token_ids) const {
    if (token_ids.empty() || token_ids.size() > config_.max_tokens) {
        throw ShapeError("encode_text: expected 1.." + std::to_string(config_.max_tokens) +
                         " token ids, got " + std::to_string(token_ids.size()));
    }
    std::vector<std::int64_t> kept;
    std::vector<std::int64_t> kept_positions;
    for (std::size_t t = 0; t < token_ids.size(); ++t) {
        const std::int64_t id = token_ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw ShapeError("encode_text: token id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(config_.vocab_size));
        }
        if (t == 0 || id != config_.pad_id) {
            kept.push_back(id);
            kept_positions.push_back(static_cast<std::int64_t>(t));
        }
    }
    Tensor x = embedding_lookup(embedding_, kept);
    if (!blocks_.empty()) {
        x = add(x, embedding_lookup(positions_, kept_positions));
        for (const auto& block : blocks_) {
            x = block(x);
        }
    }
    const Tensor pooled = mean_pool_rows(x);
    return reshape(output_(relu(hidden_(pooled))), {config_.output_dim});
}

ParameterList TextEncoder::parameters() const {
    ParameterList out{{"embedding", embedding_}};
    if (!blocks_.empty()) {
        out.push_back({"positions", positions_});
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            append_parameters(out, "block" + std::to_string(b) + ".", blocks_[b].parameters());
        }
    }
    append_parameters(out, "hidden.", hidden_.parameters());
    append_parameters(out, "output.", output_.parameters());
    return out;
}

void TextEncoder::freeze() {
    set_trainable(parameters(), false);
    frozen_ = true;
}

void TextEncoder::unfreeze() {
    set_trainable(parameters(), true);
    frozen_ = false;
}

} // namespace lumbar_align
