// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/tensor.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lumbar_align {

/// Decoded pixel grid, channel-major (C x H x W). Values lie in
/// [0, max_value]; max_value is 255 for 8-bit sources and 1 for synthetic ones.
struct RawImage {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    double max_value = 255.0;
    std::vector<double> pixels;

    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
};

/// Per-channel standardisation statistics of [0, 1]-scaled images.
struct NormStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};

    static NormStats identity() { return {}; }
    bool operator==(const NormStats&) const = default;
};

RawImage load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const RawImage& image);
RawImage load_png(const std::filesystem::path& path);

/// Resolves a manifest image reference: `synthetic:<params>` renders inline,
/// anything else is a PGM/PNG path relative to `base_dir`.
RawImage load_image(const std::string& image_ref, const std::filesystem::path& base_dir);

/// Zero-pads symmetrically to a square, resizes bilinearly (half-pixel
/// centres) to resolution x resolution, scales to [0, 1] and replicates a
/// single channel to three. Output is (3 x R x R), not yet standardised.
Tensor resize_to_square(const RawImage& raw, std::size_t resolution);

/// resize_to_square followed by per-channel (x - mean) / std.
Tensor preprocess_image(const RawImage& raw, std::size_t resolution,
                        const NormStats& stats = NormStats::identity());

/// Standardises a (3 x R x R) tensor in place of a copy.
Tensor standardize(const Tensor& image, const NormStats& stats);

/// Per-channel mean/std over a set of (3 x R x R) unstandardised images.
NormStats compute_norm_stats(std::span<const Tensor> images);

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

} // namespace lumbar_align
