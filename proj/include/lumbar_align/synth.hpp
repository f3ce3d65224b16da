// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/data.hpp"
#include "lumbar_align/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lumbar_align {

/// Parameters of one procedurally rendered axial-like grayscale image.
///
/// The picture is a bright vertebral column crossed by five darker disc
/// bands. LBP images narrow the disc at `level` and add a bulge protruding
/// from the column on `side`.
struct SyntheticImageSpec {
    std::size_t cls = kClassNoFinding;
    std::uint64_t seed = 0;
    std::size_t resolution = 64;
    /// Disc level index 0..4 (L1-L2 .. L5-S1).
    std::size_t level = 0;
    /// 0 = left, 1 = right.
    std::size_t side = 0;
};

/// Text form used after the `synthetic:` prefix, e.g.
/// "class=lbp,seed=17,res=64,level=3,side=left".
std::string format_synthetic_spec(const SyntheticImageSpec& spec);
SyntheticImageSpec parse_synthetic_spec(const std::string& text);

/// Single channel, values in [0, 1] (max_value = 1).
RawImage render_synthetic(const SyntheticImageSpec& spec);

/// Slot vocabulary for the caption templates.
struct CaptionLexicon {
    std::vector<std::string> levels{"L1-L2", "L2-L3", "L3-L4", "L4-L5", "L5-S1"};
    std::vector<std::string> severities{"mild", "moderate", "severe"};
    std::vector<std::string> sides{"left", "right"};
};

struct SynthConfig {
    std::size_t n_pairs = 512;
    /// Fraction of LBP pairs; must lie strictly between 0 and 1.
    double class_ratio = 0.85;
    std::size_t resolution = 64;
    std::uint64_t seed = 7;
    CaptionLexicon vocab_spec;
    /// Write PGM files under `images/` instead of inline synthetic refs.
    bool write_image_files = false;

    void validate() const;
};

/// Generates pairs: round(n_pairs * class_ratio) LBP samples in shuffled
/// order, class-template captions and four same-class paraphrases each.
std::vector<Sample> synth_samples(const SynthConfig& config);

/// Writes `manifest.jsonl` (and images when requested) into `out_dir` and
/// returns the manifest path.
std::filesystem::path synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

} // namespace lumbar_align
