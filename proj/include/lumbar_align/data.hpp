// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/contrastive_loss.hpp"
#include "lumbar_align/text.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lumbar_align {

/// Number of augmented captions per pair, so every bundle holds five sentences.
inline constexpr std::size_t kAugmentedCaptions = 4;

/// Class index used for stratification and the downstream probe:
/// 0 = LBP (y_LBP = 1), 1 = No Finding otherwise.
inline constexpr std::size_t kClassLbp = 0;
inline constexpr std::size_t kClassNoFinding = 1;
inline constexpr std::size_t kNumClasses = 2;

const char* class_name(std::size_t cls);

struct Sample {
    std::string id;
    std::string image_ref;
    std::string caption;
    std::vector<std::string> aug_captions;
    LabelVector label{0, 0};

    std::size_t class_index() const { return label[0] == 1 ? kClassLbp : kClassNoFinding; }
};

/// Throws InputError unless the label is binary with at least one positive.
void validate_label(const LabelVector& label);

/// Reads a JSON-lines manifest. Blank lines are skipped; any malformed line
/// raises InputError prefixed with "<path>:<line>:".
std::vector<Sample> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples);

std::array<std::size_t, kNumClasses> class_counts(const std::vector<Sample>& samples);

struct SplitSpec {
    double train_frac = 0.70;
    double val_frac = 0.15;
    double test_frac = 0.15;
    std::uint64_t seed = 0;
    bool stratify = true;

    void validate() const;
};

struct DatasetSplits {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
};

/// Seeded shuffle within each class; a class of size n contributes
/// round(n * train_frac) to train, round(n * val_frac) to val, the rest to
/// test. Each split keeps the input order.
DatasetSplits stratified_split(const std::vector<Sample>& samples, const SplitSpec& spec);

/// Duplicates whole samples of every smaller class (sampled with
/// replacement) until all class counts equal the largest. Duplicates are
/// appended after the originals.
std::vector<Sample> upsample_minority(const std::vector<Sample>& train, std::uint64_t seed);

/// Tops every sample up to kAugmentedCaptions augmented captions using EDA on
/// the original caption. Seeds depend on (seed, id, slot), not on position.
void fill_augmented_captions(std::vector<Sample>& samples, const SynonymTable& synonyms,
                             const EdaConfig& eda, std::uint64_t seed);

struct PrepareOptions {
    SplitSpec split;
    bool upsample = true;
    EdaConfig eda;
    std::uint64_t seed = 0;
};

/// Split, then fill captions of train/val, then upsample train. The test
/// split is left as loaded.
DatasetSplits prepare_splits(const std::vector<Sample>& samples, const PrepareOptions& options,
                             const SynonymTable& synonyms);

} // namespace lumbar_align
