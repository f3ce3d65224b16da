// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/data.hpp"
#include "lumbar_align/downstream.hpp"
#include "lumbar_align/synth.hpp"
#include "lumbar_align/training.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lumbar_align {

/// Everything a run needs, addressable by dotted keys (see `config_keys()`).
/// Defaults are the desk-scale settings.
struct ExperimentConfig {
    std::string manifest;
    std::uint64_t seed = 7;

    std::size_t resolution = 64;
    SplitSpec split;
    bool upsample = true;
    std::string synonyms;
    EdaConfig eda;

    ImageEncoderConfig image;
    TextEncoderConfig text;
    HeadMode head_mode = HeadMode::linear;
    std::size_t head_dim = 256;
    std::size_t head_hidden_dim = 0;

    TrainConfig train;
    ProbeConfig probe;

    std::vector<ImageStyle> ablate_styles{ImageStyle::conv, ImageStyle::patch};
    std::vector<HeadMode> ablate_modes{HeadMode::none, HeadMode::linear, HeadMode::nonlinear};
    std::vector<std::size_t> ablate_dims{256, 512, 1024};
    std::vector<std::uint64_t> ablate_seeds{7};

    ExperimentConfig();

    /// Throws InputError for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;

    /// `key = value` lines; '#' starts a comment; blank lines ignored.
    void apply_text(const std::string& text, const std::string& origin = "<config>");
    void apply_file(const std::filesystem::path& path);

    /// Every key with its resolved value, one `key = value` line each.
    std::string to_text() const;

    /// Model configuration for a vocabulary of the given size.
    ModelConfig model_config(std::size_t vocab_size) const;
    PrepareOptions prepare_options() const;
    /// Component configs with seeds derived from the global seed.
    TrainConfig train_config() const;
    ProbeConfig probe_config() const;
    SynonymTable synonym_table() const;

    void validate() const;
};

/// Ordered list of accepted configuration keys.
const std::vector<std::string>& config_keys();

/// Seed from LUMBAR_ALIGN_SEED when set and valid.
std::optional<std::uint64_t> env_seed();

struct PreparedData {
    DatasetSplits splits;
    std::filesystem::path base_dir;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Per-class counts for each split, before and after upsampling.
std::string split_summary(const std::vector<Sample>& all, const ExperimentConfig& config);

struct SynthOutcome {
    std::filesystem::path manifest;
    std::array<std::size_t, kNumClasses> counts{};
};

SynthOutcome run_synth_data(const SynthConfig& synth, const std::filesystem::path& out_dir, std::ostream& log);

struct PretrainOutcome {
    std::filesystem::path checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path loss_log;
    TrainResult result;
};

/// Writes checkpoint.bin (best validation epoch), last.bin, loss_log.csv,
/// epochs.csv, norm_stats.json and config.cfg into `out_dir`.
PretrainOutcome run_pretrain(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

struct ProbeOutcome {
    MetricsReport report;
    MetricsReport train_report;
};

/// Freezes the image encoder, extracts embeddings, trains the probe on the
/// (upsampled) train split and evaluates on `eval`.
ProbeOutcome probe_model(Model& model, const ExperimentConfig& config, const PreparedData& data,
                         const std::vector<Sample>& eval);

/// Probes the checkpoint on split `split` (val, test, or train) and writes
/// metrics.json, metrics.csv and config.cfg into `out_dir`.
ProbeOutcome run_probe(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                       const std::string& split, const std::filesystem::path& out_dir, std::ostream& log);

struct AblationCell {
    ImageStyle style = ImageStyle::conv;
    HeadMode mode = HeadMode::none;
    std::size_t dim = 0;
    std::uint64_t seed = 0;

    /// Stable directory name / resume key.
    std::string key() const;
    std::string head_dim_text() const;
};

std::vector<AblationCell> ablation_cells(const ExperimentConfig& config);

struct AblationRow {
    AblationCell cell;
    MetricsReport report;
    std::string status;
};

struct AblateOptions {
    bool resume = false;
    std::size_t jobs = 1;
};

/// Runs pretrain + test-split probe for every cell, writes grid.csv and the
/// plot-data files. Failed cells are recorded with their status.
std::vector<AblationRow> run_ablate(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                    const AblateOptions& options, std::ostream& log);

void write_grid_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_grid_csv(const std::filesystem::path& path);
void write_plot_data(const std::filesystem::path& out_dir, const std::vector<AblationRow>& rows);

/// Summarises a pretrain, probe or ablate output directory into report.md
/// (and plot-data CSVs where applicable); returns the report text.
std::string run_report(const std::filesystem::path& run_dir);

} // namespace lumbar_align
