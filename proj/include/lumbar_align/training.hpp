// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/contrastive_loss.hpp"
#include "lumbar_align/data.hpp"
#include "lumbar_align/encoders.hpp"
#include "lumbar_align/errors.hpp"
#include "lumbar_align/image.hpp"
#include "lumbar_align/layers.hpp"
#include "lumbar_align/projection.hpp"
#include "lumbar_align/text.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lumbar_align {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 128;
    double learning_rate = 2e-5;
    double weight_decay = 1e-4;
    double warmup_fraction = 0.10;
    double alpha = 0.5;
    double tau = 0.07;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Linear ramp from 0 at step 0 to learning_rate at ceil(warmup_fraction *
/// total_steps), constant afterwards.
double warmup_lr(std::size_t step, std::size_t total_steps, const TrainConfig& config);

/// Number of optimiser steps per epoch: full batches plus a final partial
/// batch when it holds at least two pairs.
std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size);

struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    /// Zeroed accumulators shaped like `params`.
    static OptimizerState for_parameters(const ParameterList& params);
};

/// One bias-corrected AdamW update with decoupled weight decay:
/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
/// Throws NumericError naming the first parameter with a non-finite gradient.
void adamw_step(const ParameterList& params, std::span<const std::vector<double>> grads, OptimizerState& state,
                double lr, double weight_decay);

/// Gradients currently accumulated on `params` (zeros where none exist).
std::vector<std::vector<double>> collect_gradients(const ParameterList& params);
void zero_gradients(const ParameterList& params);

struct ModelConfig {
    ImageEncoderConfig image;
    TextEncoderConfig text;
    ProjectionConfig image_head;
    ProjectionConfig text_head;

    /// Checks component configs and that both heads map into the same space.
    void validate() const;
};

/// Both encoders, both projection heads, the vocabulary and the image
/// normalisation statistics.
class Model {
public:
    Model(ModelConfig config, Vocabulary vocab, NormStats stats);

    const ModelConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    const NormStats& norm_stats() const { return stats_; }

    ImageEncoder& image_encoder() { return image_encoder_; }
    const ImageEncoder& image_encoder() const { return image_encoder_; }
    TextEncoder& text_encoder() { return text_encoder_; }
    const TextEncoder& text_encoder() const { return text_encoder_; }
    const ProjectionHead& image_head() const { return image_head_; }
    const ProjectionHead& text_head() const { return text_head_; }

    /// Prefixed with image_encoder., text_encoder., image_head., text_head.
    ParameterList parameters() const;

    /// (N images) -> (N x d) unit rows.
    Tensor embed_images(std::span<const Tensor> images) const;
    /// (N token sequences) -> (N x d) unit rows.
    Tensor embed_texts(std::span<const std::vector<std::int64_t>> tokens) const;

    /// Deep copy with independent parameter storage.
    Model clone() const;

private:
    ModelConfig config_;
    Vocabulary vocab_;
    NormStats stats_;
    ImageEncoder image_encoder_;
    TextEncoder text_encoder_;
    ProjectionHead image_head_;
    ProjectionHead text_head_;
};

/// Overwrites parameter values in order; shapes must match.
void load_values(const ParameterList& params, const std::vector<std::vector<double>>& values);

/// Samples turned into model inputs: preprocessed images and token ids.
struct EncodedDataset {
    std::vector<std::string> ids;
    std::vector<Tensor> images;
    std::vector<std::vector<std::int64_t>> captions;
    std::vector<std::vector<std::vector<std::int64_t>>> aug_captions;
    std::vector<LabelVector> labels;

    std::size_t size() const { return ids.size(); }
};

/// Loads every image once per distinct image_ref (upsampled duplicates share
/// storage) and standardises it with `stats`.
EncodedDataset encode_dataset(const std::vector<Sample>& samples, const std::filesystem::path& base_dir,
                              std::size_t resolution, const NormStats& stats, const Vocabulary& vocab,
                              std::size_t max_tokens);

/// Mean/std of the unstandardised training images.
NormStats train_norm_stats(const std::vector<Sample>& train, const std::filesystem::path& base_dir,
                           std::size_t resolution);

/// Vocabulary over every caption and augmented caption of `samples`.
Vocabulary build_vocabulary(const std::vector<Sample>& samples);

struct BatchLogRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    soft_clip::LossBreakdown loss;
    double lr = 0.0;
};

struct EpochLogRow {
    std::size_t epoch = 0;
    double train_total = 0.0;
    /// NaN when there is no usable validation split.
    double val_total = 0.0;
};

struct TrainResult {
    std::vector<BatchLogRow> batches;
    std::vector<EpochLogRow> epochs;
    /// Parameter values at the epoch with the lowest validation loss
    /// (training loss when no validation split); initial values if epochs = 0.
    std::vector<std::vector<double>> best_values;
    std::size_t best_epoch = 0;
    std::size_t total_steps = 0;
};

/// Raised when a batch loss is not finite; carries the offending pair ids.
class NonFiniteLossError : public NumericError {
public:
    NonFiniteLossError(const std::string& what, std::vector<std::string> batch_ids)
        : NumericError(what), batch_ids_(std::move(batch_ids)) {}
    const std::vector<std::string>& batch_ids() const { return batch_ids_; }

private:
    std::vector<std::string> batch_ids_;
};

using EpochCallback = std::function<void(const EpochLogRow&)>;

/// Contrastive pretraining in place on `model`; leaves the final-epoch
/// parameters on the model.
TrainResult pretrain(Model& model, const EncodedDataset& train, const EncodedDataset& val,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean total loss over batches of `data` without gradient tracking. The
/// augmented caption of pair i is slot i mod (available slots).
double evaluation_loss(const Model& model, const EncodedDataset& data, const TrainConfig& config);

void write_batch_log(const std::filesystem::path& path, const std::vector<BatchLogRow>& rows);
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLogRow>& rows);

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Magic line, little-endian uint64 header length, JSON header, then the
/// little-endian float64 parameter blob. `extra` is stored under "experiment".
void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {});

struct LoadedCheckpoint {
    Model model;
    nlohmann::json experiment;
};

/// Throws InputError on a bad magic line, version mismatch, truncated blob or
/// parameter directory that does not match the rebuilt model.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

} // namespace lumbar_align
