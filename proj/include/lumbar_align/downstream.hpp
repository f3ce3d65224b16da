// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/encoders.hpp"
#include "lumbar_align/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lumbar_align {

/// Rows are encoder outputs of the given images. The encoder must be frozen;
/// its parameters are checked to be bitwise unchanged afterwards.
Tensor extract_embeddings(const ImageEncoder& encoder, std::span<const Tensor> images);

/// logits = x W^T + b with W of shape (2 x d).
struct LinearProbe {
    Tensor weight;
    Tensor bias;

    /// (N x d) -> (N x 2)
    Tensor logits(const Tensor& embeddings) const;
    /// Argmax per row; ties go to class 0 (LBP).
    std::vector<std::size_t> predict(const Tensor& embeddings) const;
};

struct ProbeConfig {
    std::size_t epochs = 50;
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Seeded uniform initialisation in +-1/sqrt(d).
LinearProbe init_probe(std::size_t dim, std::uint64_t seed);

/// Softmax cross-entropy on class indices (0 = LBP, 1 = No Finding) with
/// AdamW. Needs at least two rows covering both classes.
LinearProbe train_probe(const Tensor& embeddings, std::span<const std::size_t> classes, const ProbeConfig& config);

/// LBP is the positive class throughout.
struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
};

struct MetricsReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    Confusion confusion;
};

/// Ratios with 0 for any zero denominator.
MetricsReport metrics_from_confusion(const Confusion& confusion);
MetricsReport metrics_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> actual);
MetricsReport evaluate(const LinearProbe& probe, const Tensor& embeddings, std::span<const std::size_t> classes);

nlohmann::json to_json(const MetricsReport& report);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);

} // namespace lumbar_align
