// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/tensor.hpp"

#include <array>
#include <span>
#include <vector>

namespace lumbar_align {

/// Binary label vector (LBP, No Finding).
using LabelVector = std::array<int, 2>;

/// Soft-target bidirectional contrastive objective.
///
/// Targets come from label agreement: L = Y Y^T, softened row-wise as
/// softmax(L / tau). Predictions are softmax(S / tau) over the cosine
/// similarity matrix S; the same tau is used for both.
namespace soft_clip {

/// S = Z_img Z_txt^T for row-normalised (N x d) inputs.
Tensor similarity_matrix(const Tensor& image_emb, const Tensor& text_emb);

/// L_ij = y_i . y_j, an (N x N) constant tensor. Entries must be 0 or 1.
Tensor label_similarity(std::span<const LabelVector> labels);

/// Row-wise softmax(L / tau), an (N x N) constant tensor.
Tensor soft_targets(const Tensor& label_sim, double tau);

/// -(1/N) sum_ij T_ij log softmax_j(S_i. / tau)
Tensor i2t_loss(const Tensor& sim, const Tensor& targets, double tau);

/// Text-to-image direction: i2t_loss on S^T with targets built from L^T.
Tensor t2i_loss(const Tensor& sim, const Tensor& targets_transposed, double tau);

/// Mean row entropy of a row-stochastic matrix; the attainable lower bound
/// of i2t_loss for fixed targets.
double mean_row_entropy(const Tensor& targets);

struct LossTerms {
    Tensor i2t;
    Tensor t2i;
    Tensor aug_i2t;
    Tensor aug_t2i;
    Tensor total;
    double alpha = 0.5;
};

/// Plain-number view of the four components and the weighted total.
struct LossBreakdown {
    double l_i2t = 0.0;
    double l_t2i = 0.0;
    double l_aug_i2t = 0.0;
    double l_aug_t2i = 0.0;
    double alpha = 0.5;
    double total = 0.0;

    /// alpha (l_i2t + l_t2i) + (1 - alpha)(l_aug_i2t + l_aug_t2i)
    static LossBreakdown from_components(double l_i2t, double l_t2i, double l_aug_i2t,
                                         double l_aug_t2i, double alpha);
};

LossBreakdown breakdown(const LossTerms& terms);

/// Full objective over one batch. All embedding matrices are (N x d) and
/// row-normalised; the augmented-text similarity matrix shares the soft
/// targets of the original captions.
LossTerms total_loss(const Tensor& image_emb, const Tensor& text_emb, const Tensor& aug_text_emb,
                     std::span<const LabelVector> labels, double alpha, double tau);

} // namespace soft_clip

} // namespace lumbar_align
