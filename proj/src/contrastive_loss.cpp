// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/contrastive_loss.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lumbar_align::soft_clip {

namespace {

void require_tau(double tau) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("soft_clip: temperature must be positive, got " + std::to_string(tau));
    }
}

void require_square(const char* op, const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
        throw ShapeError(std::string(op) + ": expected a square matrix, got " + shape_to_string(a.shape()));
    }
}

} // namespace

Tensor similarity_matrix(const Tensor& image_emb, const Tensor& text_emb) {
    if (image_emb.rank() != 2 || text_emb.rank() != 2 || image_emb.shape() != text_emb.shape()) {
        throw ShapeError("similarity_matrix: incompatible shapes " + shape_to_string(image_emb.shape()) +
                         " and " + shape_to_string(text_emb.shape()));
    }
    return matmul(image_emb, transpose(text_emb));
}

Tensor label_similarity(std::span<const LabelVector> labels) {
    const std::size_t n = labels.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (int v : labels[i]) {
            if (v != 0 && v != 1) {
                throw std::invalid_argument("label_similarity: label row " + std::to_string(i) +
                                            " has non-binary entry " + std::to_string(v));
            }
        }
    }
    std::vector<double> out(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = labels[i][0] * labels[j][0] + labels[i][1] * labels[j][1];
        }
    }
    return Tensor({n, n}, std::move(out));
}

Tensor soft_targets(const Tensor& label_sim, double tau) {
    require_tau(tau);
    require_square("soft_targets", label_sim);
    NoGradGuard constant;
    return row_softmax(scale(label_sim, 1.0 / tau));
}

Tensor i2t_loss(const Tensor& sim, const Tensor& targets, double tau) {
    require_tau(tau);
    require_square("i2t_loss", sim);
    if (targets.shape() != sim.shape()) {
        throw ShapeError("i2t_loss: incompatible shapes " + shape_to_string(sim.shape()) + " and " +
                         shape_to_string(targets.shape()));
    }
    const double n = static_cast<double>(sim.dim(0));
    const Tensor log_probs = elementwise_log(row_softmax(scale(sim, 1.0 / tau)));
    return scale(sum_all(mul(targets, log_probs)), -1.0 / n);
}

Tensor t2i_loss(const Tensor& sim, const Tensor& targets_transposed, double tau) {
    require_square("t2i_loss", sim);
    return i2t_loss(transpose(sim), targets_transposed, tau);
}

double mean_row_entropy(const Tensor& targets) {
    require_square("mean_row_entropy", targets);
    const std::size_t n = targets.dim(0);
    double total = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        const double p = targets[i];
        if (p > 0.0) {
            total -= p * std::log(p);
        }
    }
    return total / static_cast<double>(n);
}

LossBreakdown LossBreakdown::from_components(double l_i2t, double l_t2i, double l_aug_i2t,
                                             double l_aug_t2i, double alpha) {
    LossBreakdown b{l_i2t, l_t2i, l_aug_i2t, l_aug_t2i, alpha, 0.0};
    b.total = alpha * (l_i2t + l_t2i) + (1.0 - alpha) * (l_aug_i2t + l_aug_t2i);
    return b;
}

LossBreakdown breakdown(const LossTerms& terms) {
    return {terms.i2t.item(), terms.t2i.item(), terms.aug_i2t.item(), terms.aug_t2i.item(),
            terms.alpha,      terms.total.item()};
}

LossTerms total_loss(const Tensor& image_emb, const Tensor& text_emb, const Tensor& aug_text_emb,
                     std::span<const LabelVector> labels, double alpha, double tau) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("total_loss: alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (image_emb.rank() != 2 || labels.size() != image_emb.dim(0)) {
        throw ShapeError("total_loss: " + std::to_string(labels.size()) + " labels for embeddings of shape " +
                         shape_to_string(image_emb.shape()));
    }
    const Tensor sim = similarity_matrix(image_emb, text_emb);
    const Tensor sim_aug = similarity_matrix(image_emb, aug_text_emb);
    const Tensor label_sim = label_similarity(labels);
    const Tensor targets = soft_targets(label_sim, tau);
    const Tensor targets_t = soft_targets(transpose(label_sim), tau);

    LossTerms terms;
    terms.alpha = alpha;
    terms.i2t = i2t_loss(sim, targets, tau);
    terms.t2i = t2i_loss(sim, targets_t, tau);
    terms.aug_i2t = i2t_loss(sim_aug, targets, tau);
    terms.aug_t2i = t2i_loss(sim_aug, targets_t, tau);
    terms.total = add(scale(add(terms.i2t, terms.t2i), alpha),
                      scale(add(terms.aug_i2t, terms.aug_t2i), 1.0 - alpha));
    return terms;
}

} // namespace lumbar_align::soft_clip
