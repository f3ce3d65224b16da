// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/downstream.hpp"

#include "lumbar_align/errors.hpp"
#include "lumbar_align/ops.hpp"
#include "lumbar_align/rng.hpp"
#include "lumbar_align/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace lumbar_align {

Tensor extract_embeddings(const ImageEncoder& encoder, std::span<const Tensor> images) {
    if (!encoder.frozen()) {
        throw GraphError("extract_embeddings: encoder must be frozen");
    }
    if (images.empty()) {
        throw InputError("extract_embeddings: no images");
    }
    const auto before = snapshot_values(encoder.parameters());
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    {
        NoGradGuard guard;
        for (const auto& img : images) {
            rows.push_back(encoder.encode(img));
        }
    }
    if (snapshot_values(encoder.parameters()) != before) {
        throw GraphError("extract_embeddings: encoder parameters changed");
    }
    return stack_rows(rows);
}

Tensor LinearProbe::logits(const Tensor& embeddings) const {
    return add_bias(matmul(embeddings, transpose(weight)), bias);
}

std::vector<std::size_t> LinearProbe::predict(const Tensor& embeddings) const {
    NoGradGuard guard;
    const Tensor out = logits(embeddings);
    std::vector<std::size_t> pred(out.dim(0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = out.at(i, 1) > out.at(i, 0) ? 1 : 0;
    }
    return pred;
}

void ProbeConfig::validate() const {
    if (batch_size == 0 || learning_rate < 0.0 || weight_decay < 0.0) {
        throw InputError("probe: batch_size must be positive and rates non-negative");
    }
}

LinearProbe init_probe(std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "probe-init"));
    LinearProbe probe;
    probe.weight = init_uniform({2, dim}, dim, rng);
    probe.bias = init_uniform({2}, dim, rng);
    return probe;
}

LinearProbe train_probe(const Tensor& embeddings, std::span<const std::size_t> classes, const ProbeConfig& config) {
    config.validate();
    if (embeddings.rank() != 2 || embeddings.dim(0) != classes.size()) {
        throw ShapeError("train_probe: embeddings must be (n x d) with one class per row");
    }
    const std::size_t n = classes.size();
    if (n < 2) {
        throw InputError("train_probe: need at least two samples");
    }
    std::array<std::size_t, 2> counts{};
    for (std::size_t c : classes) {
        if (c > 1) {
            throw InputError("train_probe: class index out of range");
        }
        ++counts[c];
    }
    if (counts[0] == 0 || counts[1] == 0) {
        throw InputError("train_probe: both classes must be present");
    }

    const std::size_t dim = embeddings.dim(1);
    LinearProbe probe = init_probe(dim, config.seed);
    const ParameterList params{{"weight", probe.weight}, {"bias", probe.bias}};
    OptimizerState state = OptimizerState::for_parameters(params);
    const Tensor features = embeddings.detach();
    const auto x = features.data();

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, {epoch, 0x9Bu}));
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t end = std::min(n, start + config.batch_size);
            const std::size_t m = end - start;
            std::vector<double> rows(m * dim);
            std::vector<double> one_hot(m * 2, 0.0);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t i = order[start + k];
                std::copy(x.begin() + static_cast<std::ptrdiff_t>(i * dim),
                          x.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim), rows.begin() + static_cast<std::ptrdiff_t>(k * dim));
                one_hot[k * 2 + classes[i]] = 1.0;
            }
            const Tensor batch({m, dim}, std::move(rows));
            const Tensor targets({m, 2}, std::move(one_hot));
            const Tensor log_probs = elementwise_log(row_softmax(probe.logits(batch)));
            const Tensor loss = scale(sum_all(mul(targets, log_probs)), -1.0 / static_cast<double>(m));
            backward(loss);
            adamw_step(params, collect_gradients(params), state, config.learning_rate, config.weight_decay);
            zero_gradients(params);
        }
    }
    return probe;
}

namespace {

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

} // namespace

MetricsReport metrics_from_confusion(const Confusion& c) {
    MetricsReport m;
    m.confusion = c;
    const auto tp = static_cast<double>(c.tp);
    const auto fp = static_cast<double>(c.fp);
    const auto fn = static_cast<double>(c.fn);
    const auto tn = static_cast<double>(c.tn);
    m.accuracy = ratio(tp + tn, tp + fp + fn + tn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = harmonic(m.precision, m.recall);
    // No Finding as the positive class.
    const double neg_precision = ratio(tn, tn + fn);
    const double neg_recall = ratio(tn, tn + fp);
    m.macro_precision = 0.5 * (m.precision + neg_precision);
    m.macro_recall = 0.5 * (m.recall + neg_recall);
    m.macro_f1 = 0.5 * (m.f1 + harmonic(neg_precision, neg_recall));
    return m;
}

MetricsReport metrics_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> actual) {
    if (predicted.size() != actual.size()) {
        throw ShapeError("metrics: prediction and label counts differ");
    }
    Confusion c;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool pred_pos = predicted[i] == 0;
        const bool true_pos = actual[i] == 0;
        if (pred_pos && true_pos) {
            ++c.tp;
        } else if (pred_pos) {
            ++c.fp;
        } else if (true_pos) {
            ++c.fn;
        } else {
            ++c.tn;
        }
    }
    return metrics_from_confusion(c);
}

MetricsReport evaluate(const LinearProbe& probe, const Tensor& embeddings, std::span<const std::size_t> classes) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != classes.size() || classes.empty()) {
        throw ShapeError("evaluate: embeddings must be (n x d) with n >= 1 labels");
    }
    const auto pred = probe.predict(embeddings);
    return metrics_from_predictions(pred, classes);
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"accuracy", r.accuracy},
            {"precision", r.precision},
            {"recall", r.recall},
            {"f1", r.f1},
            {"macro_precision", r.macro_precision},
            {"macro_recall", r.macro_recall},
            {"macro_f1", r.macro_f1},
            {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}, {"tn", r.confusion.tn}}}};
}

std::string metrics_csv_header() {
    return "accuracy,precision,recall,f1,macro_precision,macro_recall,macro_f1,tp,fp,fn,tn";
}

std::string metrics_csv_row(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.macro_precision << ','
        << r.macro_recall << ',' << r.macro_f1 << ',' << r.confusion.tp << ',' << r.confusion.fp << ','
        << r.confusion.fn << ',' << r.confusion.tn;
    return out.str();
}

} // namespace lumbar_align
