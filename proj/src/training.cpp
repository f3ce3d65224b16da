// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/training.hpp"

#include "lumbar_align/ops.hpp"
#include "lumbar_align/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace lumbar_align {

void TrainConfig::validate() const {
    if (batch_size < 2) {
        throw InputError("train: batch_size must be at least 2");
    }
    if (!(learning_rate > 0.0) || weight_decay < 0.0 || !(tau > 0.0)) {
        throw InputError("train: learning_rate and tau must be positive, weight_decay non-negative");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw InputError("train: warmup_fraction must lie in [0, 1)");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw InputError("train: alpha must lie in [0, 1]");
    }
}

double warmup_lr(std::size_t step, std::size_t total_steps, const TrainConfig& config) {
    const auto warmup_end =
        static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<double>(total_steps)));
    if (step >= warmup_end) {
        return config.learning_rate;
    }
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(warmup_end);
}

std::size_t steps_per_epoch(std::size_t train_size, std::size_t batch_size) {
    const std::size_t full = train_size / batch_size;
    return full + (train_size % batch_size >= 2 ? 1 : 0);
}

OptimizerState OptimizerState::for_parameters(const ParameterList& params) {
    OptimizerState state;
    for (const auto& p : params) {
        state.first_moment.emplace_back(p.tensor.numel(), 0.0);
        state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
    return state;
}

void adamw_step(const ParameterList& params, std::span<const std::vector<double>> grads, OptimizerState& state,
                double lr, double weight_decay) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size()) {
        throw ShapeError("adamw_step: parameter, gradient and state counts differ");
    }
    if (lr < 0.0) {
        throw std::invalid_argument("adamw_step: negative learning rate");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (grads[k].size() != params[k].tensor.numel() || state.first_moment[k].size() != grads[k].size()) {
            throw ShapeError("adamw_step: shape mismatch for " + params[k].name);
        }
        if (!std::all_of(grads[k].begin(), grads[k].end(), [](double g) { return std::isfinite(g); })) {
            throw NumericError("non-finite gradient in parameter " + params[k].name);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor tensor = params[k].tensor;
        auto theta = tensor.mutable_data();
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        const auto& g = grads[k];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            theta[i] -= lr * (m_hat / (std::sqrt(v_hat) + state.eps) + weight_decay * theta[i]);
        }
    }
}

std::vector<std::vector<double>> collect_gradients(const ParameterList& params) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) {
        if (p.tensor.has_grad()) {
            const auto g = p.tensor.grad();
            grads.emplace_back(g.begin(), g.end());
        } else {
            grads.emplace_back(p.tensor.numel(), 0.0);
        }
    }
    return grads;
}

void zero_gradients(const ParameterList& params) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

void ModelConfig::validate() const {
    image.validate();
    text.validate();
    image_head.validate();
    text_head.validate();
    if (image_head.in_dim != image.output_dim || text_head.in_dim != text.output_dim) {
        throw InputError("model: projection input dims must equal encoder output dims");
    }
    if (image_head.effective_dim() != text_head.effective_dim()) {
        throw InputError("model: image and text embeddings must share a dimension (got " +
                         std::to_string(image_head.effective_dim()) + " and " +
                         std::to_string(text_head.effective_dim()) + ")");
    }
}

namespace {

ModelConfig checked(ModelConfig config) {
    config.validate();
    return config;
}

} // namespace

Model::Model(ModelConfig config, Vocabulary vocab, NormStats stats)
    : config_(checked(std::move(config))),
      vocab_(std::move(vocab)),
      stats_(stats),
      image_encoder_(config_.image),
      text_encoder_(config_.text),
      image_head_(config_.image_head),
      text_head_(config_.text_head) {
    if (vocab_.size() != config_.text.vocab_size) {
        throw InputError("model: vocabulary size does not match text.vocab_size");
    }
}

ParameterList Model::parameters() const {
    ParameterList out;
    append_parameters(out, "image_encoder.", image_encoder_.parameters());
    append_parameters(out, "text_encoder.", text_encoder_.parameters());
    append_parameters(out, "image_head.", image_head_.parameters());
    append_parameters(out, "text_head.", text_head_.parameters());
    return out;
}

Tensor Model::embed_images(std::span<const Tensor> images) const {
    std::vector<Tensor> rows;
    rows.reserve(images.size());
    for (const auto& img : images) {
        rows.push_back(image_encoder_.encode(img));
    }
    return image_head_.project_batch(stack_rows(rows));
}

Tensor Model::embed_texts(std::span<const std::vector<std::int64_t>> tokens) const {
    std::vector<Tensor> rows;
    rows.reserve(tokens.size());
    for (const auto& ids : tokens) {
        rows.push_back(text_encoder_.encode(ids));
    }
    return text_head_.project_batch(stack_rows(rows));
}

Model Model::clone() const {
    Model copy(config_, vocab_, stats_);
    load_values(copy.parameters(), snapshot_values(parameters()));
    if (image_encoder_.frozen()) {
        copy.image_encoder_.freeze();
    }
    if (text_encoder_.frozen()) {
        copy.text_encoder_.freeze();
    }
    return copy;
}

void load_values(const ParameterList& params, const std::vector<std::vector<double>>& values) {
    if (values.size() != params.size()) {
        throw ShapeError("load_values: expected " + std::to_string(params.size()) + " tensors");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor t = params[k].tensor;
        auto dst = t.mutable_data();
        if (dst.size() != values[k].size()) {
            throw ShapeError("load_values: size mismatch for " + params[k].name);
        }
        std::copy(values[k].begin(), values[k].end(), dst.begin());
    }
}

EncodedDataset encode_dataset(const std::vector<Sample>& samples, const std::filesystem::path& base_dir,
                              std::size_t resolution, const NormStats& stats, const Vocabulary& vocab,
                              std::size_t max_tokens) {
    EncodedDataset out;
    std::map<std::string, Tensor> cache;
    for (const auto& s : samples) {
        auto it = cache.find(s.image_ref);
        if (it == cache.end()) {
            it = cache.emplace(s.image_ref, preprocess_image(load_image(s.image_ref, base_dir), resolution, stats))
                     .first;
        }
        out.ids.push_back(s.id);
        out.images.push_back(it->second);
        out.captions.push_back(tokenize(vocab, s.caption, max_tokens));
        std::vector<std::vector<std::int64_t>> aug;
        for (const auto& a : s.aug_captions) {
            aug.push_back(tokenize(vocab, a, max_tokens));
        }
        out.aug_captions.push_back(std::move(aug));
        out.labels.push_back(s.label);
    }
    return out;
}

NormStats train_norm_stats(const std::vector<Sample>& train, const std::filesystem::path& base_dir,
                           std::size_t resolution) {
    std::map<std::string, Tensor> unique;
    for (const auto& s : train) {
        if (!unique.contains(s.image_ref)) {
            unique.emplace(s.image_ref, resize_to_square(load_image(s.image_ref, base_dir), resolution));
        }
    }
    std::vector<Tensor> images;
    images.reserve(unique.size());
    for (auto& [ref, img] : unique) {
        images.push_back(img);
    }
    return compute_norm_stats(images);
}

Vocabulary build_vocabulary(const std::vector<Sample>& samples) {
    std::vector<std::string> texts;
    for (const auto& s : samples) {
        texts.push_back(s.caption);
        texts.insert(texts.end(), s.aug_captions.begin(), s.aug_captions.end());
    }
    return Vocabulary::build(texts);
}

namespace {

const std::vector<std::int64_t>& aug_caption(const EncodedDataset& data, std::size_t i, std::size_t slot) {
    const auto& aug = data.aug_captions[i];
    return aug.empty() ? data.captions[i] : aug[slot % aug.size()];
}

struct BatchInputs {
    std::vector<Tensor> images;
    std::vector<std::vector<std::int64_t>> captions;
    std::vector<std::vector<std::int64_t>> aug;
    std::vector<LabelVector> labels;
};

soft_clip::LossTerms batch_loss(const Model& model, const BatchInputs& batch, const TrainConfig& config) {
    const Tensor z_image = model.embed_images(batch.images);
    const Tensor z_text = model.embed_texts(batch.captions);
    const Tensor z_aug = model.embed_texts(batch.aug);
    return soft_clip::total_loss(z_image, z_text, z_aug, batch.labels, config.alpha, config.tau);
}

/// Batch boundaries over `n` items; a trailing batch of one is dropped.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start >= 2) {
            ranges.emplace_back(start, end);
        }
    }
    return ranges;
}

} // namespace

double evaluation_loss(const Model& model, const EncodedDataset& data, const TrainConfig& config) {
    NoGradGuard guard;
    double weighted = 0.0;
    std::size_t count = 0;
    for (const auto& [start, end] : batch_ranges(data.size(), config.batch_size)) {
        BatchInputs batch;
        for (std::size_t i = start; i < end; ++i) {
            batch.images.push_back(data.images[i]);
            batch.captions.push_back(data.captions[i]);
            batch.aug.push_back(aug_caption(data, i, i));
            batch.labels.push_back(data.labels[i]);
        }
        const double total = batch_loss(model, batch, config).total.item();
        weighted += total * static_cast<double>(end - start);
        count += end - start;
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN() : weighted / static_cast<double>(count);
}

TrainResult pretrain(Model& model, const EncodedDataset& train, const EncodedDataset& val,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (train.size() < 2 && config.epochs > 0) {
        throw InputError("pretrain: the training split needs at least two pairs");
    }
    const ParameterList params = model.parameters();
    OptimizerState state = OptimizerState::for_parameters(params);

    TrainResult result;
    result.total_steps = config.epochs * steps_per_epoch(train.size(), config.batch_size);
    result.best_values = snapshot_values(params);
    double best_score = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train.size());
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(config.seed, {epoch, 0x5Au}));
        shuffle_rng.shuffle(order);

        double epoch_weighted = 0.0;
        std::size_t epoch_count = 0;
        for (const auto& [start, end] : batch_ranges(order.size(), config.batch_size)) {
            BatchInputs batch;
            std::vector<std::string> ids;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                Rng slot_rng(derive_seed(config.seed, {epoch, i, 0xA6u}));
                batch.images.push_back(train.images[i]);
                batch.captions.push_back(train.captions[i]);
                batch.aug.push_back(aug_caption(train, i, slot_rng.index(kAugmentedCaptions)));
                batch.labels.push_back(train.labels[i]);
                ids.push_back(train.ids[i]);
            }
            auto fail = [&](const std::string& detail) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", step " << global_step << detail;
                return NonFiniteLossError(msg.str(), ids);
            };
            soft_clip::LossTerms terms;
            try {
                terms = batch_loss(model, batch, config);
            } catch (const NumericError& e) {
                throw fail(std::string(" (") + e.what() + ")");
            }
            const soft_clip::LossBreakdown parts = soft_clip::breakdown(terms);
            if (!std::isfinite(parts.total)) {
                throw fail("");
            }
            const double lr = warmup_lr(global_step, result.total_steps, config);
            backward(terms.total);
            adamw_step(params, collect_gradients(params), state, lr, config.weight_decay);
            zero_gradients(params);

            result.batches.push_back({epoch, global_step, parts, lr});
            epoch_weighted += parts.total * static_cast<double>(end - start);
            epoch_count += end - start;
            ++global_step;
        }

        EpochLogRow row;
        row.epoch = epoch;
        row.train_total = epoch_count == 0 ? std::numeric_limits<double>::quiet_NaN()
                                           : epoch_weighted / static_cast<double>(epoch_count);
        row.val_total = evaluation_loss(model, val, config);
        result.epochs.push_back(row);

        const double score = std::isfinite(row.val_total) ? row.val_total : row.train_total;
        if (score < best_score) {
            best_score = score;
            result.best_epoch = epoch;
            result.best_values = snapshot_values(params);
        }
        if (on_epoch) {
            on_epoch(row);
        }
    }
    return result;
}

namespace {

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write " + path.string());
    }
    return out;
}

} // namespace

void write_batch_log(const std::filesystem::path& path, const std::vector<BatchLogRow>& rows) {
    auto out = open_csv(path);
    out << "epoch,step,l_i2t,l_t2i,l_aug_i2t,l_aug_t2i,total,lr\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.step << ',' << format_double(r.loss.l_i2t) << ',' << format_double(r.loss.l_t2i)
            << ',' << format_double(r.loss.l_aug_i2t) << ',' << format_double(r.loss.l_aug_t2i) << ','
            << format_double(r.loss.total) << ',' << format_double(r.lr) << '\n';
    }
}

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLogRow>& rows) {
    auto out = open_csv(path);
    out << "epoch,train_total,val_total\n";
    for (const auto& r : rows) {
        out << r.epoch << ',' << format_double(r.train_total) << ','
            << (std::isfinite(r.val_total) ? format_double(r.val_total) : std::string("nan")) << '\n';
    }
}

} // namespace lumbar_align
