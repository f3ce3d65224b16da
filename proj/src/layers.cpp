// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/layers.hpp"

#include "lumbar_align/ops.hpp"

#include <cmath>

namespace lumbar_align {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) {
        v = rng.uniform(-bound, bound);
    }
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    return t;
}

void append_parameters(ParameterList& out, const std::string& prefix, const ParameterList& params) {
    for (const auto& p : params) {
        out.push_back({prefix + p.name, p.tensor});
    }
}

std::vector<std::vector<double>> snapshot_values(const ParameterList& params) {
    std::vector<std::vector<double>> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    }
    return out;
}

void set_trainable(const ParameterList& params, bool trainable) {
    for (const auto& p : params) {
        Tensor t = p.tensor;
        t.set_requires_grad(trainable);
    }
}

Linear::Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng)
    : weight_(init_uniform({in_dim, out_dim}, in_dim, rng)),
      bias_(init_uniform({out_dim}, in_dim, rng)) {}

Tensor Linear::operator()(const Tensor& x) const { return add_bias(matmul(x, weight_), bias_); }

ParameterList Linear::parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

AttentionBlock::AttentionBlock(std::size_t width, Rng& rng)
    : width_(width),
      query_(width, width, rng),
      key_(width, width, rng),
      value_(width, width, rng),
      output_(width, width, rng),
      ff_in_(width, 2 * width, rng),
      ff_out_(2 * width, width, rng) {}

Tensor AttentionBlock::operator()(const Tensor& x) const {
    const Tensor q = query_(x);
    const Tensor k = key_(x);
    const Tensor v = value_(x);
    const Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(width_)));
    const Tensor attended = matmul(row_softmax(scores), v);
    const Tensor h = add(x, output_(attended));
    return add(h, ff_out_(relu(ff_in_(h))));
}

ParameterList AttentionBlock::parameters() const {
    ParameterList out;
    append_parameters(out, "query.", query_.parameters());
    append_parameters(out, "key.", key_.parameters());
    append_parameters(out, "value.", value_.parameters());
    append_parameters(out, "output.", output_.parameters());
    append_parameters(out, "ff_in.", ff_in_.parameters());
    append_parameters(out, "ff_out.", ff_out_.parameters());
    return out;
}

} // namespace lumbar_align
