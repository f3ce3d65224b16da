// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/tensor.hpp"

#include "lumbar_align/errors.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace lumbar_align {

namespace {
thread_local bool g_grad_enabled = true;
} // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << ", ";
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::vector<double>& TensorNode::grad_buffer() {
    if (grad.empty() && !data.empty()) {
        grad.assign(data.size(), 0.0);
    }
    return grad;
}

Tensor::Tensor() : node_(std::make_shared<TensorNode>()) {
    node_->shape = {0};
}

Tensor::Tensor(Shape shape, std::vector<double> data) : node_(std::make_shared<TensorNode>()) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("Tensor: shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& row : rows) {
        if (row.size() != cols) {
            throw ShapeError("Tensor::matrix: ragged rows");
        }
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor({rows.size(), cols}, std::move(flat));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::from_node(std::shared_ptr<TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(node_->shape));
    }
    return node_->shape[axis];
}

double Tensor::item() const {
    if (node_->data.size() != 1) {
        throw ShapeError("Tensor::item: tensor of shape " + shape_to_string(node_->shape) +
                         " is not a scalar");
    }
    return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    if (rank() != 2) {
        throw ShapeError("Tensor::at: expected a matrix, got shape " + shape_to_string(shape()));
    }
    return node_->data[i * node_->shape[1] + j];
}

Tensor& Tensor::set_requires_grad(bool value) {
    if (!is_leaf()) {
        throw GraphError("set_requires_grad: only leaf tensors can change requires_grad");
    }
    node_->requires_grad = value;
    if (value) {
        node_->grad_buffer();
    } else {
        node_->grad.clear();
    }
    return *this;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data); }

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
    }
    const auto& root = loss.node();
    if (root->graph_consumed) {
        throw GraphError("backward: graph already consumed by a previous backward pass");
    }
    if (!root->requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_input] = stack.back();
        if (node->graph_consumed) {
            throw GraphError("backward: graph already consumed by a previous backward pass");
        }
        if (node->grad_fn && next_input < node->grad_fn->inputs.size()) {
            TensorNode* child = node->grad_fn->inputs[next_input++].get();
            if (child->requires_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (!node->grad_fn) {
            continue;
        }
        node->grad_buffer();
        for (const auto& input : node->grad_fn->inputs) {
            if (input->requires_grad) {
                input->grad_buffer();
            }
        }
        node->grad_fn->apply(*node, node->grad_fn->inputs);
    }

    for (TensorNode* node : order) {
        if (node->grad_fn) {
            node->grad_fn.reset();
            node->graph_consumed = true;
        }
    }
}

bool grad_mode_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

} // namespace lumbar_align
