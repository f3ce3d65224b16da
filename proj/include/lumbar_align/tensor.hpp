// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lumbar_align {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode;

/// Backward rule recorded by a primitive. `apply` reads the output's value and
/// gradient and accumulates into the gradients of `inputs`.
struct GradFn {
    std::string op;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(const TensorNode& out, std::span<const std::shared_ptr<TensorNode>> inputs)> apply;
};

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<GradFn> grad_fn;
    // Set once backward has run through this node; the node's grad_fn is dropped.
    bool graph_consumed = false;

    /// Returns the gradient buffer, allocating zeros on first use.
    std::vector<double>& grad_buffer();
};

/// Dense row-major float64 tensor with reverse-mode gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage. Leaf tensors
/// that require gradients own a zero-initialised gradient buffer; intermediate
/// results get one during backward.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    /// Builds a 2-D tensor from nested rows; all rows must have equal length.
    static Tensor matrix(const std::vector<std::vector<double>>& rows);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Direct write access; intended for optimizers and parameter loading.
    std::span<double> mutable_data() { return node_->data; }
    double item() const;
    double at(std::size_t i, std::size_t j) const;
    double operator[](std::size_t flat) const { return node_->data[flat]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool value);
    bool is_leaf() const { return node_->grad_fn == nullptr; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();

    /// Copy of the values with no graph attached.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<TensorNode> node);

private:
    std::shared_ptr<TensorNode> node_;
};

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Gradients accumulate into every reachable tensor that requires grad. The
/// traversed graph is released afterwards; a second call that reaches any
/// released node throws GraphError.
void backward(const Tensor& loss);

/// True unless a NoGradGuard is active on this thread.
bool grad_mode_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

} // namespace lumbar_align
