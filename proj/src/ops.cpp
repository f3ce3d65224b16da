// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/ops.hpp"

#include "lumbar_align/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace lumbar_align {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;
using ApplyFn = std::function<void(const TensorNode&, std::span<const NodePtr>)>;

constexpr double kNormFloor = 1e-12;

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, ApplyFn apply) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (grad_mode_enabled()) {
        bool any = false;
        for (const Tensor* in : inputs) {
            any = any || in->requires_grad();
        }
        if (any) {
            auto fn = std::make_shared<GradFn>();
            fn->op = op;
            for (const Tensor* in : inputs) {
                fn->inputs.push_back(in->node());
            }
            fn->apply = std::move(apply);
            node->grad_fn = std::move(fn);
            node->requires_grad = true;
        }
    }
    return Tensor::from_node(std::move(node));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                     shape_to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a) {
    throw ShapeError(std::string(op) + ": unsupported shape " + shape_to_string(a));
}

void require_matrix(const char* op, const Tensor& a) {
    if (a.rank() != 2) {
        shape_fail(op, a.shape());
    }
}

// c[M x N] += a[M x K] * b[K x N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[M x K] += g[M x N] * b[K x N]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += grow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

// c[K x N] += a[M x K]^T * g[M x N]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) {
                continue;
            }
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * grow[j];
            }
        }
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        shape_fail("matmul", a.shape(), b.shape());
    }
    const std::size_t m = a.dim(0);
    const std::size_t k = a.dim(1);
    const std::size_t n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result("matmul", {m, n}, std::move(out), {&a, &b},
                       [m, k, n](const TensorNode& o, std::span<const NodePtr> in) {
                           if (in[0]->requires_grad) {
                               gemm_nt(o.grad.data(), in[1]->data.data(), in[0]->grad.data(), m, n, k);
                           }
                           if (in[1]->requires_grad) {
                               gemm_tn(in[0]->data.data(), o.grad.data(), in[1]->grad.data(), m, k, n);
                           }
                       });
}

Tensor transpose(const Tensor& a) {
    require_matrix("transpose", a);
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    std::vector<double> out(m * n);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j * m + i] = src[i * n + j];
        }
    }
    return make_result("transpose", {n, m}, std::move(out), {&a},
                       [m, n](const TensorNode& o, std::span<const NodePtr> in) {
                           auto& g = in[0]->grad;
                           for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   g[i * n + j] += o.grad[j * m + i];
                               }
                           }
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_fail("add", a.shape(), b.shape());
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    return make_result("add", a.shape(), std::move(out), {&a, &b},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           for (const auto& input : in) {
                               if (!input->requires_grad) {
                                   continue;
                               }
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                   input->grad[i] += o.grad[i];
                               }
                           }
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        shape_fail("mul", a.shape(), b.shape());
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    return make_result("mul", a.shape(), std::move(out), {&a, &b},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           if (in[0]->requires_grad) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                   in[0]->grad[i] += o.grad[i] * in[1]->data[i];
                               }
                           }
                           if (in[1]->requires_grad) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                   in[1]->grad[i] += o.grad[i] * in[0]->data[i];
                               }
                           }
                       });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) {
        v *= factor;
    }
    return make_result("scale", a.shape(), std::move(out), {&a},
                       [factor](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < o.grad.size(); ++i) {
                               in[0]->grad[i] += factor * o.grad[i];
                           }
                       });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    if (a.rank() != 2 || bias.numel() != a.dim(1)) {
        shape_fail("add_bias", a.shape(), bias.shape());
    }
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    std::vector<double> out(a.data().begin(), a.data().end());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bias[j];
        }
    }
    return make_result("add_bias", a.shape(), std::move(out), {&a, &bias},
                       [m, n](const TensorNode& o, std::span<const NodePtr> in) {
                           if (in[0]->requires_grad) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                   in[0]->grad[i] += o.grad[i];
                               }
                           }
                           if (in[1]->requires_grad) {
                               for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                       in[1]->grad[j] += o.grad[i * n + j];
                                   }
                               }
                           }
                       });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a[i] > 0.0 || std::isnan(a[i]) ? a[i] : 0.0;
    }
    return make_result("relu", a.shape(), std::move(out), {&a},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < o.grad.size(); ++i) {
                               if (in[0]->data[i] > 0.0) {
                                   in[0]->grad[i] += o.grad[i];
                               }
                           }
                       });
}

Tensor row_softmax(const Tensor& a) {
    require_matrix("row_softmax", a);
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    if (n == 0) {
        throw ShapeError("row_softmax: empty row in shape " + shape_to_string(a.shape()));
    }
    std::vector<double> out(m * n);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = src.data() + i * n;
        const double peak = *std::max_element(row, row + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = std::exp(row[j] - peak);
            total += out[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] /= total;
        }
    }
    return make_result("row_softmax", {m, n}, std::move(out), {&a},
                       [m, n](const TensorNode& o, std::span<const NodePtr> in) {
                           // dx = p * (g - <g, p>) per row
                           for (std::size_t i = 0; i < m; ++i) {
                               const double* p = o.data.data() + i * n;
                               const double* g = o.grad.data() + i * n;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   dot += g[j] * p[j];
                               }
                               for (std::size_t j = 0; j < n; ++j) {
                                   in[0]->grad[i * n + j] += p[j] * (g[j] - dot);
                               }
                           }
                       });
}

Tensor elementwise_log(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a[i] > 0.0)) {
            throw NumericError("elementwise_log: non-positive input " + std::to_string(a[i]) +
                               " at index " + std::to_string(i));
        }
        out[i] = std::log(a[i]);
    }
    return make_result("elementwise_log", a.shape(), std::move(out), {&a},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < o.grad.size(); ++i) {
                               in[0]->grad[i] += o.grad[i] / in[0]->data[i];
                           }
                       });
}

Tensor sum_all(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    return make_result("sum_all", {1}, {total}, {&a},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           for (double& g : in[0]->grad) {
                               g += o.grad[0];
                           }
                       });
}

Tensor mean_all(const Tensor& a) {
    if (a.numel() == 0) {
        shape_fail("mean_all", a.shape());
    }
    const double count = static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    return make_result("mean_all", {1}, {total / count}, {&a},
                       [count](const TensorNode& o, std::span<const NodePtr> in) {
                           const double share = o.grad[0] / count;
                           for (double& g : in[0]->grad) {
                               g += share;
                           }
                       });
}

Tensor l2_normalize_rows(const Tensor& a) {
    require_matrix("l2_normalize_rows", a);
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    std::vector<double> out(m * n);
    std::vector<double> denom(m);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            sq += src[i * n + j] * src[i * n + j];
        }
        denom[i] = std::max(std::sqrt(sq), kNormFloor);
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] = src[i * n + j] / denom[i];
        }
    }
    return make_result(
        "l2_normalize_rows", {m, n}, std::move(out), {&a},
        [m, n, denom = std::move(denom)](const TensorNode& o, std::span<const NodePtr> in) {
            for (std::size_t i = 0; i < m; ++i) {
                const double* y = o.data.data() + i * n;
                const double* g = o.grad.data() + i * n;
                double* dx = in[0]->grad.data() + i * n;
                if (denom[i] <= kNormFloor) {
                    // Below the floor the map is linear: y = x / floor.
                    for (std::size_t j = 0; j < n; ++j) {
                        dx[j] += g[j] / denom[i];
                    }
                    continue;
                }
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += g[j] * y[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    dx[j] += (g[j] - y[j] * dot) / denom[i];
                }
            }
        });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int64_t> ids) {
    require_matrix("embedding_lookup", table);
    const std::size_t vocab = table.dim(0);
    const std::size_t width = table.dim(1);
    std::vector<double> out(ids.size() * width);
    const auto src = table.data();
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw ShapeError("embedding_lookup: id " + std::to_string(ids[t]) +
                             " outside table of shape " + shape_to_string(table.shape()));
        }
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[t] * width), width,
                    out.begin() + static_cast<std::ptrdiff_t>(t * width));
    }
    std::vector<std::int64_t> saved(ids.begin(), ids.end());
    return make_result("embedding_lookup", {ids.size(), width}, std::move(out), {&table},
                       [width, saved = std::move(saved)](const TensorNode& o,
                                                         std::span<const NodePtr> in) {
                           for (std::size_t t = 0; t < saved.size(); ++t) {
                               double* row = in[0]->grad.data() + saved[t] * width;
                               for (std::size_t j = 0; j < width; ++j) {
                                   row[j] += o.grad[t * width + j];
                               }
                           }
                       });
}

Tensor conv2d_small(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    std::size_t stride, std::size_t padding) {
    if (input.rank() != 3 || weight.rank() != 4 || weight.dim(1) != input.dim(0) ||
        weight.dim(2) != weight.dim(3)) {
        shape_fail("conv2d_small", input.shape(), weight.shape());
    }
    if (bias.numel() != weight.dim(0)) {
        shape_fail("conv2d_small", weight.shape(), bias.shape());
    }
    if (stride == 0) {
        throw ShapeError("conv2d_small: stride must be at least 1");
    }
    const std::size_t channels = input.dim(0);
    const std::size_t height = input.dim(1);
    const std::size_t width = input.dim(2);
    const std::size_t filters = weight.dim(0);
    const std::size_t kernel = weight.dim(2);
    if (height + 2 * padding < kernel || width + 2 * padding < kernel) {
        shape_fail("conv2d_small", input.shape(), weight.shape());
    }
    const std::size_t out_h = (height + 2 * padding - kernel) / stride + 1;
    const std::size_t out_w = (width + 2 * padding - kernel) / stride + 1;

    // Unrolled patch matrix: (out_h*out_w) x (channels*kernel*kernel).
    const std::size_t patch_len = channels * kernel * kernel;
    const std::size_t positions = out_h * out_w;
    std::vector<double> cols(positions * patch_len, 0.0);
    const auto src = input.data();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double* col = cols.data() + (oy * out_w + ox) * patch_len;
            for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) {
                            continue;
                        }
                        col[(c * kernel + ky) * kernel + kx] =
                            src[(c * height + static_cast<std::size_t>(iy)) * width +
                                static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }

    // out[f, pos] = sum_l W[f, l] * cols[pos, l] + b[f]
    std::vector<double> out(filters * positions, 0.0);
    gemm_nt(weight.data().data(), cols.data(), out.data(), filters, patch_len, positions);
    for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t p = 0; p < positions; ++p) {
            out[f * positions + p] += bias[f];
        }
    }

    return make_result(
        "conv2d_small", {filters, out_h, out_w}, std::move(out), {&input, &weight, &bias},
        [=, cols = std::move(cols)](const TensorNode& o, std::span<const NodePtr> in) {
            const double* g = o.grad.data();
            if (in[1]->requires_grad) {
                // dW[f, l] += sum_pos g[f, pos] * cols[pos, l]
                gemm_nn(g, cols.data(), in[1]->grad.data(), filters, positions, patch_len);
            }
            if (in[2]->requires_grad) {
                for (std::size_t f = 0; f < filters; ++f) {
                    double total = 0.0;
                    for (std::size_t p = 0; p < positions; ++p) {
                        total += g[f * positions + p];
                    }
                    in[2]->grad[f] += total;
                }
            }
            if (in[0]->requires_grad) {
                std::vector<double> dcols(positions * patch_len, 0.0);
                gemm_tn(g, in[1]->data.data(), dcols.data(), filters, positions, patch_len);
                auto& dx = in[0]->grad;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const double* col = dcols.data() + (oy * out_w + ox) * patch_len;
                        for (std::size_t c = 0; c < channels; ++c) {
                            for (std::size_t ky = 0; ky < kernel; ++ky) {
                                const std::ptrdiff_t iy =
                                    static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                                    continue;
                                }
                                for (std::size_t kx = 0; kx < kernel; ++kx) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                        static_cast<std::ptrdiff_t>(padding);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) {
                                        continue;
                                    }
                                    dx[(c * height + static_cast<std::size_t>(iy)) * width +
                                       static_cast<std::size_t>(ix)] +=
                                        col[(c * kernel + ky) * kernel + kx];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor mean_pool_rows(const Tensor& a) {
    require_matrix("mean_pool_rows", a);
    const std::size_t m = a.dim(0);
    const std::size_t n = a.dim(1);
    if (m == 0) {
        shape_fail("mean_pool_rows", a.shape());
    }
    std::vector<double> out(n, 0.0);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[j] += src[i * n + j];
        }
    }
    const double inv = 1.0 / static_cast<double>(m);
    for (double& v : out) {
        v *= inv;
    }
    return make_result("mean_pool_rows", {1, n}, std::move(out), {&a},
                       [m, n, inv](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   in[0]->grad[i * n + j] += o.grad[j] * inv;
                               }
                           }
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        shape_fail("reshape", a.shape(), shape);
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {&a},
                       [](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < o.grad.size(); ++i) {
                               in[0]->grad[i] += o.grad[i];
                           }
                       });
}

Tensor stack_rows(std::span<const Tensor> rows) {
    if (rows.empty()) {
        throw ShapeError("stack_rows: no rows given");
    }
    const std::size_t width = rows.front().numel();
    std::vector<double> out;
    out.reserve(rows.size() * width);
    bool any_grad = false;
    for (const Tensor& row : rows) {
        const bool vector_like = row.rank() == 1 || (row.rank() == 2 && row.dim(0) == 1);
        if (!vector_like || row.numel() != width) {
            shape_fail("stack_rows", rows.front().shape(), row.shape());
        }
        out.insert(out.end(), row.data().begin(), row.data().end());
        any_grad = any_grad || row.requires_grad();
    }

    auto node = std::make_shared<TensorNode>();
    node->shape = {rows.size(), width};
    node->data = std::move(out);
    if (grad_mode_enabled() && any_grad) {
        auto fn = std::make_shared<GradFn>();
        fn->op = "stack_rows";
        for (const Tensor& row : rows) {
            fn->inputs.push_back(row.node());
        }
        fn->apply = [width](const TensorNode& o, std::span<const NodePtr> in) {
            for (std::size_t r = 0; r < in.size(); ++r) {
                if (!in[r]->requires_grad) {
                    continue;
                }
                for (std::size_t j = 0; j < width; ++j) {
                    in[r]->grad[j] += o.grad[r * width + j];
                }
            }
        };
        node->grad_fn = std::move(fn);
        node->requires_grad = true;
    }
    return Tensor::from_node(std::move(node));
}

Tensor patchify(const Tensor& image, std::size_t patch) {
    if (image.rank() != 3 || patch == 0 || image.dim(1) % patch != 0 || image.dim(2) % patch != 0) {
        shape_fail("patchify", image.shape(), {patch, patch});
    }
    const std::size_t channels = image.dim(0);
    const std::size_t height = image.dim(1);
    const std::size_t width = image.dim(2);
    const std::size_t grid_w = width / patch;
    const std::size_t count = (height / patch) * grid_w;
    const std::size_t len = channels * patch * patch;

    // index[row * len + col] = flat source index
    std::vector<std::size_t> index(count * len);
    for (std::size_t p = 0; p < count; ++p) {
        const std::size_t py = p / grid_w;
        const std::size_t px = p % grid_w;
        for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    index[p * len + (c * patch + y) * patch + x] =
                        (c * height + py * patch + y) * width + px * patch + x;
                }
            }
        }
    }
    std::vector<double> out(count * len);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = image[index[i]];
    }
    return make_result("patchify", {count, len}, std::move(out), {&image},
                       [index = std::move(index)](const TensorNode& o, std::span<const NodePtr> in) {
                           for (std::size_t i = 0; i < index.size(); ++i) {
                               in[0]->grad[index[i]] += o.grad[i];
                           }
                       });
}

} // namespace lumbar_align
