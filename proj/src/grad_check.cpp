// SPDX-License-Identifier: Apache-2.0
#include "lumbar_align/grad_check.hpp"

#include "lumbar_align/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lumbar_align {

namespace {

double evaluate(const std::function<Tensor()>& f) {
    NoGradGuard no_grad;
    const double value = f().item();
    if (!std::isfinite(value)) {
        throw NumericError("finite_difference_check: function returned a non-finite value");
    }
    return value;
}

} // namespace

double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double step) {
    if (!(step > 0.0)) {
        throw std::invalid_argument("finite_difference_check: step must be positive");
    }
    for (Tensor& p : params) {
        if (!p.requires_grad()) {
            p.set_requires_grad(true);
        }
        p.zero_grad();
    }
    const Tensor loss = f();
    if (!std::isfinite(loss.item())) {
        throw NumericError("finite_difference_check: function returned a non-finite value");
    }
    backward(loss);

    double worst = 0.0;
    for (Tensor& p : params) {
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        analytic.resize(p.numel(), 0.0);
        auto values = p.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + step;
            const double plus = evaluate(f);
            values[i] = original - step;
            const double minus = evaluate(f);
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

} // namespace lumbar_align
