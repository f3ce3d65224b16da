// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "lumbar_align/tensor.hpp"

#include <functional>
#include <vector>

namespace lumbar_align {

/// Compares reverse-mode gradients of `f` with central finite differences.
///
/// `f` must rebuild its graph on every call and return a scalar. Returns the
/// max over all parameter entries of
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Parameters keep their values; their grads are overwritten with the
/// analytic gradient.
double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double step = 1e-6);

} // namespace lumbar_align
