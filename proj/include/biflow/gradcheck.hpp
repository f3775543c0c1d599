// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "biflow/autodiff.hpp"

namespace biflow::ad {

inline constexpr double kGradFloor = 1e-5;

/// Builds a scalar from one differentiable input.
using ScalarFn = std::function<Var(Graph&, Var)>;

/// Builds a scalar from parameters held in a store.
using ParamScalarFn = std::function<Var(Graph&)>;

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, kGradFloor).
/// The floor keeps structurally zero gradients (a key bias under softmax)
/// from turning central-difference round-off into a large ratio.
double grad_check(const ScalarFn& fn, const Tensor& point, double step, GraphOptions options = {});

/// Same measure over every coordinate of every parameter in the store.
/// Parameter values are perturbed in place and restored exactly.
double grad_check_params(const ParamScalarFn& fn, ParamStore& params, double step, GraphOptions options = {});

}  // namespace biflow::ad
