// SPDX-License-Identifier: Apache-2.0
// Finite-difference audit of every op kind plus one small bridged model.
#pragma once

#include <string>
#include <vector>

#include "biflow/gradcheck.hpp"
#include "biflow/rng.hpp"

namespace biflow::ad {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckRow {
    std::string name;
    double max_rel_error = 0.0;
    bool pass() const { return max_rel_error < kGradCheckTolerance; }
};

/// One row per op kind (worst over `trials` random points) and a final
/// "dual-branch-model" row.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, int trials = 3, GraphOptions options = {});

/// Scalar test function exercising one op, with fixed random weights drawn from rng.
ScalarFn op_probe(OpKind kind, Rng& rng, Shape* input_shape);

}  // namespace biflow::ad
