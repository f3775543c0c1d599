// SPDX-License-Identifier: Apache-2.0
//
// Sampling, evaluation and the four-condition diagnostic on top of a trained
// bundle. Sample j of a run starts from the noise of Rng(seed).split(source
// asset id), so every condition of the diagnostic denoises the same noise.
#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "biflow/config.hpp"
#include "biflow/dataset.hpp"
#include "biflow/dual_branch.hpp"
#include "biflow/metrics.hpp"

namespace biflow::pipeline {

/// K guided Euler steps with the fused bundle velocity as the oracle.
Tensor generate_latent(const dual::Bundle& bundle, const dual::ConditionInputs& inputs, Regime regime,
                       const SampleSettings& settings, Rng& rng, std::vector<Tensor>* trajectory = nullptr);

/// Decoded grid, its three renders and the tokens of the condition (or -1).
AssetRecord record_from_latent(const Tensor& latent, int image_size,
                               const std::array<std::int32_t, toy::kTextTokens>& tokens);

/// Record set of kind "generated"; source_ids name the ground-truth asset of each record.
Dataset generated_dataset(std::vector<AssetRecord> records, std::vector<std::int64_t> source_ids, std::uint64_t seed,
                          int grid, int image);

/// Pairs each generated record with its ground-truth asset through source_ids, or by index without them.
metrics::MetricsReport evaluate_generated(const Dataset& gt, const Dataset& generated,
                                          const metrics::FeatureExtractor& extractor);

struct DiagnosticCondition {
    std::string name;
    Regime regime;
    toy::View view;
};

/// image_front, image_bottom, text, joint_bottom_text.
const std::array<DiagnosticCondition, 4>& diagnostic_conditions();

struct DiagnosticRow {
    std::string condition;
    metrics::MetricsReport report;
};

/// Runs every condition over the first diagnose.assets assets of the held-out
/// split. With a non-empty `out`, writes <condition>/ generated sets and
/// reports plus diagnose.csv.
std::vector<DiagnosticRow> diagnose(const dual::Bundle& bundle, const Dataset& data, const RunConfig& config,
                                    const std::filesystem::path& out = {});

std::string diagnostic_csv(const std::vector<DiagnosticRow>& rows);

}  // namespace biflow::pipeline
