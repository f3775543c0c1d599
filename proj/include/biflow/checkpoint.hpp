// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directory:
//   ckpt.json   format_version, kind (branch | bundle), architecture, and for
//               every parameter its name, shape, element offset and count
//   ckpt.bin    all parameters back to back as little-endian float32
//
// A bundle checkpoint holds both branches ("img.", "txt."), the bridges
// ("bridge.") and, for AW/AT, the fusion module ("fusion.") in one payload.
// Training additionally writes resume.bin with float64 parameters and the
// optimizer moments so a resumed run continues bit-exactly.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biflow/autodiff.hpp"
#include "biflow/dataset.hpp"
#include "biflow/dual_branch.hpp"

namespace biflow::ckpt {

struct CheckpointError : DataError {
    using DataError::DataError;
};

struct CheckpointInfo {
    std::string kind = "branch";  // branch | bundle
    dual::ModelConfig model;
    dual::Modality modality = dual::Modality::image;       // branch checkpoints
    dual::Modality second_branch = dual::Modality::text;   // bundle: modality in the "txt." slot
    std::optional<dual::FusionKind> fusion;                // bundle: AW/AT module present
    bool at_residual = false;
    std::uint64_t step = 0;
    std::string config_fingerprint;
    std::string dataset_checksum;
};

struct Checkpoint {
    CheckpointInfo info;
    std::vector<std::pair<std::string, Tensor>> params;
    std::string checksum;  // FNV-1a 64 of ckpt.bin
};

/// Writes ckpt.json and ckpt.bin; returns the payload checksum.
std::string save(const std::filesystem::path& dir, const ad::ParamStore& store, const CheckpointInfo& info);
Checkpoint load(const std::filesystem::path& dir);

/// Copies every tensor into the store; names and shapes must match exactly.
void apply(const Checkpoint& ckpt, ad::ParamStore& store);

dual::BranchModel make_branch_model(const Checkpoint& ckpt);
dual::Bundle make_bundle(const Checkpoint& ckpt);

/// Optimizer state saved beside the float64 parameters.
struct ResumeState {
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;
};

void save_resume(const std::filesystem::path& file, const ad::ParamStore& store, const ResumeState& state);
/// Reads resume.bin, checks names and shapes against the store and loads the parameters into it.
ResumeState load_resume(const std::filesystem::path& file, ad::ParamStore& store);

}  // namespace biflow::ckpt
