// SPDX-License-Identifier: Apache-2.0
//
// One JSON document configures every command. All fields have defaults;
// unknown sections or fields are rejected. Precedence, lowest first:
// built-in defaults, the --config file, then command-line flags.
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "biflow/dataset.hpp"
#include "biflow/dual_branch.hpp"
#include "biflow/flow.hpp"
#include "biflow/trainer.hpp"

namespace biflow {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SampleSettings {
    int steps = 25;          // K
    double guidance = 3.0;   // CFG scale s
    dual::FusionKind strategy = dual::FusionKind::sim;
    int count = 1;
};

struct EvalSettings {
    std::uint64_t extractor_seed = 0;
};

struct DiagnoseSettings {
    std::size_t assets = 100;   // held-out objects per condition
    std::string split = "test";
};

struct RunConfig {
    std::uint64_t seed = 0;
    DatasetConfig data{.seed = 0, .count = 5000, .grid = 8, .image = 16, .train_fraction = 0.9};
    dual::ModelConfig model;
    train::TrainConfig pretrain;
    train::TrainConfig finetune;
    bool at_residual = false;
    SampleSettings sample;
    EvalSettings eval;
    DiagnoseSettings diagnose;

    RunConfig();
    void validate() const;
};

/// Parses a JSON document on top of the defaults; throws ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& file);

/// Canonical JSON of every field (defaults applied), stable key order.
std::string resolved_json(const RunConfig& config);

/// FNV-1a 64 of resolved_json.
std::string config_fingerprint(const RunConfig& config);

/// Build identification ("git describe" at configure time, or the project version).
std::string version_string();

}  // namespace biflow
