// SPDX-License-Identifier: Apache-2.0
//
// Two-stage training: each branch alone with dropout on its own condition,
// then both branches, the bridges and an optional fusion module together.
//
// Every random choice of step k, sample i comes from Rng(seed).split(k).split(i)
// in the order asset, keep-image, keep-text, view, t, noise. A run is thus a
// pure function of (config, seed, initial parameters), and resuming at any
// step replays exactly what the uninterrupted run would have done.
#pragma once

#include <array>
#include <functional>
#include <string_view>
#include <vector>

#include "biflow/checkpoint.hpp"
#include "biflow/dataset.hpp"
#include "biflow/dual_branch.hpp"
#include "biflow/flow.hpp"

namespace biflow::train {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // global-norm clip; <= 0 disables
};

class Adam {
public:
    Adam(const ad::ParamStore& store, AdamConfig config);

    /// Only parameters whose name starts with one of the prefixes are updated.
    void restrict_to(const ad::ParamStore& store, const std::vector<std::string>& prefixes);

    /// Clips, then applies one bias-corrected update. Returns the pre-clip
    /// global norm. Throws NumericalError on non-finite gradients or results.
    double step(ad::ParamStore& store, ad::GradList& grads);

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    ckpt::ResumeState state() const { return {t_, m_, v_}; }
    void restore(ckpt::ResumeState state);

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
    std::vector<bool> trainable_;
};

/// Image and text are each kept independently with probability 1 - p.
Regime sample_regime(Rng& rng, double p);

enum class Stage : std::uint8_t { pretrain_img, pretrain_txt, joint };
std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct TrainConfig {
    Stage stage = Stage::pretrain_img;
    int steps = 20000;
    int batch = 32;
    double dropout = 0.5;
    std::uint64_t seed = 0;
    int log_every = 100;
    int checkpoint_every = 0;  // 0: only at the end
    AdamConfig adam;
    flow::TimeSampling time = flow::TimeSampling::uniform;
    dual::FusionKind strategy = dual::FusionKind::sim;  // joint stage
    bool freeze_branches = false;                       // joint stage: train bridges and fusion only
    int threads = 0;                                    // 0: hardware concurrency

    void validate() const;
};

struct StepLog {
    std::uint64_t step = 0;
    std::array<int, 4> regime_counts{};  // uncond, text, image, joint
    double loss = 0.0;
    double grad_norm = 0.0;
    double wall_seconds = 0.0;
};

struct Hooks {
    std::function<void(const StepLog&)> on_step;
    /// Called every checkpoint_every steps with the number of completed steps.
    std::function<void(std::uint64_t)> on_checkpoint;
};

using Range = std::array<std::size_t, 2>;

/// One drawn training example.
struct Draw {
    std::size_t asset = 0;
    Regime regime = Regime::joint;
    toy::View view = toy::View::front;
    flow::FlowExample flow;  // on tokens [N, 32]
    dual::ConditionInputs inputs;
};

Draw draw_example(const Dataset& data, Range range, const dual::ModelConfig& model, const TrainConfig& config,
                  std::uint64_t step, std::size_t index);

/// Runs steps adam.steps() .. config.steps - 1.
std::vector<StepLog> pretrain_branch(dual::BranchModel& model, const Dataset& data, Range range,
                                     const TrainConfig& config, Adam& adam, const Hooks& hooks = {});

std::vector<StepLog> joint_finetune(dual::Bundle& bundle, const Dataset& data, Range range, const TrainConfig& config,
                                    Adam& adam, const Hooks& hooks = {});

/// Step-0 handoff check on the first batch: the bundle's Sim velocity
/// against the average of the two standalone branches, and the two losses.
struct Parity {
    double max_velocity_diff = 0.0;
    double fused_loss = 0.0;
    double mixture_loss = 0.0;
};
Parity handoff_parity(const dual::Bundle& bundle, const dual::BranchModel& image, const dual::BranchModel& text,
                      const Dataset& data, Range range, const TrainConfig& config);

/// Mean flow loss of the bundle over `count` draws with the regime forced.
double regime_loss(const dual::Bundle& bundle, const Dataset& data, Range range, const TrainConfig& config,
                   Regime regime, std::size_t count, std::uint64_t seed);

}  // namespace biflow::train
