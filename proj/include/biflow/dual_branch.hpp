// SPDX-License-Identifier: Apache-2.0
//
// Two DiT-style velocity networks, one conditioned on image patches and one
// on attribute tokens, coupled after every block by zero-initialized linear
// bridges and combined per step by one of three late-fusion strategies.
//
// Latents [G, G, G, 4] are cut into 2x2x2 voxel patches, giving N = (G/2)^3
// tokens of 32 channels each. A block applies, with shift/scale modulation
// from the time embedding before each sub-layer:
//
//   h += SelfAttn(mod(LN(h)));  h += CrossAttn(mod(LN(h)), cond);  h += MLP(mod(LN(h)))
//
// The output projection G(f) = Linear(LN(f) * (1 + scale(t))) has no shift,
// so G(0) is exactly the projection bias.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "biflow/autodiff.hpp"
#include "biflow/flow.hpp"
#include "biflow/toy_world.hpp"

namespace biflow::dual {

enum class Modality : std::uint8_t { image, text };
std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);

enum class FusionKind : std::uint8_t { sim, aw, at };
std::string_view fusion_name(FusionKind f);
FusionKind parse_fusion(std::string_view name);

struct ModelConfig {
    int grid = 8;
    int image = 16;
    int image_patch = 4;
    int depth = 4;
    int width = 64;
    int heads = 4;
    int mlp_ratio = 2;
    int time_features = 32;

    int voxel_patch() const { return 2; }
    std::size_t tokens() const;         // N = (G/2)^3
    std::size_t token_channels() const; // 2*2*2*4 = 32
    std::size_t image_tokens() const;   // (P/patch)^2
    std::size_t patch_dim() const;      // patch*patch*4
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Latent [G,G,G,4] <-> tokens [N, 32]; token (bx,by,bz) row-major, inner (dx,dy,dz,c).
Tensor patchify(const Tensor& latent);
Tensor unpatchify(const Tensor& tokens, int grid);

/// Sinusoidal features of 1000*t: cos then sin over geometric frequencies, shape [1, F].
Tensor time_features(double t, int count);

/// Raw condition payload; a branch's encoder turns it into tokens.
struct Condition {
    enum class Kind : std::uint8_t { image, text, null };
    Kind kind = Kind::null;
    Tensor patches;                                      // image: [P^2/patch^2, patch*patch*4]
    std::array<std::int32_t, toy::kTextTokens> ids{};    // text

    static Condition null() { return {}; }
    static Condition from_image(const toy::Image& img, int patch);
    static Condition from_patches(Tensor patches);
    static Condition from_text(const std::array<std::int32_t, toy::kTextTokens>& ids);
};

struct BranchOutput {
    ad::Var velocity;               // [N, 32]
    std::vector<ad::Var> features;  // f^(i), [N, D] each
};

/// One velocity network. Parameters live in an external store under `prefix`.
class Branch {
public:
    Branch(const ModelConfig& config, Modality modality, std::string prefix, ad::ParamStore& store, Rng& init);

    const ModelConfig& config() const { return cfg_; }
    Modality modality() const { return modality_; }
    const std::string& prefix() const { return prefix_; }

    /// Encoded condition tokens [M, D]; null gives the learned null token.
    ad::Var encode(ad::Graph& g, const ad::ParamStore& ps, const Condition& cond) const;
    ad::Var embed(ad::Graph& g, const ad::ParamStore& ps, const Tensor& tokens) const;
    ad::Var time_embedding(ad::Graph& g, const ad::ParamStore& ps, double t) const;
    ad::Var block(ad::Graph& g, const ad::ParamStore& ps, int index, ad::Var h, ad::Var temb, ad::Var cond) const;
    /// Output projection with its normalization: [N, D] -> [N, 32].
    ad::Var head(ad::Graph& g, const ad::ParamStore& ps, ad::Var f, ad::Var temb) const;

    BranchOutput forward(ad::Graph& g, const ad::ParamStore& ps, const Tensor& tokens, double t,
                         const Condition& cond) const;

    /// Parameter names relative to the prefix, in registration order.
    std::vector<std::string> local_names() const { return names_; }

private:
    ad::Var p(ad::Graph& g, const ad::ParamStore& ps, const std::string& local) const;
    ad::Var attention(ad::Graph& g, ad::Var q, ad::Var k, ad::Var v) const;

    ModelConfig cfg_;
    Modality modality_;
    std::string prefix_;
    std::vector<std::string> names_;
};

/// Per-block D x D maps txt->img and img->txt, no bias, all zero when created.
class BridgeSet {
public:
    BridgeSet(const ModelConfig& config, std::string prefix, ad::ParamStore& store);
    ad::Var txt_to_img(ad::Graph& g, const ad::ParamStore& ps, int block) const;
    ad::Var img_to_txt(ad::Graph& g, const ad::ParamStore& ps, int block) const;
    int depth() const { return depth_; }
    std::string name(int block, bool to_image) const;

private:
    int depth_;
    std::string prefix_;
};

/// Late-fusion module: time-modulated norm over the concatenated branch
/// features, one cross-attention per modality, then a variant head.
/// AW head: Linear(2D -> 1) + sigmoid, zero-initialized (w = 0.5).
/// AT head: Linear(2D -> 2D), zero-initialized; with `residual` the
/// concatenated input is added back so the module starts as the identity.
class FusionModule {
public:
    FusionModule(const ModelConfig& config, FusionKind kind, bool residual, std::string prefix,
                 ad::ParamStore& store, Rng& init);

    FusionKind kind() const { return kind_; }
    bool residual() const { return residual_; }

    /// Fused features f_fused = M([f_txt; f_img], t, T, I) before the head, [N, 2D].
    ad::Var mix(ad::Graph& g, const ad::ParamStore& ps, ad::Var f_txt, ad::Var f_img, double t, ad::Var txt_cond,
                ad::Var img_cond) const;
    /// AW weights w in (0,1), [N, 1].
    ad::Var weights(ad::Graph& g, const ad::ParamStore& ps, ad::Var mixed) const;
    /// AT output features [N, 2D].
    ad::Var features(ad::Graph& g, const ad::ParamStore& ps, ad::Var mixed, ad::Var f_txt, ad::Var f_img) const;

private:
    ad::Var p(ad::Graph& g, const ad::ParamStore& ps, const std::string& local) const;
    ad::Var cross(ad::Graph& g, const ad::ParamStore& ps, const std::string& which, ad::Var h, ad::Var cond) const;

    ModelConfig cfg_;
    FusionKind kind_;
    bool residual_;
    std::string prefix_;
};

/// Sim: (v_txt + v_img) / 2.
ad::Var fuse_sim(ad::Graph& g, ad::Var v_txt, ad::Var v_img);
/// w * v_txt + (1 - w) * v_img with per-token w [N, 1].
ad::Var fuse_weighted(ad::Graph& g, ad::Var w, ad::Var v_txt, ad::Var v_img);

struct BridgedOutput {
    ad::Var v_img, v_txt;
    ad::Var f_img, f_txt;        // final bridged features
    ad::Var temb_img, temb_txt;
    ad::Var cond_img, cond_txt;  // encoded condition tokens
};

/// Conditions handed to a bundle; which ones are used depends on the regime.
struct ConditionInputs {
    std::optional<Tensor> image_patches;
    std::optional<std::array<std::int32_t, toy::kTextTokens>> text_ids;
};

/// Image branch, text branch, bridges and optional fusion module sharing one store.
class Bundle {
public:
    Bundle(const ModelConfig& config, Rng& init, std::optional<FusionKind> fusion = std::nullopt,
           bool at_residual = false, Modality second_branch = Modality::text);

    const ModelConfig& config() const { return cfg_; }
    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }
    const Branch& image_branch() const { return img_; }
    const Branch& text_branch() const { return txt_; }
    const BridgeSet& bridges() const { return bridges_; }
    const std::optional<FusionModule>& fusion_module() const { return fusion_; }

    /// Lockstep forward: after block i, f_img += f_txt P_txt->img and f_txt += f_img P_img->txt.
    BridgedOutput bridged_forward(ad::Graph& g, const Tensor& tokens, double t, const Condition& img_cond,
                                  const Condition& txt_cond) const;

    /// Fused velocity [N, 32] for the regime; dropped conditions become null tokens.
    ad::Var velocity(ad::Graph& g, const Tensor& tokens, double t, const ConditionInputs& inputs, Regime regime,
                     FusionKind strategy) const;

    /// Condition seen by one branch under a regime.
    Condition branch_condition(const Branch& b, const ConditionInputs& inputs, Regime regime) const;

    /// Copies every parameter of `source` (same layout) into the named branch slot.
    void load_branch(const Branch& source, const ad::ParamStore& source_store, Modality slot);

    /// Overwrite from another store by name; returns the number of tensors copied.
    std::size_t copy_matching(const ad::ParamStore& other);

private:
    ModelConfig cfg_;
    ad::ParamStore store_;
    Branch img_;
    Branch txt_;
    BridgeSet bridges_;
    std::optional<FusionModule> fusion_;
};

/// A single branch with its own store, as trained in the first stage.
class BranchModel {
public:
    BranchModel(const ModelConfig& config, Modality modality, Rng& init);

    const ModelConfig& config() const { return cfg_; }
    const Branch& branch() const { return branch_; }
    ad::ParamStore& params() { return store_; }
    const ad::ParamStore& params() const { return store_; }

private:
    ModelConfig cfg_;
    ad::ParamStore store_;
    Branch branch_;
};

/// Evaluates a graph-free velocity [G,G,G,4] for sampling.
Tensor branch_velocity(const BranchModel& model, const Tensor& latent, double t, const Condition& cond);
Tensor bundle_velocity(const Bundle& bundle, const Tensor& latent, double t, const ConditionInputs& inputs,
                       Regime regime, FusionKind strategy);

/// Samples every parameter of a store from N(0, std^2), skipping names that contain `skip`.
void randomize(ad::ParamStore& store, Rng& rng, double std, std::string_view skip = {});

}  // namespace biflow::dual
