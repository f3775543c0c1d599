// SPDX-License-Identifier: Apache-2.0
#include "biflow/dual_branch.hpp"

#include <cmath>
#include <stdexcept>

namespace biflow::dual {

using ad::Graph;
using ad::ParamStore;
using ad::Var;

std::string_view modality_name(Modality m) { return m == Modality::image ? "image" : "text"; }

Modality parse_modality(std::string_view name) {
    if (name == "image") return Modality::image;
    if (name == "text") return Modality::text;
    throw std::invalid_argument("unknown modality '" + std::string(name) + "'");
}

std::string_view fusion_name(FusionKind f) {
    switch (f) {
        case FusionKind::sim: return "sim";
        case FusionKind::aw: return "aw";
        case FusionKind::at: return "at";
    }
    return "?";
}

FusionKind parse_fusion(std::string_view name) {
    if (name == "sim") return FusionKind::sim;
    if (name == "aw") return FusionKind::aw;
    if (name == "at") return FusionKind::at;
    throw std::invalid_argument("unknown fusion strategy '" + std::string(name) + "' (expected sim, aw or at)");
}

// ---------------------------------------------------------------- config

std::size_t ModelConfig::tokens() const {
    const auto n = static_cast<std::size_t>(grid / voxel_patch());
    return n * n * n;
}

std::size_t ModelConfig::token_channels() const {
    const auto v = static_cast<std::size_t>(voxel_patch());
    return v * v * v * toy::kChannels;
}

std::size_t ModelConfig::image_tokens() const {
    const auto n = static_cast<std::size_t>(image / image_patch);
    return n * n;
}

std::size_t ModelConfig::patch_dim() const {
    return static_cast<std::size_t>(image_patch) * image_patch * 4;
}

void ModelConfig::validate() const {
    if (grid < 2 || grid % voxel_patch() != 0) throw std::invalid_argument("model.grid must be a positive even number");
    if (image_patch <= 0 || image % image_patch != 0) throw std::invalid_argument("model.image_patch must divide model.image");
    if (depth < 1) throw std::invalid_argument("model.depth must be >= 1");
    if (width < 1 || heads < 1 || width % heads != 0) throw std::invalid_argument("model.width must be a multiple of model.heads");
    if (mlp_ratio < 1) throw std::invalid_argument("model.mlp_ratio must be >= 1");
    if (time_features < 2 || time_features % 2 != 0) throw std::invalid_argument("model.time_features must be even");
}

// ---------------------------------------------------------------- tokens

Tensor patchify(const Tensor& latent) {
    const Shape& s = latent.shape();
    if (s.size() != 4 || s[0] != s[1] || s[1] != s[2] || s[3] != toy::kChannels || s[0] % 2 != 0)
        throw ShapeError("patchify: expected [G,G,G,4] with even G, got " + shape_str(s));
    const std::size_t G = s[0], n = G / 2, C = toy::kChannels;
    Tensor out({n * n * n, 8 * C});
    for (std::size_t bx = 0; bx < n; ++bx)
        for (std::size_t by = 0; by < n; ++by)
            for (std::size_t bz = 0; bz < n; ++bz) {
                double* dst = out.data() + ((bx * n + by) * n + bz) * 8 * C;
                for (std::size_t dx = 0; dx < 2; ++dx)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dz = 0; dz < 2; ++dz)
                            for (std::size_t c = 0; c < C; ++c)
                                *dst++ = latent[(((2 * bx + dx) * G + 2 * by + dy) * G + 2 * bz + dz) * C + c];
            }
    return out;
}

Tensor unpatchify(const Tensor& tokens, int grid) {
    const auto G = static_cast<std::size_t>(grid);
    const std::size_t n = G / 2, C = toy::kChannels;
    if (tokens.size() != G * G * G * C) throw ShapeError("unpatchify: token count does not match grid");
    Tensor out({G, G, G, C});
    for (std::size_t bx = 0; bx < n; ++bx)
        for (std::size_t by = 0; by < n; ++by)
            for (std::size_t bz = 0; bz < n; ++bz) {
                const double* src = tokens.data() + ((bx * n + by) * n + bz) * 8 * C;
                for (std::size_t dx = 0; dx < 2; ++dx)
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dz = 0; dz < 2; ++dz)
                            for (std::size_t c = 0; c < C; ++c)
                                out[(((2 * bx + dx) * G + 2 * by + dy) * G + 2 * bz + dz) * C + c] = *src++;
            }
    return out;
}

Tensor time_features(double t, int count) {
    const int half = count / 2;
    Tensor out({1, static_cast<std::size_t>(count)});
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        const double arg = 1000.0 * t * freq;
        out[static_cast<std::size_t>(i)] = std::cos(arg);
        out[static_cast<std::size_t>(half + i)] = std::sin(arg);
    }
    return out;
}

Condition Condition::from_image(const toy::Image& img, int patch) { return from_patches(toy::image_patches(img, patch)); }

Condition Condition::from_patches(Tensor patches) {
    Condition c;
    c.kind = Kind::image;
    c.patches = std::move(patches);
    return c;
}

Condition Condition::from_text(const std::array<std::int32_t, toy::kTextTokens>& ids) {
    Condition c;
    c.kind = Kind::text;
    c.ids = ids;
    return c;
}

// ---------------------------------------------------------------- helpers

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double std) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = std * rng.normal();
    return t;
}

Tensor linear_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    return normal_tensor({fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

// Broadcast a [1, W] row across n rows by multiplying with a ones column.
Var expand_rows(Graph& g, Var row, std::size_t n) { return g.matmul(g.constant(Tensor({n, 1}, 1.0)), row); }

// x * (1 + scale) + shift, all [N, D].
Var modulate(Graph& g, Var x, Var shift, Var scale) { return g.add(g.add(x, g.mul(x, scale)), shift); }

Var linear(Graph& g, Var x, Var w, Var b) { return g.add(g.matmul(x, w), b); }

}  // namespace

// ---------------------------------------------------------------- Branch

Branch::Branch(const ModelConfig& config, Modality modality, std::string prefix, ParamStore& store, Rng& init)
    : cfg_(config), modality_(modality), prefix_(std::move(prefix)) {
    cfg_.validate();
    const auto D = static_cast<std::size_t>(cfg_.width);
    const auto F = static_cast<std::size_t>(cfg_.time_features);
    const auto H = D * static_cast<std::size_t>(cfg_.mlp_ratio);
    auto add = [&](const std::string& local, Tensor value) {
        store.add(prefix_ + local, std::move(value));
        names_.push_back(local);
    };
    add("latent_in.w", linear_init(cfg_.token_channels(), D, init));
    add("latent_in.b", Tensor({D}));
    add("latent_pos", normal_tensor({cfg_.tokens(), D}, init, 0.02));
    add("time.w1", linear_init(F, D, init));
    add("time.b1", Tensor({D}));
    add("time.w2", linear_init(D, D, init));
    add("time.b2", Tensor({D}));
    if (modality_ == Modality::image) {
        add("cond.w", linear_init(cfg_.patch_dim(), D, init));
        add("cond.b", Tensor({D}));
        add("cond.pos", normal_tensor({cfg_.image_tokens(), D}, init, 0.02));
    } else {
        add("cond.table", normal_tensor({static_cast<std::size_t>(toy::kVocabSize), D}, init, 1.0));
        add("cond.pos", normal_tensor({static_cast<std::size_t>(toy::kTextTokens), D}, init, 0.02));
    }
    add("cond.null", normal_tensor({1, D}, init, 1.0));
    for (int i = 0; i < cfg_.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i) + ".";
        add(b + "mod.w", Tensor({D, 6 * D}));
        add(b + "mod.b", Tensor({6 * D}));
        add(b + "attn.qkv.w", linear_init(D, 3 * D, init));
        add(b + "attn.qkv.b", Tensor({3 * D}));
        add(b + "attn.out.w", linear_init(D, D, init));
        add(b + "attn.out.b", Tensor({D}));
        add(b + "xattn.q.w", linear_init(D, D, init));
        add(b + "xattn.q.b", Tensor({D}));
        add(b + "xattn.kv.w", linear_init(D, 2 * D, init));
        add(b + "xattn.kv.b", Tensor({2 * D}));
        add(b + "xattn.out.w", linear_init(D, D, init));
        add(b + "xattn.out.b", Tensor({D}));
        add(b + "mlp.w1", linear_init(D, H, init));
        add(b + "mlp.b1", Tensor({H}));
        add(b + "mlp.w2", linear_init(H, D, init));
        add(b + "mlp.b2", Tensor({D}));
    }
    add("head.mod.w", Tensor({D, D}));
    add("head.mod.b", Tensor({D}));
    add("head.w", normal_tensor({D, cfg_.token_channels()}, init, 0.02));
    add("head.b", Tensor({cfg_.token_channels()}));
}

Var Branch::p(Graph& g, const ParamStore& ps, const std::string& local) const {
    return g.param(ps, ps.at(prefix_ + local));
}

Var Branch::attention(Graph& g, Var q, Var k, Var v) const {
    const auto heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t dh = static_cast<std::size_t>(cfg_.width) / heads;
    const std::vector<std::size_t> widths(heads, dh);
    auto qs = g.split(q, widths);
    auto ks = g.split(k, widths);
    auto vs = g.split(v, widths);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var scores = g.scale(g.matmul(qs[h], ks[h], /*transpose_b=*/true), inv);
        outs.push_back(g.matmul(g.softmax(scores), vs[h]));
    }
    return heads == 1 ? outs[0] : g.concat(outs);
}

Var Branch::encode(Graph& g, const ParamStore& ps, const Condition& cond) const {
    Var tokens;
    switch (cond.kind) {
        case Condition::Kind::null:
            tokens = p(g, ps, "cond.null");
            break;
        case Condition::Kind::image:
            if (modality_ != Modality::image) throw std::invalid_argument("text branch received an image condition");
            if (cond.patches.shape() != Shape{cfg_.image_tokens(), cfg_.patch_dim()})
                throw ShapeError("image condition has shape " + shape_str(cond.patches.shape()));
            tokens = g.add(linear(g, g.constant(cond.patches), p(g, ps, "cond.w"), p(g, ps, "cond.b")),
                           p(g, ps, "cond.pos"));
            break;
        case Condition::Kind::text:
            if (modality_ != Modality::text) throw std::invalid_argument("image branch received a text condition");
            tokens = g.add(g.embed_lookup(p(g, ps, "cond.table"), std::vector<std::int32_t>(cond.ids.begin(), cond.ids.end())),
                           p(g, ps, "cond.pos"));
            break;
    }
    return g.layer_norm(tokens);
}

Var Branch::embed(Graph& g, const ParamStore& ps, const Tensor& tokens) const {
    if (tokens.shape() != Shape{cfg_.tokens(), cfg_.token_channels()})
        throw ShapeError("latent tokens have shape " + shape_str(tokens.shape()));
    return g.add(linear(g, g.constant(tokens), p(g, ps, "latent_in.w"), p(g, ps, "latent_in.b")),
                 p(g, ps, "latent_pos"));
}

Var Branch::time_embedding(Graph& g, const ParamStore& ps, double t) const {
    Var f = g.constant(time_features(t, cfg_.time_features));
    Var h = g.gelu(linear(g, f, p(g, ps, "time.w1"), p(g, ps, "time.b1")));
    return g.gelu(linear(g, h, p(g, ps, "time.w2"), p(g, ps, "time.b2")));
}

Var Branch::block(Graph& g, const ParamStore& ps, int index, Var h, Var temb, Var cond) const {
    const std::string b = "blocks." + std::to_string(index) + ".";
    const auto D = static_cast<std::size_t>(cfg_.width);
    const std::size_t N = g.shape(h)[0];
    Var mods = expand_rows(g, linear(g, temb, p(g, ps, b + "mod.w"), p(g, ps, b + "mod.b")), N);
    auto m = g.split(mods, std::vector<std::size_t>(6, D));

    Var a = modulate(g, g.layer_norm(h), m[0], m[1]);
    auto qkv = g.split(linear(g, a, p(g, ps, b + "attn.qkv.w"), p(g, ps, b + "attn.qkv.b")), {D, D, D});
    Var sa = attention(g, qkv[0], qkv[1], qkv[2]);
    h = g.add(h, linear(g, sa, p(g, ps, b + "attn.out.w"), p(g, ps, b + "attn.out.b")));

    Var c = modulate(g, g.layer_norm(h), m[2], m[3]);
    Var q = linear(g, c, p(g, ps, b + "xattn.q.w"), p(g, ps, b + "xattn.q.b"));
    auto kv = g.split(linear(g, cond, p(g, ps, b + "xattn.kv.w"), p(g, ps, b + "xattn.kv.b")), {D, D});
    Var xa = attention(g, q, kv[0], kv[1]);
    h = g.add(h, linear(g, xa, p(g, ps, b + "xattn.out.w"), p(g, ps, b + "xattn.out.b")));

    Var e = modulate(g, g.layer_norm(h), m[4], m[5]);
    Var mlp = g.gelu(linear(g, e, p(g, ps, b + "mlp.w1"), p(g, ps, b + "mlp.b1")));
    return g.add(h, linear(g, mlp, p(g, ps, b + "mlp.w2"), p(g, ps, b + "mlp.b2")));
}

Var Branch::head(Graph& g, const ParamStore& ps, Var f, Var temb) const {
    const std::size_t N = g.shape(f)[0];
    Var scale = expand_rows(g, linear(g, temb, p(g, ps, "head.mod.w"), p(g, ps, "head.mod.b")), N);
    Var n = g.layer_norm(f);
    Var y = g.add(n, g.mul(n, scale));
    return linear(g, y, p(g, ps, "head.w"), p(g, ps, "head.b"));
}

BranchOutput Branch::forward(Graph& g, const ParamStore& ps, const Tensor& tokens, double t,
                             const Condition& cond) const {
    Var cond_tokens = encode(g, ps, cond);
    Var temb = time_embedding(g, ps, t);
    Var h = embed(g, ps, tokens);
    BranchOutput out;
    for (int i = 0; i < cfg_.depth; ++i) {
        h = block(g, ps, i, h, temb, cond_tokens);
        out.features.push_back(h);
    }
    out.velocity = head(g, ps, h, temb);
    return out;
}

// ---------------------------------------------------------------- bridges

BridgeSet::BridgeSet(const ModelConfig& config, std::string prefix, ParamStore& store)
    : depth_(config.depth), prefix_(std::move(prefix)) {
    const auto D = static_cast<std::size_t>(config.width);
    for (int i = 0; i < depth_; ++i) {
        store.add(name(i, true), Tensor({D, D}, 0.0));
        store.add(name(i, false), Tensor({D, D}, 0.0));
    }
}

std::string BridgeSet::name(int block, bool to_image) const {
    return prefix_ + std::to_string(block) + (to_image ? ".txt_to_img" : ".img_to_txt");
}

Var BridgeSet::txt_to_img(Graph& g, const ParamStore& ps, int block) const {
    return g.param(ps, ps.at(name(block, true)));
}

Var BridgeSet::img_to_txt(Graph& g, const ParamStore& ps, int block) const {
    return g.param(ps, ps.at(name(block, false)));
}

// ---------------------------------------------------------------- fusion

FusionModule::FusionModule(const ModelConfig& config, FusionKind kind, bool residual, std::string prefix,
                           ParamStore& store, Rng& init)
    : cfg_(config), kind_(kind), residual_(residual), prefix_(std::move(prefix)) {
    if (kind == FusionKind::sim) throw std::invalid_argument("Sim fusion has no module");
    const auto D = static_cast<std::size_t>(cfg_.width);
    const auto F = static_cast<std::size_t>(cfg_.time_features);
    store.add(prefix_ + "time.w", Tensor({F, 4 * D}, 0.0));
    store.add(prefix_ + "time.b", Tensor({4 * D}, 0.0));
    for (const char* which : {"txt", "img"}) {
        const std::string b = prefix_ + which + ".";
        store.add(b + "q.w", linear_init(2 * D, D, init));
        store.add(b + "q.b", Tensor({D}));
        store.add(b + "kv.w", linear_init(D, 2 * D, init));
        store.add(b + "kv.b", Tensor({2 * D}));
        store.add(b + "out.w", linear_init(D, 2 * D, init));
        store.add(b + "out.b", Tensor({2 * D}));
    }
    if (kind == FusionKind::aw) {
        store.add(prefix_ + "aw.w", Tensor({2 * D, 1}, 0.0));
        store.add(prefix_ + "aw.b", Tensor({1}, 0.0));
    } else {
        store.add(prefix_ + "at.w", Tensor({2 * D, 2 * D}, 0.0));
        store.add(prefix_ + "at.b", Tensor({2 * D}, 0.0));
    }
}

Var FusionModule::p(Graph& g, const ParamStore& ps, const std::string& local) const {
    return g.param(ps, ps.at(prefix_ + local));
}

Var FusionModule::cross(Graph& g, const ParamStore& ps, const std::string& which, Var h, Var cond) const {
    const auto D = static_cast<std::size_t>(cfg_.width);
    const auto heads = static_cast<std::size_t>(cfg_.heads);
    const std::size_t dh = D / heads;
    Var q = linear(g, h, p(g, ps, which + ".q.w"), p(g, ps, which + ".q.b"));
    auto kv = g.split(linear(g, cond, p(g, ps, which + ".kv.w"), p(g, ps, which + ".kv.b")), {D, D});
    const std::vector<std::size_t> widths(heads, dh);
    auto qs = g.split(q, widths);
    auto ks = g.split(kv[0], widths);
    auto vs = g.split(kv[1], widths);
    std::vector<Var> outs;
    for (std::size_t i = 0; i < heads; ++i) {
        Var s = g.scale(g.matmul(qs[i], ks[i], true), 1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(g.matmul(g.softmax(s), vs[i]));
    }
    Var a = heads == 1 ? outs[0] : g.concat(outs);
    return linear(g, a, p(g, ps, which + ".out.w"), p(g, ps, which + ".out.b"));
}

Var FusionModule::mix(Graph& g, const ParamStore& ps, Var f_txt, Var f_img, double t, Var txt_cond,
                      Var img_cond) const {
    const auto D = static_cast<std::size_t>(cfg_.width);
    Var x = g.concat({f_txt, f_img});
    const std::size_t N = g.shape(x)[0];
    Var tf = g.constant(time_features(t, cfg_.time_features));
    auto m = g.split(expand_rows(g, linear(g, tf, p(g, ps, "time.w"), p(g, ps, "time.b")), N), {2 * D, 2 * D});
    Var h = modulate(g, g.layer_norm(x), m[0], m[1]);
    Var y = g.add(h, cross(g, ps, "txt", h, txt_cond));
    return g.add(y, cross(g, ps, "img", h, img_cond));
}

Var FusionModule::weights(Graph& g, const ParamStore& ps, Var mixed) const {
    return g.sigmoid(linear(g, mixed, p(g, ps, "aw.w"), p(g, ps, "aw.b")));
}

Var FusionModule::features(Graph& g, const ParamStore& ps, Var mixed, Var f_txt, Var f_img) const {
    Var out = linear(g, mixed, p(g, ps, "at.w"), p(g, ps, "at.b"));
    if (residual_) out = g.add(g.concat({f_txt, f_img}), out);
    return out;
}

Var fuse_sim(Graph& g, Var v_txt, Var v_img) {
    if (g.shape(v_txt) != g.shape(v_img))
        throw ShapeError("fuse_sim: shape mismatch " + shape_str(g.shape(v_txt)) + " vs " + shape_str(g.shape(v_img)));
    return g.scale(g.add(v_txt, v_img), 0.5);
}

Var fuse_weighted(Graph& g, Var w, Var v_txt, Var v_img) {
    const Shape& s = g.shape(v_txt);
    if (s != g.shape(v_img) || s.size() != 2 || g.shape(w) != Shape{s[0], 1})
        throw ShapeError("fuse_aw: shapes " + shape_str(g.shape(w)) + ", " + shape_str(s) + ", " +
                         shape_str(g.shape(v_img)));
    Var wide = g.matmul(w, g.constant(Tensor({1, s[1]}, 1.0)));
    Var rest = g.add(g.scale(wide, -1.0), g.constant(Tensor(s, 1.0)));
    return g.add(g.mul(wide, v_txt), g.mul(rest, v_img));
}

// ---------------------------------------------------------------- Bundle

Bundle::Bundle(const ModelConfig& config, Rng& init, std::optional<FusionKind> fusion, bool at_residual,
               Modality second_branch)
    : cfg_(config),
      img_(config, Modality::image, "img.", store_, init),
      txt_(config, second_branch, "txt.", store_, init),
      bridges_(config, "bridge.", store_) {
    if (fusion && *fusion != FusionKind::sim) fusion_.emplace(config, *fusion, at_residual, "fusion.", store_, init);
}

Condition Bundle::branch_condition(const Branch& b, const ConditionInputs& inputs, Regime regime) const {
    if (b.modality() == Modality::image) {
        if (!keeps_image(regime)) return Condition::null();
        if (!inputs.image_patches) throw std::invalid_argument(std::string(regime_name(regime)) + " regime requires an image condition");
        return Condition::from_patches(*inputs.image_patches);
    }
    if (!keeps_text(regime)) return Condition::null();
    if (!inputs.text_ids) throw std::invalid_argument(std::string(regime_name(regime)) + " regime requires a text condition");
    return Condition::from_text(*inputs.text_ids);
}

BridgedOutput Bundle::bridged_forward(Graph& g, const Tensor& tokens, double t, const Condition& img_cond,
                                      const Condition& txt_cond) const {
    if (img_.config().depth != txt_.config().depth || bridges_.depth() != img_.config().depth)
        throw std::invalid_argument("bridged_forward: branch depths differ");
    const ParamStore& ps = store_;
    BridgedOutput out;
    out.cond_img = img_.encode(g, ps, img_cond);
    out.cond_txt = txt_.encode(g, ps, txt_cond);
    out.temb_img = img_.time_embedding(g, ps, t);
    out.temb_txt = txt_.time_embedding(g, ps, t);
    Var h_img = img_.embed(g, ps, tokens);
    Var h_txt = txt_.embed(g, ps, tokens);
    for (int i = 0; i < cfg_.depth; ++i) {
        Var f_img = img_.block(g, ps, i, h_img, out.temb_img, out.cond_img);
        Var f_txt = txt_.block(g, ps, i, h_txt, out.temb_txt, out.cond_txt);
        h_img = g.add(f_img, g.matmul(f_txt, bridges_.txt_to_img(g, ps, i)));
        h_txt = g.add(f_txt, g.matmul(f_img, bridges_.img_to_txt(g, ps, i)));
    }
    out.f_img = h_img;
    out.f_txt = h_txt;
    out.v_img = img_.head(g, ps, h_img, out.temb_img);
    out.v_txt = txt_.head(g, ps, h_txt, out.temb_txt);
    return out;
}

Var Bundle::velocity(Graph& g, const Tensor& tokens, double t, const ConditionInputs& inputs, Regime regime,
                     FusionKind strategy) const {
    BridgedOutput b = bridged_forward(g, tokens, t, branch_condition(img_, inputs, regime),
                                      branch_condition(txt_, inputs, regime));
    if (strategy == FusionKind::sim) return fuse_sim(g, b.v_txt, b.v_img);
    if (!fusion_ || fusion_->kind() != strategy)
        throw std::invalid_argument("bundle has no " + std::string(fusion_name(strategy)) + " fusion module");
    Var mixed = fusion_->mix(g, store_, b.f_txt, b.f_img, t, b.cond_txt, b.cond_img);
    if (strategy == FusionKind::aw) return fuse_weighted(g, fusion_->weights(g, store_, mixed), b.v_txt, b.v_img);
    const auto D = static_cast<std::size_t>(cfg_.width);
    auto halves = g.split(fusion_->features(g, store_, mixed, b.f_txt, b.f_img), {D, D});
    return fuse_sim(g, txt_.head(g, store_, halves[0], b.temb_txt), img_.head(g, store_, halves[1], b.temb_img));
}

void Bundle::load_branch(const Branch& source, const ParamStore& source_store, Modality slot) {
    const Branch& target = slot == Modality::image ? img_ : txt_;
    if (source.modality() != target.modality() || !(source.config() == target.config()))
        throw std::invalid_argument("load_branch: architecture or modality mismatch");
    for (const auto& local : source.local_names())
        store_.value(store_.at(target.prefix() + local)) = source_store.value(source_store.at(source.prefix() + local));
}

std::size_t Bundle::copy_matching(const ParamStore& other) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < other.size(); ++i) {
        auto id = store_.find(other.name(other.id(i)));
        if (!id) continue;
        if (store_.value(*id).shape() != other.value(other.id(i)).shape())
            throw ShapeError("parameter " + other.name(other.id(i)) + " has a different shape");
        store_.value(*id) = other.value(other.id(i));
        ++n;
    }
    return n;
}

BranchModel::BranchModel(const ModelConfig& config, Modality modality, Rng& init)
    : cfg_(config), branch_(config, modality, "", store_, init) {}

Tensor branch_velocity(const BranchModel& model, const Tensor& latent, double t, const Condition& cond) {
    Graph g;
    BranchOutput out = model.branch().forward(g, model.params(), patchify(latent), t, cond);
    return unpatchify(g.value(out.velocity), model.config().grid);
}

Tensor bundle_velocity(const Bundle& bundle, const Tensor& latent, double t, const ConditionInputs& inputs,
                       Regime regime, FusionKind strategy) {
    Graph g;
    Var v = bundle.velocity(g, patchify(latent), t, inputs, regime, strategy);
    return unpatchify(g.value(v), bundle.config().grid);
}

void randomize(ParamStore& store, Rng& rng, double std, std::string_view skip) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto id = store.id(i);
        if (!skip.empty() && store.name(id).find(skip) != std::string::npos) continue;
        for (auto& v : store.value(id).values()) v = std * rng.normal();
    }
}

}  // namespace biflow::dual
