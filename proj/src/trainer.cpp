// SPDX-License-Identifier: Apache-2.0
#include "biflow/trainer.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace biflow::train {

using ad::Graph;
using ad::Var;

Adam::Adam(const ad::ParamStore& store, AdamConfig config)
    : cfg_(config), m_(store.zeros_like()), v_(store.zeros_like()), trainable_(store.size(), true) {}

void Adam::restrict_to(const ad::ParamStore& store, const std::vector<std::string>& prefixes) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        const std::string& name = store.name(store.id(i));
        bool keep = false;
        for (const auto& p : prefixes) keep = keep || name.starts_with(p);
        trainable_[i] = keep;
    }
}

double Adam::step(ad::ParamStore& store, ad::GradList& grads) {
    if (grads.size() != store.size()) throw std::invalid_argument("optimizer: gradient count differs from parameters");
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].shape() != store.value(store.id(i)).shape())
            throw ShapeError("optimizer: gradient shape mismatch for '" + store.name(store.id(i)) + "'");
        if (!trainable_[i]) continue;
        if (!grads[i].all_finite()) throw NumericalError("non-finite gradient for '" + store.name(store.id(i)) + "'");
        for (double g : grads[i].values()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("gradient norm overflow");
    const double clip = cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!trainable_[i]) continue;
        Tensor& p = store.value(store.id(i));
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double g = clip == 1.0 ? grads[i][k] : grads[i][k] * clip;
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
            p[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
        }
        if (!p.all_finite()) throw NumericalError("non-finite parameter '" + store.name(store.id(i)) + "' after update");
    }
    return norm;
}

void Adam::restore(ckpt::ResumeState state) {
    if (state.m.size() != m_.size() || state.v.size() != v_.size())
        throw ckpt::CheckpointError("optimizer state does not match the model");
    for (std::size_t i = 0; i < m_.size(); ++i)
        if (state.m[i].shape() != m_[i].shape() || state.v[i].shape() != v_[i].shape())
            throw ckpt::CheckpointError("optimizer state shape mismatch");
    t_ = state.step;
    m_ = std::move(state.m);
    v_ = std::move(state.v);
}

Regime sample_regime(Rng& rng, double p) {
    const bool keep_image = !rng.bernoulli(p);
    const bool keep_text = !rng.bernoulli(p);
    return regime_from(keep_image, keep_text);
}

std::string_view stage_name(Stage s) {
    switch (s) {
        case Stage::pretrain_img: return "pretrain_img";
        case Stage::pretrain_txt: return "pretrain_txt";
        case Stage::joint: return "joint";
    }
    return "?";
}

Stage parse_stage(std::string_view name) {
    for (Stage s : {Stage::pretrain_img, Stage::pretrain_txt, Stage::joint})
        if (stage_name(s) == name) return s;
    throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("train.steps must be >= 0");
    if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
    if (!(dropout >= 0.0 && dropout <= 1.0)) throw std::invalid_argument("train.dropout must lie in [0, 1]");
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw std::invalid_argument("train.lr must be finite and >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        throw std::invalid_argument("optimizer betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) throw std::invalid_argument("optimizer eps must be > 0");
    if (log_every < 1) throw std::invalid_argument("train.log_every must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every must be >= 0");
    if (threads < 0) throw std::invalid_argument("train.threads must be >= 0");
}

Draw draw_example(const Dataset& data, Range range, const dual::ModelConfig& model, const TrainConfig& config,
                  std::uint64_t step, std::size_t index) {
    if (range[1] <= range[0] || range[1] > data.records.size()) throw DataError("training split is empty");
    Rng rng = Rng(config.seed).split(step).split(index);
    Draw d;
    d.asset = range[0] + static_cast<std::size_t>(rng.below(range[1] - range[0]));
    d.regime = sample_regime(rng, config.dropout);
    d.view = toy::kAllViews[rng.below(toy::kAllViews.size())];
    const AssetRecord& rec = data.records[d.asset];
    const Tensor tokens = dual::patchify(toy::asset_to_latent(rec.grid));
    d.flow = flow::make_flow_example(tokens, rng, config.time);
    d.inputs.image_patches = toy::image_patches(rec.view(d.view), model.image_patch);
    if (rec.has_text()) d.inputs.text_ids = rec.tokens;
    return d;
}

namespace {

constexpr std::size_t kChunk = 4;

struct BatchResult {
    ad::GradList grads;
    std::vector<double> losses;
};

// Per-sample graphs; gradients are summed within fixed chunks of kChunk
// samples, then across chunks in order, so the result does not depend on
// how many threads did the work.
template <class LossFn>
BatchResult batch_gradient(const ad::ParamStore& store, std::size_t batch, int threads, const LossFn& loss_fn) {
    const std::size_t chunks = (batch + kChunk - 1) / kChunk;
    std::vector<ad::GradList> partial(chunks);
    BatchResult out;
    out.losses.assign(batch, 0.0);
    const double inv = 1.0 / static_cast<double>(batch);
    auto work = [&](std::size_t c) {
        ad::GradList acc = store.zeros_like();
        for (std::size_t i = c * kChunk; i < std::min(batch, (c + 1) * kChunk); ++i) {
            Graph g;
            Var l = loss_fn(g, i);
            out.losses[i] = g.value(l).item();
            g.backward(g.scale(l, inv));
            g.add_param_grads(store, acc);
        }
        partial[c] = std::move(acc);
    };
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
    workers = std::clamp<std::size_t>(workers, 1, chunks);
    if (workers == 1) {
        for (std::size_t c = 0; c < chunks; ++c) work(c);
    } else {
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t c = w; c < chunks; c += workers) work(c);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }
    out.grads = std::move(partial[0]);
    for (std::size_t c = 1; c < chunks; ++c)
        for (std::size_t p = 0; p < out.grads.size(); ++p) {
            double* dst = out.grads[p].data();
            const double* src = partial[c][p].data();
            for (std::size_t k = 0; k < out.grads[p].size(); ++k) dst[k] += src[k];
        }
    return out;
}

template <class LossFn>
std::vector<StepLog> run_loop(ad::ParamStore& store, const dual::ModelConfig& model, const Dataset& data, Range range,
                              const TrainConfig& config, Adam& adam, const Hooks& hooks, const LossFn& loss_fn) {
    config.validate();
    std::vector<StepLog> logs;
    const auto start = std::chrono::steady_clock::now();
    const auto B = static_cast<std::size_t>(config.batch);
    for (std::uint64_t step = adam.steps(); step < static_cast<std::uint64_t>(config.steps); ++step) {
        std::vector<Draw> draws;
        draws.reserve(B);
        for (std::size_t i = 0; i < B; ++i) draws.push_back(draw_example(data, range, model, config, step, i));
        StepLog log;
        log.step = step;
        for (const auto& d : draws) ++log.regime_counts[static_cast<std::size_t>(d.regime)];
        try {
            BatchResult r =
                batch_gradient(store, B, config.threads, [&](Graph& g, std::size_t i) { return loss_fn(g, draws[i]); });
            double total = 0.0;
            for (double l : r.losses) total += l;
            log.loss = total / static_cast<double>(B);
            if (!std::isfinite(log.loss)) throw NumericalError("non-finite loss");
            log.grad_norm = adam.step(store, r.grads);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step));
        }
        log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        logs.push_back(log);
        if (hooks.on_step) hooks.on_step(log);
        if (config.checkpoint_every > 0 && (step + 1) % static_cast<std::uint64_t>(config.checkpoint_every) == 0 &&
            step + 1 < static_cast<std::uint64_t>(config.steps) && hooks.on_checkpoint)
            hooks.on_checkpoint(step + 1);
    }
    return logs;
}

}  // namespace

std::vector<StepLog> pretrain_branch(dual::BranchModel& model, const Dataset& data, Range range,
                                     const TrainConfig& config, Adam& adam, const Hooks& hooks) {
    const dual::Branch& br = model.branch();
    const bool image = br.modality() == dual::Modality::image;
    if (config.stage != (image ? Stage::pretrain_img : Stage::pretrain_txt))
        throw std::invalid_argument("stage " + std::string(stage_name(config.stage)) + " does not match a " +
                                    std::string(dual::modality_name(br.modality())) + " branch");
    const ad::ParamStore& ps = model.params();
    return run_loop(model.params(), model.config(), data, range, config, adam, hooks, [&](Graph& g, const Draw& d) {
        dual::Condition cond = dual::Condition::null();
        if (image && keeps_image(d.regime)) cond = dual::Condition::from_patches(*d.inputs.image_patches);
        if (!image && keeps_text(d.regime)) {
            if (!d.inputs.text_ids) throw DataError("asset " + std::to_string(d.asset) + " has no text tokens");
            cond = dual::Condition::from_text(*d.inputs.text_ids);
        }
        Var v = br.forward(g, ps, d.flow.z_t, d.flow.t, cond).velocity;
        return g.mse(v, g.constant(d.flow.target));
    });
}

std::vector<StepLog> joint_finetune(dual::Bundle& bundle, const Dataset& data, Range range, const TrainConfig& config,
                                    Adam& adam, const Hooks& hooks) {
    if (config.stage != Stage::joint) throw std::invalid_argument("joint_finetune needs the joint stage");
    if (config.freeze_branches) adam.restrict_to(bundle.params(), {"bridge.", "fusion."});
    const dual::Bundle& b = bundle;
    return run_loop(bundle.params(), bundle.config(), data, range, config, adam, hooks, [&](Graph& g, const Draw& d) {
        Var v = b.velocity(g, d.flow.z_t, d.flow.t, d.inputs, d.regime, config.strategy);
        return g.mse(v, g.constant(d.flow.target));
    });
}

Parity handoff_parity(const dual::Bundle& bundle, const dual::BranchModel& image, const dual::BranchModel& text,
                      const Dataset& data, Range range, const TrainConfig& config) {
    Parity out;
    const auto B = static_cast<std::size_t>(config.batch);
    for (std::size_t i = 0; i < B; ++i) {
        const Draw d = draw_example(data, range, bundle.config(), config, 0, i);
        Graph g;
        const Tensor fused = g.value(bundle.velocity(g, d.flow.z_t, d.flow.t, d.inputs, d.regime, dual::FusionKind::sim));
        Graph gi, gt;
        const auto ci = bundle.branch_condition(bundle.image_branch(), d.inputs, d.regime);
        const auto ct = bundle.branch_condition(bundle.text_branch(), d.inputs, d.regime);
        const Tensor vi = gi.value(image.branch().forward(gi, image.params(), d.flow.z_t, d.flow.t, ci).velocity);
        const Tensor vt = gt.value(text.branch().forward(gt, text.params(), d.flow.z_t, d.flow.t, ct).velocity);
        const Tensor mix = 0.5 * (vt + vi);
        out.max_velocity_diff = std::max(out.max_velocity_diff, max_abs_diff(fused, mix));
        double lf = 0.0, lm = 0.0;
        for (std::size_t k = 0; k < mix.size(); ++k) {
            const double ef = fused[k] - d.flow.target[k];
            const double em = mix[k] - d.flow.target[k];
            lf += ef * ef;
            lm += em * em;
        }
        out.fused_loss += lf / static_cast<double>(mix.size());
        out.mixture_loss += lm / static_cast<double>(mix.size());
    }
    out.fused_loss /= static_cast<double>(B);
    out.mixture_loss /= static_cast<double>(B);
    return out;
}

double regime_loss(const dual::Bundle& bundle, const Dataset& data, Range range, const TrainConfig& config,
                   Regime regime, std::size_t count, std::uint64_t seed) {
    TrainConfig probe = config;
    probe.seed = seed;
    double total = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
        const Draw d = draw_example(data, range, bundle.config(), probe, j, 0);
        Graph g;
        Var v = bundle.velocity(g, d.flow.z_t, d.flow.t, d.inputs, regime, config.strategy);
        total += g.value(g.mse(v, g.constant(d.flow.target))).item();
    }
    return total / static_cast<double>(count);
}

}  // namespace biflow::train
