// SPDX-License-Identifier: Apache-2.0
#include "biflow/flow.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace biflow {

std::string_view regime_name(Regime r) {
    switch (r) {
        case Regime::uncond: return "uncond";
        case Regime::text_only: return "text";
        case Regime::image_only: return "image";
        case Regime::joint: return "joint";
    }
    return "?";
}

Regime parse_regime(std::string_view name) {
    for (Regime r : kAllRegimes)
        if (regime_name(r) == name) return r;
    throw std::invalid_argument("unknown regime '" + std::string(name) + "' (expected text, image, joint or uncond)");
}

}  // namespace biflow

namespace biflow::flow {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

FlowSchedule::FlowSchedule(std::vector<double> times) : times_(std::move(times)) {
    if (times_.size() < 2) throw std::invalid_argument("schedule needs at least one step");
    if (times_.front() != 1.0 || times_.back() != 0.0) throw std::invalid_argument("schedule must run from 1 to 0");
    for (std::size_t k = 1; k < times_.size(); ++k)
        if (!(times_[k] < times_[k - 1])) throw std::invalid_argument("schedule must be strictly decreasing");
}

FlowSchedule FlowSchedule::uniform(int steps) {
    if (steps < 1) throw std::invalid_argument("schedule needs at least one step");
    std::vector<double> t(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) t[static_cast<std::size_t>(k)] = static_cast<double>(steps - k) / steps;
    return FlowSchedule(std::move(t));
}

Tensor interpolate(const Tensor& z_data, const Tensor& noise, double t) {
    require_same(z_data, noise, "interpolate");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
    Tensor out(z_data.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t * noise[i] + (1.0 - t) * z_data[i];
    return out;
}

Tensor velocity_target(const Tensor& z_data, const Tensor& noise) {
    require_same(z_data, noise, "velocity_target");
    return noise - z_data;
}

Tensor euler_step(const Tensor& z, double t_k, double t_next, const Tensor& v) {
    require_same(z, v, "euler_step");
    if (!(t_k > t_next)) throw std::invalid_argument("euler_step: times must descend");
    const double h = t_k - t_next;
    Tensor out(z.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i] - h * v[i];
    return out;
}

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale) {
    require_same(v_cond, v_uncond, "cfg_combine");
    if (!std::isfinite(scale) || scale < 0.0) throw std::invalid_argument("guidance scale must be finite and >= 0");
    if (scale == 1.0) return v_cond;
    if (scale == 0.0) return v_uncond;
    Tensor out(v_cond.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v_uncond[i] + scale * (v_cond[i] - v_uncond[i]);
    return out;
}

Tensor standard_normal(const Shape& shape, Rng& rng) {
    Tensor out(shape);
    for (auto& v : out.values()) v = rng.normal();
    return out;
}

Tensor sample(const VelocityOracle& oracle, const FlowSchedule& schedule, const GuidanceConfig& guidance, Rng& rng,
              const Shape& latent_shape, Regime regime, std::vector<Tensor>* trajectory) {
    if (!std::isfinite(guidance.scale) || guidance.scale < 0.0)
        throw std::invalid_argument("guidance scale must be finite and >= 0");
    Tensor z = standard_normal(latent_shape, rng);
    if (trajectory) {
        trajectory->clear();
        trajectory->push_back(z);
    }
    // With s == 1 or an unconditional request the guided field equals the
    // conditional one, so the second evaluation is skipped.
    const bool guided = guidance.scale != 1.0 && regime != Regime::uncond;
    for (int k = 0; k < schedule.steps(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        const double t = schedule[ku];
        Tensor v = oracle(z, t, regime);
        if (v.shape() != latent_shape)
            throw ShapeError("sample: oracle returned shape " + shape_str(v.shape()) + " at step " + std::to_string(k));
        if (guided) {
            Tensor vu = oracle(z, t, Regime::uncond);
            if (vu.shape() != latent_shape)
                throw ShapeError("sample: oracle returned shape " + shape_str(vu.shape()) + " at step " +
                                 std::to_string(k));
            v = cfg_combine(v, vu, guidance.scale);
        }
        z = euler_step(z, t, schedule[ku + 1], v);
        if (trajectory) trajectory->push_back(z);
    }
    return z;
}

double sample_time(Rng& rng, TimeSampling mode) {
    if (mode == TimeSampling::uniform) return rng.uniform();
    return 1.0 / (1.0 + std::exp(-rng.normal()));
}

FlowExample make_flow_example(const Tensor& z_data, Rng& rng, TimeSampling mode) {
    FlowExample ex;
    ex.t = sample_time(rng, mode);
    ex.noise = standard_normal(z_data.shape(), rng);
    ex.z_t = interpolate(z_data, ex.noise, ex.t);
    ex.target = velocity_target(z_data, ex.noise);
    return ex;
}

ad::Var flow_loss(ad::Graph& g, const GraphModel& model, const std::vector<Tensor>& batch, const Rng& rng,
                  TimeSampling mode) {
    if (batch.empty()) throw std::invalid_argument("flow_loss: empty batch");
    ad::Var total;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng r = rng.split(i);
        FlowExample ex = make_flow_example(batch[i], r, mode);
        ad::Var pred = model(g, ex.z_t, ex.t);
        ad::Var target = g.constant(ex.target.reshaped(g.shape(pred)));
        ad::Var l = g.mse(pred, target);
        total = total.valid() ? g.add(total, l) : l;
    }
    return g.scale(total, 1.0 / static_cast<double>(batch.size()));
}

}  // namespace biflow::flow
