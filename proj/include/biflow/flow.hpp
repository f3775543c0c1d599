// SPDX-License-Identifier: Apache-2.0
//
// Rectified flow on the linear path z_t = t * noise + (1 - t) * data: noise
// sits at t = 1, data at t = 0, the regression target is noise - data and the
// sampler integrates from t = 1 down to t = 0 with explicit Euler steps.
#pragma once

#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "biflow/autodiff.hpp"
#include "biflow/rng.hpp"
#include "biflow/tensor.hpp"

namespace biflow {

/// Which conditions are visible to the model.
enum class Regime : std::uint8_t { uncond, text_only, image_only, joint };

inline constexpr std::array<Regime, 4> kAllRegimes = {Regime::uncond, Regime::text_only, Regime::image_only,
                                                      Regime::joint};

std::string_view regime_name(Regime r);
Regime parse_regime(std::string_view name);
inline bool keeps_image(Regime r) { return r == Regime::image_only || r == Regime::joint; }
inline bool keeps_text(Regime r) { return r == Regime::text_only || r == Regime::joint; }
inline Regime regime_from(bool keep_image, bool keep_text) {
    if (keep_image && keep_text) return Regime::joint;
    if (keep_image) return Regime::image_only;
    if (keep_text) return Regime::text_only;
    return Regime::uncond;
}

}  // namespace biflow

namespace biflow::flow {

/// 1 = t_0 > t_1 > ... > t_K = 0.
class FlowSchedule {
public:
    explicit FlowSchedule(std::vector<double> times);
    static FlowSchedule uniform(int steps);

    int steps() const { return static_cast<int>(times_.size()) - 1; }
    double operator[](std::size_t k) const { return times_[k]; }
    const std::vector<double>& times() const { return times_; }

private:
    std::vector<double> times_;
};

struct GuidanceConfig {
    double scale = 3.0;
};

enum class TimeSampling : std::uint8_t { uniform, logit_normal };

Tensor interpolate(const Tensor& z_data, const Tensor& noise, double t);
Tensor velocity_target(const Tensor& z_data, const Tensor& noise);

/// z - (t_k - t_next) * v; requires t_k > t_next.
Tensor euler_step(const Tensor& z, double t_k, double t_next, const Tensor& v);

/// v_uncond + s * (v_cond - v_uncond); s = 1 and s = 0 return their operand unchanged.
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double scale);

Tensor standard_normal(const Shape& shape, Rng& rng);

using VelocityOracle = std::function<Tensor(const Tensor& z, double t, Regime regime)>;

/// Draws z_{t_0} ~ N(0, I) from rng and applies K guided Euler steps.
/// When `trajectory` is given it receives z_{t_0} ... z_{t_K}.
Tensor sample(const VelocityOracle& oracle, const FlowSchedule& schedule, const GuidanceConfig& guidance, Rng& rng,
              const Shape& latent_shape, Regime regime, std::vector<Tensor>* trajectory = nullptr);

double sample_time(Rng& rng, TimeSampling mode = TimeSampling::uniform);

/// One training pair: t, noise, the interpolated input and the target.
struct FlowExample {
    double t = 0.0;
    Tensor noise;
    Tensor z_t;
    Tensor target;
};

/// Draws t first, then the noise in element order.
FlowExample make_flow_example(const Tensor& z_data, Rng& rng, TimeSampling mode = TimeSampling::uniform);

/// In-graph velocity model: prediction shaped like z_t.
using GraphModel = std::function<ad::Var(ad::Graph&, const Tensor& z_t, double t)>;

/// Mean over the batch of mse(model(z_t, t), noise - data), one example per
/// element drawn from rng.split(i).
ad::Var flow_loss(ad::Graph& g, const GraphModel& model, const std::vector<Tensor>& batch, const Rng& rng,
                  TimeSampling mode = TimeSampling::uniform);

}  // namespace biflow::flow
