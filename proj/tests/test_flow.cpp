// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "biflow/flow.hpp"
#include "biflow/gradcheck.hpp"
#include "doctest.h"

using namespace biflow;
using namespace biflow::flow;

namespace {

Tensor full(double v) { return Tensor({1}, v); }

// Closed-form optimal velocity for scalar data N(m, s2) against unit noise.
double gaussian_velocity(double z, double t, double m, double s2) {
    const double var = t * t + (1 - t) * (1 - t) * s2;
    return -m + (t - (1 - t) * s2) / var * (z - (1 - t) * m);
}

double endpoint_error(const VelocityOracle& field, int K, std::uint64_t seed, double (*exact)(double)) {
    Rng rng(seed);
    std::vector<Tensor> traj;
    const Tensor z0 = sample(field, FlowSchedule::uniform(K), GuidanceConfig{1.0}, rng, {4}, Regime::joint, &traj);
    double err = 0;
    for (std::size_t i = 0; i < 4; ++i) err += std::abs(z0[i] - exact(traj.front()[i]));
    return err / 4;
}

}  // namespace

TEST_CASE("interpolate endpoints and arithmetic") {
    const Tensor data = Tensor::from({2}, {1.5, -2}), noise = Tensor::from({2}, {0.25, 4});
    CHECK(interpolate(data, noise, 0.0) == data);
    CHECK(interpolate(data, noise, 1.0) == noise);
    CHECK(interpolate(full(0), full(2), 0.25)[0] == 0.5);
    CHECK_THROWS_AS(interpolate(data, full(1), 0.5), ShapeError);
    CHECK_THROWS_AS(interpolate(data, noise, 1.5), std::invalid_argument);
}

TEST_CASE("velocity target is the path derivative") {
    CHECK(velocity_target(full(1), full(3))[0] == 2.0);
    CHECK(velocity_target(full(0.7), full(0.7))[0] == 0.0);
    Rng rng(1);
    const Tensor z = standard_normal({6}, rng), n = standard_normal({6}, rng);
    for (double t : {0.1, 0.4, 0.7})
        for (double h : {0.05, 0.2}) {
            const Tensor d = interpolate(z, n, t + h) - interpolate(z, n, t);
            const Tensor v = velocity_target(z, n);
            for (std::size_t i = 0; i < 6; ++i) CHECK(d[i] == doctest::Approx(h * v[i]).epsilon(1e-12));
        }
}

TEST_CASE("euler step") {
    CHECK(euler_step(full(1.3), 0.5, 0.4, full(0.0))[0] == 1.3);
    CHECK(euler_step(full(1.0), 0.5, 0.4, full(2.0))[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(euler_step(full(1.0), 0.4, 0.4, full(2.0)), std::invalid_argument);
    CHECK_THROWS_AS(euler_step(full(1.0), 0.4, 0.5, full(2.0)), std::invalid_argument);
}

TEST_CASE("constant fields are integrated exactly for any step count") {
    for (int K : {1, 3, 25, 100}) {
        Rng rng(4), copy(4);
        const Tensor v = Tensor::from({3}, {0.5, -1.0, 2.0});
        const Tensor z = sample([&](const Tensor&, double, Regime) { return v; }, FlowSchedule::uniform(K),
                                GuidanceConfig{1.0}, rng, {3}, Regime::joint);
        const Tensor start = standard_normal({3}, copy);
        for (std::size_t i = 0; i < 3; ++i) CHECK(z[i] == doctest::Approx(start[i] - v[i]).epsilon(1e-12));
    }
}

TEST_CASE("cfg combine") {
    const Tensor c = Tensor::from({2}, {2, 0.3}), u = Tensor::from({2}, {0, -0.7});
    CHECK(cfg_combine(c, u, 1.0) == c);
    CHECK(cfg_combine(c, u, 0.0) == u);
    CHECK(cfg_combine(full(2), full(0), 3.0)[0] == 6.0);
    CHECK_THROWS_AS(cfg_combine(c, full(0), 3.0), ShapeError);
    CHECK_THROWS_AS(cfg_combine(c, u, -1.0), std::invalid_argument);
}

TEST_CASE("schedules") {
    const FlowSchedule s = FlowSchedule::uniform(4);
    CHECK(s.times() == std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0});
    CHECK_THROWS(FlowSchedule({1.0, 0.5, 0.5, 0.0}));
    CHECK_THROWS(FlowSchedule({0.9, 0.0}));
    CHECK_THROWS(FlowSchedule({1.0}));
    CHECK_THROWS(FlowSchedule::uniform(0));
}

TEST_CASE("zero oracle returns the initial noise") {
    Rng rng(99), copy(99);
    const Tensor z = sample([](const Tensor& x, double, Regime) { return Tensor(x.shape(), 0.0); },
                            FlowSchedule::uniform(25), GuidanceConfig{3.0}, rng, {2, 3}, Regime::image_only);
    CHECK(z == standard_normal({2, 3}, copy));
}

TEST_CASE("the z/t field lands on zero") {
    // Exact marginal field for data at 0 and unit noise; never evaluated below t = 1/K.
    double min_t = 1.0;
    auto field = [&](const Tensor& z, double t, Regime) {
        min_t = std::min(min_t, t);
        return (1.0 / t) * z;
    };
    Rng rng(3);
    const Tensor z = sample(field, FlowSchedule::uniform(200), GuidanceConfig{1.0}, rng, {50}, Regime::joint);
    CHECK(rms(z) < 0.05);
    CHECK(min_t >= 1.0 / 200 - 1e-15);
}

TEST_CASE("sampling is deterministic") {
    auto field = [](const Tensor& z, double t, Regime r) { return (r == Regime::uncond ? 0.3 : 1.0 + t) * z; };
    Rng a(17), b(17);
    CHECK(sample(field, FlowSchedule::uniform(25), {}, a, {8}, Regime::joint) ==
          sample(field, FlowSchedule::uniform(25), {}, b, {8}, Regime::joint));
}

TEST_CASE("unit guidance with a conditional-only oracle is the raw oracle") {
    int uncond_calls = 0;
    auto cond_only = [&](const Tensor& z, double t, Regime r) {
        if (r == Regime::uncond) ++uncond_calls;
        return (0.5 + t) * z;
    };
    Rng a(5), b(5);
    std::vector<Tensor> ta, tb;
    sample(cond_only, FlowSchedule::uniform(25), GuidanceConfig{1.0}, a, {6}, Regime::text_only, &ta);
    CHECK(uncond_calls == 0);
    // Reference: hand-rolled Euler loop on the raw oracle.
    Tensor z = standard_normal({6}, b);
    tb.push_back(z);
    const FlowSchedule s = FlowSchedule::uniform(25);
    for (int k = 0; k < 25; ++k) {
        z = euler_step(z, s[k], s[k + 1], (0.5 + s[k]) * z);
        tb.push_back(z);
    }
    CHECK(ta == tb);
}

TEST_CASE("guidance combines conditional and unconditional calls") {
    auto field = [](const Tensor& z, double, Regime r) { return Tensor(z.shape(), r == Regime::uncond ? 1.0 : 2.0); };
    Rng a(6), copy(6);
    const Tensor z = sample(field, FlowSchedule::uniform(1), GuidanceConfig{3.0}, a, {2}, Regime::joint);
    const Tensor start = standard_normal({2}, copy);
    CHECK(z[0] == start[0] - 4.0);  // 1 + 3 * (2 - 1)
}

TEST_CASE("a wrong-shaped oracle output names the step") {
    auto bad = [](const Tensor& z, double t, Regime) { return t < 0.5 ? Tensor({1}, 0.0) : Tensor(z.shape(), 0.0); };
    Rng rng(1);
    CHECK_THROWS_WITH_AS(sample(bad, FlowSchedule::uniform(4), {1.0}, rng, {3}, Regime::joint),
                         doctest::Contains("step 3"), ShapeError);
}

TEST_CASE("Euler converges at first order on a non-degenerate field") {
    // dz/dt = z from t = 1 down to 0 gives z(0) = z(1) / e; Euler gives z(1) (1 - 1/K)^K.
    auto field = [](const Tensor& z, double, Regime) { return z; };
    auto exact = [](double z1) { return z1 * std::exp(-1.0); };
    double e8 = 0, e64 = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        e8 += endpoint_error(field, 8, s, exact);
        e64 += endpoint_error(field, 64, s, exact);
    }
    CHECK(e8 > 0);
    CHECK(e64 <= e8 / 4);
    CHECK(e64 >= e8 / 16);  // not second order either
}

TEST_CASE("Gaussian marginals are preserved by the optimal field") {
    for (auto [m, s2] : {std::pair{2.0, 0.25}, std::pair{-1.0, 4.0}, std::pair{0.0, 1.0}}) {
        auto field = [&](const Tensor& z, double t, Regime) {
            Tensor v(z.shape());
            for (std::size_t i = 0; i < z.size(); ++i) v[i] = gaussian_velocity(z[i], t, m, s2);
            return v;
        };
        Rng rng(2024);
        const Tensor x = sample(field, FlowSchedule::uniform(100), GuidanceConfig{1.0}, rng, {10000}, Regime::joint);
        double mean = 0, var = 0;
        for (double v : x.values()) mean += v;
        mean /= 10000;
        for (double v : x.values()) var += (v - mean) * (v - mean);
        var /= 9999;
        CHECK(std::abs(mean - m) <= std::abs(m) * 0.05 + 0.02);
        CHECK(std::abs(var - s2) <= 0.1 * s2);
    }
}

TEST_CASE("flow loss") {
    const std::vector<Tensor> batch = {Tensor({3}, 0.5), Tensor({3}, -1.0)};
    const Rng rng(8);
    SUBCASE("a model that knows the target scores zero") {
        // Constant data c: noise - c = (z_t - c) / t.
        std::size_t idx = 0;
        GraphModel exact = [&](ad::Graph& g, const Tensor& z_t, double t) {
            const double c = batch[idx++][0];
            Tensor v(z_t.shape());
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = (z_t[i] - c) / t;
            return g.constant(v);
        };
        ad::Graph g;
        CHECK(g.value(flow_loss(g, exact, batch, rng)).item() < 1e-20);
    }
    SUBCASE("the zero model scores the mean squared target") {
        GraphModel zero = [](ad::Graph& g, const Tensor& z_t, double) { return g.constant(Tensor(z_t.shape(), 0.0)); };
        ad::Graph g;
        const double loss = g.value(flow_loss(g, zero, batch, rng)).item();
        double expect = 0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Rng r = rng.split(i);
            const FlowExample ex = make_flow_example(batch[i], r);
            double s = 0;
            for (double v : ex.target.values()) s += v * v;
            expect += s / 3.0;
        }
        CHECK(loss == doctest::Approx(expect / 2).epsilon(1e-14));
    }
    SUBCASE("gradient matches finite differences on a tiny model") {
        ad::ParamStore ps;
        Rng init(1);
        ps.add("w", standard_normal({3, 3}, init));
        ps.add("b", standard_normal({3}, init));
        GraphModel model = [&](ad::Graph& g, const Tensor& z_t, double t) {
            ad::Var x = g.constant(z_t.reshaped({1, 3}));
            ad::Var h = g.add(g.matmul(x, g.param(ps, ps.at("w"))), g.param(ps, ps.at("b")));
            return g.scale(g.gelu(h), 1.0 + t);
        };
        auto fn = [&](ad::Graph& g) { return flow_loss(g, model, batch, rng); };
        CHECK(ad::grad_check_params(fn, ps, 1e-5) < 1e-4);
    }
    SUBCASE("empty batches are rejected") {
        ad::Graph g;
        GraphModel zero = [](ad::Graph& gg, const Tensor& z_t, double) { return gg.constant(z_t); };
        CHECK_THROWS(flow_loss(g, zero, {}, rng));
    }
}

TEST_CASE("regime helpers") {
    CHECK(regime_from(true, true) == Regime::joint);
    CHECK(regime_from(true, false) == Regime::image_only);
    CHECK(regime_from(false, true) == Regime::text_only);
    CHECK(regime_from(false, false) == Regime::uncond);
    for (Regime r : kAllRegimes) CHECK(parse_regime(regime_name(r)) == r);
    CHECK_THROWS(parse_regime("both"));
}
