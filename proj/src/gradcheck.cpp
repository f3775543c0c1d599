// SPDX-License-Identifier: Apache-2.0
#include "biflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace biflow::ad {

namespace {

void check_step(double step) {
    if (!(step > 0.0 && step <= 1e-2)) throw std::invalid_argument("grad_check: step must lie in (0, 1e-2]");
}

double scalar_value(const Graph& g, Var out) {
    const Tensor& v = g.value(out);
    if (v.size() != 1) throw ShapeError("grad_check: function must be scalar-valued, got " + shape_str(v.shape()));
    return v[0];
}

double rel_error(double analytic, double central) {
    return std::abs(analytic - central) / std::max({std::abs(analytic), std::abs(central), kGradFloor});
}

}  // namespace

double grad_check(const ScalarFn& fn, const Tensor& point, double step, GraphOptions options) {
    check_step(step);
    Tensor analytic;
    {
        Graph g(options);
        Var x = g.variable(point);
        Var out = fn(g, x);
        scalar_value(g, out);
        g.backward(out);
        analytic = g.grad(x);
    }
    auto eval = [&](const Tensor& p) {
        Graph g(options);
        Var x = g.variable(p);
        return scalar_value(g, fn(g, x));
    };
    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + step;
        const double up = eval(probe);
        probe[i] = point[i] - step;
        const double down = eval(probe);
        probe[i] = point[i];
        worst = std::max(worst, rel_error(analytic[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

double grad_check_params(const ParamScalarFn& fn, ParamStore& params, double step, GraphOptions options) {
    check_step(step);
    GradList analytic;
    {
        Graph g(options);
        Var out = fn(g);
        scalar_value(g, out);
        g.backward(out);
        analytic = g.param_grads(params);
    }
    auto eval = [&] {
        Graph g(options);
        return scalar_value(g, fn(g));
    };
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& value = params.value(params.id(p));
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value[i];
            value[i] = saved + step;
            const double up = eval();
            value[i] = saved - step;
            const double down = eval();
            value[i] = saved;
            worst = std::max(worst, rel_error(analytic[p][i], (up - down) / (2.0 * step)));
        }
    }
    return worst;
}

}  // namespace biflow::ad
