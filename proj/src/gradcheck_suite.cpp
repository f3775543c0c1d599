// SPDX-License-Identifier: Apache-2.0
#include "biflow/gradcheck_suite.hpp"

#include <algorithm>

#include "biflow/dual_branch.hpp"

namespace biflow::ad {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double std = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = std * rng.normal();
    return t;
}

// sum(y * R) keeps every gradient entry O(1).
Var weighted_sum(Graph& g, Var y, const Tensor& r) {
    return g.scale(g.mean(g.mul(y, g.constant(r))), static_cast<double>(r.size()));
}

}  // namespace

ScalarFn op_probe(OpKind kind, Rng& rng, Shape* input_shape) {
    switch (kind) {
        case OpKind::matmul: {
            *input_shape = {2, 3, 4};
            Tensor w = random_tensor({4, 5}, rng), r1 = random_tensor({2, 3, 5}, rng), r2 = random_tensor({2, 3, 3}, rng);
            return [=](Graph& g, Var x) {
                Var a = weighted_sum(g, g.matmul(x, g.constant(w)), r1);
                Var b = weighted_sum(g, g.matmul(x, x, true), r2);
                return g.add(a, b);
            };
        }
        case OpKind::add: {
            *input_shape = {3, 4};
            Tensor c = random_tensor({2, 3, 4}, rng), r = random_tensor({2, 3, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.add(g.add(g.constant(c), x), x), r); };
        }
        case OpKind::mul: {
            *input_shape = {3, 4};
            Tensor c = random_tensor({2, 3, 4}, rng), r = random_tensor({2, 3, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.mul(g.mul(g.constant(c), x), x), r); };
        }
        case OpKind::concat: {
            *input_shape = {3, 2};
            Tensor c = random_tensor({3, 3}, rng), r = random_tensor({3, 7}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.concat({x, g.constant(c), x}), r); };
        }
        case OpKind::split: {
            *input_shape = {3, 6};
            Tensor r1 = random_tensor({3, 2}, rng), r2 = random_tensor({3, 4}, rng);
            return [=](Graph& g, Var x) {
                auto parts = g.split(x, {2, 4});
                return g.add(weighted_sum(g, parts[0], r1), weighted_sum(g, g.mul(parts[1], parts[1]), r2));
            };
        }
        case OpKind::mean: {
            *input_shape = {4, 5};
            return [](Graph& g, Var x) { return g.mean(x); };
        }
        case OpKind::mse: {
            *input_shape = {4, 5};
            Tensor c = random_tensor({4, 5}, rng);
            return [=](Graph& g, Var x) { return g.mse(x, g.constant(c)); };
        }
        case OpKind::layer_norm: {
            *input_shape = {3, 6};
            Tensor r = random_tensor({3, 6}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.layer_norm(x), r); };
        }
        case OpKind::softmax: {
            *input_shape = {3, 5};
            Tensor r = random_tensor({3, 5}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.softmax(x), r); };
        }
        case OpKind::sigmoid: {
            *input_shape = {3, 4};
            Tensor r = random_tensor({3, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.sigmoid(x), r); };
        }
        case OpKind::gelu: {
            *input_shape = {3, 4};
            Tensor r = random_tensor({3, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.gelu(x), r); };
        }
        case OpKind::scale: {
            *input_shape = {3, 4};
            Tensor r = random_tensor({3, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.scale(x, -1.7), r); };
        }
        case OpKind::embed_lookup: {
            *input_shape = {6, 4};
            Tensor r = random_tensor({5, 4}, rng);
            return [=](Graph& g, Var x) { return weighted_sum(g, g.embed_lookup(x, {0, 3, 3, 5, 1}), r); };
        }
    }
    throw std::invalid_argument("op_probe: unknown op");
}

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed, int trials, GraphOptions options) {
    const Rng root(seed);
    std::vector<GradCheckRow> rows;
    for (OpKind kind : kAllOps) {
        GradCheckRow row{std::string(op_name(kind)), 0.0};
        for (int t = 0; t < trials; ++t) {
            Rng rng = root.split(static_cast<std::uint64_t>(kind)).split(static_cast<std::uint64_t>(t));
            Shape shape;
            ScalarFn fn = op_probe(kind, rng, &shape);
            Tensor point = random_tensor(shape, rng);
            row.max_rel_error = std::max(row.max_rel_error, grad_check(fn, point, kGradCheckStep, options));
        }
        rows.push_back(row);
    }

    // Two blocks per branch, non-zero bridges, AT fusion with its residual path.
    dual::ModelConfig cfg;
    cfg.grid = 4;
    cfg.image = 8;
    cfg.image_patch = 4;
    cfg.depth = 2;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.time_features = 4;
    Rng rng = root.split(100);
    Rng init = rng.split(0);
    dual::Bundle bundle(cfg, init, dual::FusionKind::at, /*at_residual=*/true);
    Rng values = rng.split(1);
    dual::randomize(bundle.params(), values, 0.3);
    Rng data = rng.split(2);
    Tensor tokens = random_tensor({cfg.tokens(), cfg.token_channels()}, data);
    dual::ConditionInputs inputs;
    inputs.image_patches = random_tensor({cfg.image_tokens(), cfg.patch_dim()}, data);
    inputs.text_ids = std::array<std::int32_t, toy::kTextTokens>{1, 5, 9, 14, 20};
    Tensor r = random_tensor({cfg.tokens(), cfg.token_channels()}, data);
    auto fn = [&](Graph& g) {
        Var v = bundle.velocity(g, tokens, 0.37, inputs, Regime::joint, dual::FusionKind::at);
        return weighted_sum(g, v, r);
    };
    rows.push_back({"dual-branch-model", grad_check_params(fn, bundle.params(), kGradCheckStep, options)});
    return rows;
}

}  // namespace biflow::ad
