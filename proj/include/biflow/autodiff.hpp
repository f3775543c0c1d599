// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph is built fresh for every evaluation: leaves are recorded first and
// every op appends one node whose inputs precede it, so the tape is acyclic by
// construction and backward() is a single reverse sweep. Parameters live in a
// ParamStore shared read-only between graphs; each graph keeps its own
// gradient buffers, which makes separate graphs safe on separate threads.
//
// Broadcasting is restricted to leading-batch form: for add and mul the
// smaller operand's shape must be a suffix of the larger one's. matmul accepts
// a rank-2 right operand (shared across the batch) or one with identical
// leading dimensions.
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biflow/tensor.hpp"

namespace biflow::ad {

enum class OpKind : std::uint8_t {
    matmul,
    add,
    mul,
    concat,
    split,
    mean,
    mse,
    layer_norm,
    softmax,
    sigmoid,
    gelu,
    scale,
    embed_lookup,
};

inline constexpr std::array<OpKind, 13> kAllOps = {
    OpKind::matmul, OpKind::add,        OpKind::mul,     OpKind::concat,  OpKind::split,
    OpKind::mean,   OpKind::mse,        OpKind::layer_norm, OpKind::softmax, OpKind::sigmoid,
    OpKind::gelu,   OpKind::scale,      OpKind::embed_lookup,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kSigmoidClamp = 30.0;

/// Handle to a node in one Graph.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
};

struct ParamId {
    std::uint32_t index = UINT32_MAX;
    friend bool operator==(ParamId a, ParamId b) { return a.index == b.index; }
};

/// Named trainable tensors, in registration order.
class ParamStore {
public:
    ParamId add(std::string name, Tensor value);
    std::optional<ParamId> find(std::string_view name) const;
    ParamId at(std::string_view name) const;

    Tensor& value(ParamId id) { return entries_.at(id.index).value; }
    const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
    const std::string& name(ParamId id) const { return entries_.at(id.index).name; }

    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const;
    ParamId id(std::size_t i) const { return ParamId{static_cast<std::uint32_t>(i)}; }

    /// Gradient buffers shaped like every parameter, zero-filled.
    std::vector<Tensor> zeros_like() const;

private:
    struct Entry {
        std::string name;
        Tensor value;
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Per-parameter gradients indexed by ParamId::index.
using GradList = std::vector<Tensor>;

struct GraphOptions {
    /// Test fixture: scales the backward rule of one op kind by 1.5.
    std::optional<OpKind> corrupt_backward;
};

class Graph {
public:
    explicit Graph(GraphOptions options = {}) : options_(options) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Leaves.
    Var constant(Tensor value);
    Var variable(Tensor value);
    Var param(const ParamStore& store, ParamId id);

    // Ops.
    Var matmul(Var a, Var b, bool transpose_b = false);
    Var add(Var a, Var b);
    Var mul(Var a, Var b);
    Var concat(const std::vector<Var>& parts);
    std::vector<Var> split(Var x, const std::vector<std::size_t>& widths);
    Var mean(Var x);
    Var mse(Var a, Var b);
    Var layer_norm(Var x);
    Var softmax(Var x);
    Var sigmoid(Var x);
    Var gelu(Var x);
    Var scale(Var x, double factor);
    Var embed_lookup(Var table, const std::vector<std::int32_t>& ids);

    const Tensor& value(Var v) const;
    const Shape& shape(Var v) const { return value(v).shape(); }

    /// Reverse sweep from a scalar node. May be called once per graph.
    void backward(Var loss);

    /// Gradient of a variable leaf (or any node) after backward; zeros if untouched.
    Tensor grad(Var v) const;

    /// Gradients for every parameter in the store; non-contributing ones are zero.
    GradList param_grads(const ParamStore& store) const;
    /// Adds this graph's parameter gradients into `into` (shaped like the store).
    void add_param_grads(const ParamStore& store, GradList& into) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Leaf : std::uint8_t { none, constant, variable, param };

    struct Node {
        OpKind kind = OpKind::add;
        Leaf leaf = Leaf::none;
        std::array<std::uint32_t, 2> in{UINT32_MAX, UINT32_MAX};
        std::vector<std::uint32_t> extra_in;  // concat inputs
        Tensor value;
        const Tensor* ref = nullptr;  // param leaves point into the store
        Tensor grad;
        Tensor aux;  // cached backward data (layer-norm inverse std)
        std::vector<std::int32_t> ids;
        std::size_t offset = 0;
        double factor = 1.0;
        bool transpose_b = false;
        bool needs_grad = false;

        const Tensor& val() const { return ref ? *ref : value; }
    };

    Var push(Node node);
    Node& node(Var v) { return nodes_.at(v.id); }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    void accumulate(std::uint32_t target, Tensor g, double factor);
    void backward_node(const Node& n);

    GraphOptions options_;
    std::deque<Node> nodes_;  // deque: references to values survive later pushes
    std::unordered_map<std::uint32_t, std::uint32_t> param_nodes_;  // ParamId -> node
    bool backward_done_ = false;
};

}  // namespace biflow::ad
