// SPDX-License-Identifier: Apache-2.0
#include "biflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gemm.hpp"

namespace biflow::ad {

namespace {

constexpr std::array<std::string_view, 13> kOpNames = {
    "matmul", "add",     "mul",     "concat", "split", "mean",        "mse",
    "layer-norm", "softmax", "sigmoid", "gelu", "scale", "embed-lookup",
};

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b, std::string_view what = "") {
    std::string msg = std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
    if (!what.empty()) msg += " (" + std::string(what) + ")";
    throw ShapeError(msg);
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Leading-batch broadcast: returns true when operands must be swapped so the
// first is the larger.
void check_broadcast(OpKind kind, const Shape& a, const Shape& b) {
    if (a == b) return;
    if (is_suffix(b, a) || is_suffix(a, b)) return;
    shape_fail(kind, a, b, "only leading-batch broadcasting is supported");
}

double clamp_logit(double x) { return std::clamp(x, -kSigmoidClamp, kSigmoidClamp); }

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// C[rows x cols] = op(A)[rows x inner] * op(B)[inner x cols]; a transposed
// operand is stored untransposed and copied into row-major order first.
void mm(const double* A, bool ta, const double* B, bool tb, double* C, std::size_t rows, std::size_t inner,
        std::size_t cols) {
    std::vector<double> at, bt;
    if (ta) {
        at.resize(rows * inner);
        gemm::transpose(A, at.data(), inner, rows);
        A = at.data();
    }
    if (tb) {
        bt.resize(inner * cols);
        gemm::transpose(B, bt.data(), cols, inner);
        B = bt.data();
    }
    gemm::nn(A, B, C, rows, inner, cols, false);
}

struct MatmulDims {
    std::size_t batch = 1, n = 0, k = 0, m = 0;
    bool shared_b = true;
    Shape out;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b, bool tb) {
    if (a.size() < 2 || b.size() < 2) shape_fail(OpKind::matmul, a, b, "operands must have rank >= 2");
    MatmulDims d;
    d.n = a[a.size() - 2];
    d.k = a.back();
    std::size_t bk = tb ? b.back() : b[b.size() - 2];
    d.m = tb ? b[b.size() - 2] : b.back();
    if (bk != d.k) shape_fail(OpKind::matmul, a, b, "inner dimensions differ");
    Shape lead(a.begin(), a.end() - 2);
    d.batch = numel(lead);
    if (b.size() == 2) {
        d.shared_b = true;
    } else {
        Shape blead(b.begin(), b.end() - 2);
        if (blead != lead) shape_fail(OpKind::matmul, a, b, "batch dimensions differ");
        d.shared_b = false;
    }
    d.out = lead;
    d.out.push_back(d.n);
    d.out.push_back(d.m);
    return d;
}

}  // namespace

std::string_view op_name(OpKind kind) { return kOpNames[static_cast<std::size_t>(kind)]; }

std::optional<OpKind> op_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kOpNames.size(); ++i)
        if (kOpNames[i] == name) return static_cast<OpKind>(i);
    return std::nullopt;
}

// ---------------------------------------------------------------- ParamStore

ParamId ParamStore::add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto idx = static_cast<std::uint32_t>(entries_.size());
    index_.emplace(name, idx);
    entries_.push_back({std::move(name), std::move(value)});
    return ParamId{idx};
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
}

ParamId ParamStore::at(std::string_view name) const {
    auto id = find(name);
    if (!id) throw std::out_of_range("unknown parameter: " + std::string(name));
    return *id;
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

std::vector<Tensor> ParamStore::zeros_like() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.emplace_back(e.value.shape(), 0.0);
    return out;
}

// ---------------------------------------------------------------- Graph

Var Graph::push(Node n) {
    // Parameter leaves are checked by the optimizer when they are written.
    if (n.leaf != Leaf::param && !n.val().all_finite()) {
        if (n.leaf != Leaf::none) throw NumericalError("non-finite value in graph input");
        throw NumericalError(std::string(op_name(n.kind)) + ": non-finite output");
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const { return node(v).val(); }

Var Graph::constant(Tensor value) {
    Node n;
    n.leaf = Leaf::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::variable(Tensor value) {
    Node n;
    n.leaf = Leaf::variable;
    n.value = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
}

Var Graph::param(const ParamStore& store, ParamId id) {
    auto it = param_nodes_.find(id.index);
    if (it != param_nodes_.end()) return Var{it->second};
    Node n;
    n.leaf = Leaf::param;
    n.ref = &store.value(id);
    n.needs_grad = true;
    n.offset = id.index;
    Var v = push(std::move(n));
    param_nodes_.emplace(id.index, v.id);
    return v;
}

Var Graph::matmul(Var a, Var b, bool transpose_b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    MatmulDims d = matmul_dims(A.shape(), B.shape(), transpose_b);
    Tensor out(d.out);
    if (d.shared_b) {
        mm(A.data(), false, B.data(), transpose_b, out.data(), d.batch * d.n, d.k, d.m);
    } else {
        for (std::size_t s = 0; s < d.batch; ++s)
            mm(A.data() + s * d.n * d.k, false, B.data() + s * d.k * d.m, transpose_b, out.data() + s * d.n * d.m, d.n,
               d.k, d.m);
    }
    Node n;
    n.kind = OpKind::matmul;
    n.in = {a.id, b.id};
    n.transpose_b = transpose_b;
    n.value = std::move(out);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_broadcast(OpKind::add, A.shape(), B.shape());
    const Tensor& big = A.size() >= B.size() ? A : B;
    const Tensor& small = A.size() >= B.size() ? B : A;
    Tensor out = big;
    const std::size_t ns = small.size();
    for (std::size_t base = 0; base < out.size(); base += ns)
        for (std::size_t j = 0; j < ns; ++j) out[base + j] += small[j];
    Node n;
    n.kind = OpKind::add;
    n.in = {a.id, b.id};
    n.value = std::move(out);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    check_broadcast(OpKind::mul, A.shape(), B.shape());
    const Tensor& big = A.size() >= B.size() ? A : B;
    const Tensor& small = A.size() >= B.size() ? B : A;
    Tensor out = big;
    const std::size_t ns = small.size();
    for (std::size_t base = 0; base < out.size(); base += ns)
        for (std::size_t j = 0; j < ns; ++j) out[base + j] *= small[j];
    Node n;
    n.kind = OpKind::mul;
    n.in = {a.id, b.id};
    n.value = std::move(out);
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var Graph::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat-last-axis: no inputs");
    const Shape& first = shape(parts[0]);
    Shape lead(first.begin(), first.end() - 1);
    std::size_t total = 0;
    bool needs = false;
    for (Var p : parts) {
        const Shape& s = shape(p);
        if (Shape(s.begin(), s.end() - 1) != lead) shape_fail(OpKind::concat, first, s, "leading dimensions differ");
        total += s.back();
        needs = needs || node(p).needs_grad;
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor out(out_shape);
    const std::size_t rows = numel(lead);
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& t = value(p);
        const std::size_t w = t.last_dim();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(t.data() + r * w, w, out.data() + r * total + off);
        off += w;
    }
    Node n;
    n.kind = OpKind::concat;
    n.extra_in.reserve(parts.size());
    for (Var p : parts) n.extra_in.push_back(p.id);
    n.value = std::move(out);
    n.needs_grad = needs;
    return push(std::move(n));
}

std::vector<Var> Graph::split(Var x, const std::vector<std::size_t>& widths) {
    const Shape s = shape(x);  // copy: push() below may reallocate the tape
    std::size_t total = 0;
    for (auto w : widths) {
        if (w == 0) throw ShapeError("split-last-axis: zero-width piece");
        total += w;
    }
    if (total != s.back()) shape_fail(OpKind::split, s, Shape{total}, "piece widths must sum to last dimension");
    const std::size_t rows = numel(s) / s.back();
    std::vector<Var> out;
    std::size_t off = 0;
    for (auto w : widths) {
        Shape ps = s;
        ps.back() = w;
        Tensor piece(ps);
        const Tensor& src = value(x);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.data() + r * s.back() + off, w, piece.data() + r * w);
        Node n;
        n.kind = OpKind::split;
        n.in = {x.id, UINT32_MAX};
        n.offset = off;
        n.value = std::move(piece);
        n.needs_grad = node(x).needs_grad;
        out.push_back(push(std::move(n)));
        off += w;
    }
    return out;
}

Var Graph::mean(Var x) {
    const Tensor& X = value(x);
    double s = 0.0;
    for (double v : X.values()) s += v;
    Node n;
    n.kind = OpKind::mean;
    n.in = {x.id, UINT32_MAX};
    n.value = Tensor::scalar(s / static_cast<double>(X.size()));
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::mse(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape()) shape_fail(OpKind::mse, A.shape(), B.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        const double d = A[i] - B[i];
        s += d * d;
    }
    Node n;
    n.kind = OpKind::mse;
    n.in = {a.id, b.id};
    n.value = Tensor::scalar(s / static_cast<double>(A.size()));
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    return push(std::move(n));
}

Var Graph::layer_norm(Var x) {
    const Tensor& X = value(x);
    const std::size_t w = X.last_dim();
    const std::size_t rows = X.size() / w;
    Tensor out(X.shape());
    Tensor inv_std({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = X.data() + r * w;
        double mu = 0.0;
        for (std::size_t j = 0; j < w; ++j) mu += xr[j];
        mu /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(w);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std[r] = rs;
        double* yr = out.data() + r * w;
        for (std::size_t j = 0; j < w; ++j) yr[j] = (xr[j] - mu) * rs;
    }
    Node n;
    n.kind = OpKind::layer_norm;
    n.in = {x.id, UINT32_MAX};
    n.value = std::move(out);
    n.aux = std::move(inv_std);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::softmax(Var x) {
    const Tensor& X = value(x);
    const std::size_t w = X.last_dim();
    const std::size_t rows = X.size() / w;
    Tensor out(X.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = X.data() + r * w;
        double* yr = out.data() + r * w;
        const double mx = *std::max_element(xr, xr + w);
        double s = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            s += yr[j];
        }
        for (std::size_t j = 0; j < w; ++j) yr[j] /= s;
    }
    Node n;
    n.kind = OpKind::softmax;
    n.in = {x.id, UINT32_MAX};
    n.value = std::move(out);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::sigmoid(Var x) {
    Tensor out = value(x);
    for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-clamp_logit(v)));
    Node n;
    n.kind = OpKind::sigmoid;
    n.in = {x.id, UINT32_MAX};
    n.value = std::move(out);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::gelu(Var x) {
    Tensor out = value(x);
    for (auto& v : out.values()) v = v * std_normal_cdf(v);
    Node n;
    n.kind = OpKind::gelu;
    n.in = {x.id, UINT32_MAX};
    n.value = std::move(out);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::scale(Var x, double factor) {
    Tensor out = value(x);
    for (auto& v : out.values()) v *= factor;
    Node n;
    n.kind = OpKind::scale;
    n.in = {x.id, UINT32_MAX};
    n.factor = factor;
    n.value = std::move(out);
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Graph::embed_lookup(Var table, const std::vector<std::int32_t>& ids) {
    const Tensor& T = value(table);
    if (T.rank() != 2) shape_fail(OpKind::embed_lookup, T.shape(), Shape{ids.size()}, "table must be rank 2");
    if (ids.empty()) throw ShapeError("embed-lookup: empty id list");
    const std::size_t d = T.dim(1);
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.dim(0))
            throw ShapeError("embed-lookup: id " + std::to_string(ids[i]) + " outside table " + shape_str(T.shape()));
        std::copy_n(T.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    Node n;
    n.kind = OpKind::embed_lookup;
    n.in = {table.id, UINT32_MAX};
    n.ids = ids;
    n.value = std::move(out);
    n.needs_grad = node(table).needs_grad;
    return push(std::move(n));
}

// ---------------------------------------------------------------- backward

void Graph::accumulate(std::uint32_t target, Tensor g, double factor) {
    Node& t = nodes_[target];
    if (!t.needs_grad) return;
    if (t.grad.size() == 0) {
        if (factor != 1.0)
            for (auto& v : g.values()) v *= factor;
        t.grad = std::move(g);
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += factor * g[i];
}

void Graph::backward(Var loss) {
    if (backward_done_) throw std::logic_error("backward called twice on one graph");
    const Tensor& L = value(loss);
    if (L.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(L.shape()));
    backward_done_ = true;
    node(loss).grad = Tensor(L.shape(), 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        if (n.leaf != Leaf::none || !n.needs_grad || n.grad.size() == 0) continue;
        backward_node(n);
    }
}

void Graph::backward_node(const Node& n) {
    const double f = options_.corrupt_backward == n.kind ? 1.5 : 1.0;
    const Tensor& G = n.grad;
    switch (n.kind) {
        case OpKind::matmul: {
            const Tensor& A = nodes_[n.in[0]].val();
            const Tensor& B = nodes_[n.in[1]].val();
            MatmulDims d = matmul_dims(A.shape(), B.shape(), n.transpose_b);
            const std::size_t N = d.n, K = d.k, M = d.m;
            if (nodes_[n.in[0]].needs_grad) {
                // dA = G * op(B)^T
                Tensor dA(A.shape());
                if (d.shared_b) {
                    mm(G.data(), false, B.data(), !n.transpose_b, dA.data(), d.batch * N, M, K);
                } else {
                    for (std::size_t s = 0; s < d.batch; ++s)
                        mm(G.data() + s * N * M, false, B.data() + s * K * M, !n.transpose_b, dA.data() + s * N * K, N,
                           M, K);
                }
                accumulate(n.in[0], std::move(dA), f);
            }
            if (nodes_[n.in[1]].needs_grad) {
                // dB = A^T G, or G^T A when B entered transposed
                Tensor dB(B.shape());
                const std::size_t rows = d.shared_b ? d.batch * N : N;
                const std::size_t reps = d.shared_b ? 1 : d.batch;
                for (std::size_t s = 0; s < reps; ++s) {
                    const double* ap = A.data() + s * N * K;
                    const double* gp = G.data() + s * N * M;
                    double* bp = dB.data() + s * K * M;
                    if (n.transpose_b)
                        mm(gp, true, ap, false, bp, M, rows, K);
                    else
                        mm(ap, true, gp, false, bp, K, rows, M);
                }
                accumulate(n.in[1], std::move(dB), f);
            }
            break;
        }
        case OpKind::add:
        case OpKind::mul: {
            for (int side = 0; side < 2; ++side) {
                const Node& self = nodes_[n.in[side]];
                if (!self.needs_grad) continue;
                const Tensor& other = nodes_[n.in[1 - side]].val();
                const Tensor& mine = self.val();
                Tensor g(mine.shape(), 0.0);
                const std::size_t ns = mine.size();
                const std::size_t no = other.size();
                if (n.kind == OpKind::add) {
                    if (ns == G.size()) {
                        g = G;
                    } else {
                        for (std::size_t base = 0; base < G.size(); base += ns)
                            for (std::size_t j = 0; j < ns; ++j) g[j] += G[base + j];
                    }
                } else if (ns == no) {
                    for (std::size_t i = 0; i < ns; ++i) g[i] = G[i] * other[i];
                } else if (ns < no) {
                    // this side was broadcast: reduce over the leading blocks
                    for (std::size_t base = 0; base < G.size(); base += ns)
                        for (std::size_t j = 0; j < ns; ++j) g[j] += G[base + j] * other[base + j];
                } else {
                    for (std::size_t base = 0; base < G.size(); base += no)
                        for (std::size_t j = 0; j < no; ++j) g[base + j] = G[base + j] * other[j];
                }
                accumulate(n.in[side], std::move(g), f);
            }
            break;
        }
        case OpKind::concat: {
            const std::size_t total = G.last_dim();
            const std::size_t rows = G.size() / total;
            std::size_t off = 0;
            for (auto id : n.extra_in) {
                const Tensor& part = nodes_[id].val();
                const std::size_t w = part.last_dim();
                if (nodes_[id].needs_grad) {
                    Tensor g(part.shape());
                    for (std::size_t r = 0; r < rows; ++r)
                        std::copy_n(G.data() + r * total + off, w, g.data() + r * w);
                    accumulate(id, std::move(g), f);
                }
                off += w;
            }
            break;
        }
        case OpKind::split: {
            const Tensor& src = nodes_[n.in[0]].val();
            const std::size_t total = src.last_dim();
            const std::size_t w = G.last_dim();
            const std::size_t rows = G.size() / w;
            Tensor g(src.shape(), 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(G.data() + r * w, w, g.data() + r * total + n.offset);
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::mean: {
            const Tensor& X = nodes_[n.in[0]].val();
            Tensor g(X.shape(), G[0] / static_cast<double>(X.size()));
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::mse: {
            const Tensor& A = nodes_[n.in[0]].val();
            const Tensor& B = nodes_[n.in[1]].val();
            const double c = 2.0 * G[0] / static_cast<double>(A.size());
            Tensor g(A.shape());
            for (std::size_t i = 0; i < A.size(); ++i) g[i] = c * (A[i] - B[i]);
            accumulate(n.in[1], g, -f);
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::layer_norm: {
            const Tensor& Y = n.value;
            const std::size_t w = Y.last_dim();
            const std::size_t rows = Y.size() / w;
            Tensor g(Y.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = Y.data() + r * w;
                const double* gr = G.data() + r * w;
                double mg = 0.0, mgy = 0.0;
                for (std::size_t j = 0; j < w; ++j) {
                    mg += gr[j];
                    mgy += gr[j] * yr[j];
                }
                mg /= static_cast<double>(w);
                mgy /= static_cast<double>(w);
                const double rs = n.aux[r];
                for (std::size_t j = 0; j < w; ++j) g[r * w + j] = rs * (gr[j] - mg - yr[j] * mgy);
            }
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::softmax: {
            const Tensor& Y = n.value;
            const std::size_t w = Y.last_dim();
            const std::size_t rows = Y.size() / w;
            Tensor g(Y.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = Y.data() + r * w;
                const double* gr = G.data() + r * w;
                double dot = 0.0;
                for (std::size_t j = 0; j < w; ++j) dot += gr[j] * yr[j];
                for (std::size_t j = 0; j < w; ++j) g[r * w + j] = yr[j] * (gr[j] - dot);
            }
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::sigmoid: {
            const Tensor& Y = n.value;
            Tensor g(Y.shape());
            for (std::size_t i = 0; i < Y.size(); ++i) g[i] = G[i] * Y[i] * (1.0 - Y[i]);
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::gelu: {
            const Tensor& X = nodes_[n.in[0]].val();
            Tensor g(X.shape());
            for (std::size_t i = 0; i < X.size(); ++i)
                g[i] = G[i] * (std_normal_cdf(X[i]) + X[i] * std_normal_pdf(X[i]));
            accumulate(n.in[0], std::move(g), f);
            break;
        }
        case OpKind::scale: {
            accumulate(n.in[0], G, f * n.factor);
            break;
        }
        case OpKind::embed_lookup: {
            const Tensor& T = nodes_[n.in[0]].val();
            const std::size_t d = T.dim(1);
            Tensor g(T.shape(), 0.0);
            for (std::size_t i = 0; i < n.ids.size(); ++i) {
                double* row = g.data() + static_cast<std::size_t>(n.ids[i]) * d;
                for (std::size_t j = 0; j < d; ++j) row[j] += G[i * d + j];
            }
            accumulate(n.in[0], std::move(g), f);
            break;
        }
    }
}

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) return Tensor(n.val().shape(), 0.0);
    return n.grad;
}

void Graph::add_param_grads(const ParamStore& store, GradList& into) const {
    if (into.size() != store.size()) throw std::invalid_argument("add_param_grads: buffer count mismatch");
    for (const auto& [pid, nid] : param_nodes_) {
        const Node& n = nodes_[nid];
        if (n.grad.size() == 0) continue;
        Tensor& dst = into[pid];
        if (dst.size() != n.grad.size()) throw ShapeError("add_param_grads: buffer shape mismatch");
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
}

GradList Graph::param_grads(const ParamStore& store) const {
    GradList out = store.zeros_like();
    for (const auto& [pid, nid] : param_nodes_) {
        const Node& n = nodes_[nid];
        if (n.grad.size() != 0) out[pid] = n.grad;
    }
    return out;
}

}  // namespace biflow::ad
