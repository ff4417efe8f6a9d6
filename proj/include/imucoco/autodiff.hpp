#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "imucoco/tensor.hpp"

namespace imucoco {

using NodeId = int;

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order, so the creation order is already topological and backward() walks
// it in reverse. Forward values are computed eagerly at op-construction
// time; backward() accumulates (sums) gradients across fan-out.
class Graph {
    enum class Op {
        leaf, constant, matmul, add, scale, hadamard, concat, slice,
        relu, sigmoid, tanh_fn, sin_fn, cos_fn, mean, sum_squared_error,
        cosine_similarity, embedding_lookup
    };

    struct Node {
        Op op;
        std::vector<NodeId> inputs;
        Tensor value;
        std::vector<double> grad;  // allocated during backward
        bool requires_grad = false;
        double attr_scalar = 0.0;  // scale factor
        int attr_a = 0, attr_b = 0;  // slice offset/length, embedding row
        const Tensor* bound = nullptr;  // leaf parameter origin
    };

public:
    // Binds an external parameter tensor as a graph leaf. Repeated binds of
    // the same tensor return the same node so fan-out gradients sum.
    NodeId leaf(const Tensor& t) {
        auto it = leaf_ids_.find(&t);
        if (it != leaf_ids_.end()) return it->second;
        Node n;
        n.op = Op::leaf;
        n.value = t;
        n.requires_grad = t.requires_grad;
        n.bound = &t;
        const NodeId id = push(std::move(n));
        leaf_ids_[&t] = id;
        return id;
    }

    NodeId constant(Tensor t) {
        Node n;
        n.op = Op::constant;
        n.value = std::move(t);
        n.value.requires_grad = false;
        return push(std::move(n));
    }

    NodeId scalar_constant(double v) { return constant(Tensor::scalar(v)); }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != 2) fail("matmul", "left operand must be rank 2", ta, tb);
        const bool vec = tb.rank() == 1;
        if (!vec && tb.rank() != 2) fail("matmul", "right operand must be rank 1 or 2", ta, tb);
        const int m = ta.dim(0), k = ta.dim(1);
        const int k2 = tb.dim(0);
        const int n = vec ? 1 : tb.dim(1);
        if (k != k2) fail("matmul", "inner dimensions differ", ta, tb);

        Node node = binary(Op::matmul, a, b);
        node.value = vec ? Tensor::zeros({m}) : Tensor::zeros({m, n});
        mat_view(node.value.data, m, n).noalias() =
            mat_view_const(ta.data, m, k) * mat_view_const(tb.data, k, n);
        return push(std::move(node));
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb)) fail("add", "shape mismatch", ta, tb);
        Node node = binary(Op::add, a, b);
        node.value = ta;
        node.value.requires_grad = false;
        for (long i = 0; i < ta.size(); ++i) node.value.data[i] += tb.data[i];
        return push(std::move(node));
    }

    NodeId scale(NodeId a, double s) {
        Node node = unary(Op::scale, a);
        node.attr_scalar = s;
        node.value = value(a);
        node.value.requires_grad = false;
        for (double& v : node.value.data) v *= s;
        return push(std::move(node));
    }

    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

    NodeId hadamard(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb)) fail("hadamard", "shape mismatch", ta, tb);
        Node node = binary(Op::hadamard, a, b);
        node.value = ta;
        node.value.requires_grad = false;
        for (long i = 0; i < ta.size(); ++i) node.value.data[i] *= tb.data[i];
        return push(std::move(node));
    }

    NodeId concat(const std::vector<NodeId>& parts) {
        if (parts.empty()) throw ValidationError("concat of zero tensors");
        Node node;
        node.op = Op::concat;
        node.inputs = parts;
        long total = 0;
        for (NodeId p : parts) {
            const Tensor& t = value(p);
            if (t.rank() != 1) fail("concat", "expects rank-1 inputs", t, t);
            total += t.size();
            node.requires_grad = node.requires_grad || node_(p).requires_grad;
        }
        node.value = Tensor::zeros({static_cast<int>(total)});
        long off = 0;
        for (NodeId p : parts) {
            const Tensor& t = value(p);
            std::copy(t.data.begin(), t.data.end(), node.value.data.begin() + off);
            off += t.size();
        }
        return push(std::move(node));
    }

    NodeId slice(NodeId a, int offset, int length) {
        const Tensor& ta = value(a);
        if (ta.rank() != 1) fail("slice", "expects rank-1 input", ta, ta);
        if (offset < 0 || length <= 0 || offset + length > ta.dim(0))
            fail("slice", "range out of bounds", ta, ta);
        Node node = unary(Op::slice, a);
        node.attr_a = offset;
        node.attr_b = length;
        node.value = Tensor::zeros({length});
        std::copy(ta.data.begin() + offset, ta.data.begin() + offset + length,
                  node.value.data.begin());
        return push(std::move(node));
    }

    NodeId relu(NodeId a) { return elementwise(Op::relu, a, [](double x) { return x > 0 ? x : 0.0; }); }
    NodeId sigmoid(NodeId a) {
        return elementwise(Op::sigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }
    NodeId tanh(NodeId a) { return elementwise(Op::tanh_fn, a, [](double x) { return std::tanh(x); }); }
    NodeId sin(NodeId a) { return elementwise(Op::sin_fn, a, [](double x) { return std::sin(x); }); }
    NodeId cos(NodeId a) { return elementwise(Op::cos_fn, a, [](double x) { return std::cos(x); }); }

    NodeId mean(NodeId a) {
        const Tensor& ta = value(a);
        Node node = unary(Op::mean, a);
        double s = 0;
        for (double v : ta.data) s += v;
        node.value = Tensor::scalar(s / ta.size());
        return push(std::move(node));
    }

    // Mean-normalized squared error: sum((a-b)^2) / element_count.
    NodeId sum_squared_error(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb)) fail("sum_squared_error", "shape mismatch", ta, tb);
        Node node = binary(Op::sum_squared_error, a, b);
        double s = 0;
        for (long i = 0; i < ta.size(); ++i) {
            const double d = ta.data[i] - tb.data[i];
            s += d * d;
        }
        node.value = Tensor::scalar(s / ta.size());
        return push(std::move(node));
    }

    NodeId cosine_similarity(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (!ta.same_shape(tb) || ta.rank() != 1)
            fail("cosine_similarity", "expects equal-length rank-1 inputs", ta, tb);
        const double na = norm(ta), nb = norm(tb);
        if (na < 1e-12 || nb < 1e-12)
            throw ValidationError("cosine_similarity of a zero-norm vector");
        Node node = binary(Op::cosine_similarity, a, b);
        node.value = Tensor::scalar(dot(ta, tb) / (na * nb));
        return push(std::move(node));
    }

    NodeId embedding_lookup(NodeId table, int row) {
        const Tensor& tt = value(table);
        if (tt.rank() != 2) fail("embedding_lookup", "table must be rank 2", tt, tt);
        if (row < 0 || row >= tt.dim(0)) fail("embedding_lookup", "row out of range", tt, tt);
        Node node = unary(Op::embedding_lookup, table);
        node.attr_a = row;
        const int d = tt.dim(1);
        node.value = Tensor::zeros({d});
        std::copy(tt.data.begin() + static_cast<long>(row) * d,
                  tt.data.begin() + static_cast<long>(row + 1) * d, node.value.data.begin());
        return push(std::move(node));
    }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }

    // Gradient of the last backward() loss w.r.t. this node.
    std::vector<double> grad(NodeId id) const {
        const Node& n = nodes_[id];
        if (!n.grad.empty()) return n.grad;
        return std::vector<double>(n.value.size(), 0.0);
    }

    // Reverse sweep from a scalar loss. Stale gradients are cleared first;
    // gradients sum across fan-out. Nodes that do not require gradients are
    // never touched (and never allocate a gradient buffer).
    void backward(NodeId loss) {
        if (value(loss).size() != 1)
            throw ValidationError("backward expects a scalar loss, got shape " +
                                  value(loss).shape_string());
        for (Node& n : nodes_) n.grad.clear();
        if (!nodes_[loss].requires_grad) return;  // loss independent of any parameter
        ensure_grad(loss);
        nodes_[loss].grad[0] = 1.0;

        for (NodeId id = loss; id >= 0; --id) {
            Node& n = nodes_[id];
            if (!n.requires_grad || n.grad.empty()) continue;
            propagate(n);
        }
        for (const Node& n : nodes_)
            assert(!(n.op == Op::leaf && !n.requires_grad && !n.grad.empty()));
    }

    // Sums leaf gradients into an external store keyed by parameter address.
    void accumulate_leaf_grads(std::map<const Tensor*, std::vector<double>>& store) const {
        for (const Node& n : nodes_) {
            if (n.op != Op::leaf || !n.requires_grad || n.grad.empty()) continue;
            auto& slot = store[n.bound];
            if (slot.empty()) slot.assign(n.value.size(), 0.0);
            for (long i = 0; i < n.value.size(); ++i) slot[i] += n.grad[i];
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    using MatView = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using MatViewConst =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    static MatView mat_view(std::vector<double>& d, int r, int c) { return MatView(d.data(), r, c); }
    static MatViewConst mat_view_const(const std::vector<double>& d, int r, int c) {
        return MatViewConst(d.data(), r, c);
    }

    static double dot(const Tensor& a, const Tensor& b) {
        double s = 0;
        for (long i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
        return s;
    }
    static double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

    [[noreturn]] static void fail(const char* op, const char* what, const Tensor& a, const Tensor& b) {
        throw ValidationError(std::string(op) + ": " + what + " " + a.shape_string() + " vs " +
                              b.shape_string());
    }

    Node& node_(NodeId id) { return nodes_[id]; }

    Node unary(Op op, NodeId a) {
        Node n;
        n.op = op;
        n.inputs = {a};
        n.requires_grad = nodes_[a].requires_grad;
        return n;
    }

    Node binary(Op op, NodeId a, NodeId b) {
        Node n;
        n.op = op;
        n.inputs = {a, b};
        n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
        return n;
    }

    template <typename F>
    NodeId elementwise(Op op, NodeId a, F&& f) {
        Node node = unary(op, a);
        node.value = value(a);
        node.value.requires_grad = false;
        for (double& v : node.value.data) v = f(v);
        return push(std::move(node));
    }

    NodeId push(Node&& n) {
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void ensure_grad(NodeId id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    }

    // Adds `delta * factor` into the gradient of `target` if it requires one.
    std::vector<double>* grad_sink(NodeId target) {
        Node& t = nodes_[target];
        if (!t.requires_grad) return nullptr;
        ensure_grad(target);
        return &t.grad;
    }

    void propagate(Node& n) {
        switch (n.op) {
            case Op::leaf:
            case Op::constant:
                return;
            case Op::matmul: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                const int m = ta.dim(0), k = ta.dim(1);
                const int cols = tb.rank() == 1 ? 1 : tb.dim(1);
                if (auto* ga = grad_sink(n.inputs[0]))
                    mat_view(*ga, m, k).noalias() +=
                        mat_view_const(n.grad, m, cols) * mat_view_const(tb.data, k, cols).transpose();
                if (auto* gb = grad_sink(n.inputs[1]))
                    mat_view(*gb, k, cols).noalias() +=
                        mat_view_const(ta.data, m, k).transpose() * mat_view_const(n.grad, m, cols);
                return;
            }
            case Op::add: {
                for (int side = 0; side < 2; ++side)
                    if (auto* g = grad_sink(n.inputs[side]))
                        for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.grad[i];
                return;
            }
            case Op::scale: {
                if (auto* g = grad_sink(n.inputs[0]))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) (*g)[i] += n.attr_scalar * n.grad[i];
                return;
            }
            case Op::hadamard: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                if (auto* ga = grad_sink(n.inputs[0]))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) (*ga)[i] += tb.data[i] * n.grad[i];
                if (auto* gb = grad_sink(n.inputs[1]))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) (*gb)[i] += ta.data[i] * n.grad[i];
                return;
            }
            case Op::concat: {
                long off = 0;
                for (NodeId p : n.inputs) {
                    const long len = value(p).size();
                    if (auto* g = grad_sink(p))
                        for (long i = 0; i < len; ++i) (*g)[i] += n.grad[off + i];
                    off += len;
                }
                return;
            }
            case Op::slice: {
                if (auto* g = grad_sink(n.inputs[0]))
                    for (int i = 0; i < n.attr_b; ++i) (*g)[n.attr_a + i] += n.grad[i];
                return;
            }
            case Op::relu: {
                const Tensor& tx = value(n.inputs[0]);
                if (auto* g = grad_sink(n.inputs[0]))
                    for (long i = 0; i < tx.size(); ++i)
                        if (tx.data[i] > 0) (*g)[i] += n.grad[i];
                return;
            }
            case Op::sigmoid: {
                if (auto* g = grad_sink(n.inputs[0]))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        const double y = n.value.data[i];
                        (*g)[i] += y * (1.0 - y) * n.grad[i];
                    }
                return;
            }
            case Op::tanh_fn: {
                if (auto* g = grad_sink(n.inputs[0]))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) {
                        const double y = n.value.data[i];
                        (*g)[i] += (1.0 - y * y) * n.grad[i];
                    }
                return;
            }
            case Op::sin_fn: {
                const Tensor& tx = value(n.inputs[0]);
                if (auto* g = grad_sink(n.inputs[0]))
                    for (long i = 0; i < tx.size(); ++i) (*g)[i] += std::cos(tx.data[i]) * n.grad[i];
                return;
            }
            case Op::cos_fn: {
                const Tensor& tx = value(n.inputs[0]);
                if (auto* g = grad_sink(n.inputs[0]))
                    for (long i = 0; i < tx.size(); ++i) (*g)[i] -= std::sin(tx.data[i]) * n.grad[i];
                return;
            }
            case Op::mean: {
                const long count = value(n.inputs[0]).size();
                if (auto* g = grad_sink(n.inputs[0]))
                    for (long i = 0; i < count; ++i) (*g)[i] += n.grad[0] / count;
                return;
            }
            case Op::sum_squared_error: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                const double f = 2.0 * n.grad[0] / ta.size();
                if (auto* ga = grad_sink(n.inputs[0]))
                    for (long i = 0; i < ta.size(); ++i) (*ga)[i] += f * (ta.data[i] - tb.data[i]);
                if (auto* gb = grad_sink(n.inputs[1]))
                    for (long i = 0; i < ta.size(); ++i) (*gb)[i] -= f * (ta.data[i] - tb.data[i]);
                return;
            }
            case Op::cosine_similarity: {
                const Tensor& ta = value(n.inputs[0]);
                const Tensor& tb = value(n.inputs[1]);
                const double na = norm(ta), nb = norm(tb);
                const double c = n.value.data[0];
                const double gy = n.grad[0];
                if (auto* ga = grad_sink(n.inputs[0]))
                    for (long i = 0; i < ta.size(); ++i)
                        (*ga)[i] += gy * (tb.data[i] / (na * nb) - c * ta.data[i] / (na * na));
                if (auto* gb = grad_sink(n.inputs[1]))
                    for (long i = 0; i < tb.size(); ++i)
                        (*gb)[i] += gy * (ta.data[i] / (na * nb) - c * tb.data[i] / (nb * nb));
                return;
            }
            case Op::embedding_lookup: {
                const int d = n.value.dim(0);
                if (auto* g = grad_sink(n.inputs[0]))
                    for (int i = 0; i < d; ++i) (*g)[static_cast<long>(n.attr_a) * d + i] += n.grad[i];
                return;
            }
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, NodeId> leaf_ids_;
};

// Standard LSTM cell over a fused gate matrix. `w` has shape
// (4H x (X+H)) with gate blocks ordered [input; forget; cell; output],
// `b` has shape (4H).
struct LstmState {
    NodeId h;
    NodeId c;
};

inline LstmState lstm_cell_step(Graph& g, NodeId w, NodeId b, NodeId x, NodeId h, NodeId c) {
    const int hidden = g.value(h).dim(0);
    const int in = g.value(x).dim(0);
    const Tensor& tw = g.value(w);
    if (tw.rank() != 2 || tw.dim(0) != 4 * hidden || tw.dim(1) != in + hidden)
        throw ValidationError("lstm_cell_step: weight shape " + tw.shape_string() +
                              " does not match input " + std::to_string(in) + " + hidden " +
                              std::to_string(hidden));
    if (g.value(b).size() != 4 * hidden)
        throw ValidationError("lstm_cell_step: bias size mismatch");
    if (g.value(c).dim(0) != hidden) throw ValidationError("lstm_cell_step: cell size mismatch");

    const NodeId xh = g.concat({x, h});
    const NodeId pre = g.add(g.matmul(w, xh), b);
    const NodeId gate_i = g.sigmoid(g.slice(pre, 0, hidden));
    const NodeId gate_f = g.sigmoid(g.slice(pre, hidden, hidden));
    const NodeId gate_g = g.tanh(g.slice(pre, 2 * hidden, hidden));
    const NodeId gate_o = g.sigmoid(g.slice(pre, 3 * hidden, hidden));
    const NodeId c_next = g.add(g.hadamard(gate_f, c), g.hadamard(gate_i, gate_g));
    const NodeId h_next = g.hadamard(gate_o, g.tanh(c_next));
    return {h_next, c_next};
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moments are keyed by parameter name so the
// state survives checkpointing. One adam_step call advances the shared
// step count once and updates exactly the parameters it is handed.
struct AdamState {
    AdamConfig config;
    long step_count = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

inline void adam_step(const std::vector<NamedParam>& params,
                      const std::map<const Tensor*, std::vector<double>>& grads, AdamState& state) {
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step_count));
    for (const NamedParam& p : params) {
        auto it = grads.find(p.tensor);
        if (it == grads.end()) continue;
        const std::vector<double>& g = it->second;
        if (g.size() != p.tensor->data.size())
            throw ValidationError("adam_step: gradient size mismatch for " + p.name);
        auto& [m, v] = state.moments[p.name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.config.beta1 * m[i] + (1.0 - state.config.beta1) * g[i];
            v[i] = state.config.beta2 * v[i] + (1.0 - state.config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p.tensor->data[i] -= state.config.lr * m_hat / (std::sqrt(v_hat) + state.config.eps);
        }
    }
}

// Central finite differences of a rebuilt loss graph against the analytic
// gradients of one backward pass. Returns the worst relative deviation,
// with the denominator floored at 1e-3 so dead units (zero gradient both
// ways) do not produce spurious ratios.
inline double gradient_check(const std::function<NodeId(Graph&)>& build,
                             const std::vector<Tensor*>& params, double eps = 1e-5) {
    std::map<const Tensor*, std::vector<double>> analytic;
    {
        Graph g;
        const NodeId loss = build(g);
        g.backward(loss);
        g.accumulate_leaf_grads(analytic);
    }
    auto eval = [&]() {
        Graph g;
        return g.value(build(g)).data[0];
    };

    double worst = 0.0;
    for (Tensor* p : params) {
        const auto it = analytic.find(p);
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double saved = p->data[i];
            p->data[i] = saved + eps;
            const double f_plus = eval();
            p->data[i] = saved - eps;
            const double f_minus = eval();
            p->data[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = it == analytic.end() ? 0.0 : it->second[i];
            const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-3);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace imucoco
