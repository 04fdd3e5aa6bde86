#pragma once

#include "mdlm/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mdlm {

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    std::size_t rows() const;
    std::size_t cols() const;
    std::span<const double> value() const;
    // Value of a 1x1 node.
    double item() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the node
// vector is already a topological order and backward walks it in reverse.
//
// Parameter leaves view the Tensor's storage directly; the Tensor must not be
// mutated while a graph referencing it is alive.
class Graph {
public:
    enum class Mode { kTrain, kInference };

    explicit Graph(Mode mode = Mode::kTrain) : mode_(mode) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return mode_ == Mode::kTrain; }

    Var constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    Var constant(const Tensor& t);
    // Gradients reach `p` only if p.requires_grad() and the graph is in train mode.
    Var parameter(Tensor& p);
    Var parameter(const Tensor& p);

    std::size_t size() const { return nodes_.size(); }
    std::size_t rows(Var v) const { return nodes_[v.id].rows; }
    std::size_t cols(Var v) const { return nodes_[v.id].cols; }
    std::span<const double> value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    // Populates grads of every requires_grad leaf reachable from `loss`.
    // Leaf gradients accumulate across calls; node-local buffers are reset.
    void backward(Var loss);

    // ---- op-construction interface -------------------------------------
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    // Appends a computed node. `parents` determine requires_grad; `fn` is
    // dropped when no parent needs a gradient.
    Var emit(std::size_t rows, std::size_t cols, std::vector<double> values,
             std::initializer_list<Var> parents, BackwardFn fn);

    std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
    // Gradient buffer of `v`, zero-initialised on first access; empty span if
    // `v` does not require a gradient.
    std::span<double> grad_sink(Var v);

private:
    struct Node {
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::vector<double> storage;
        const double* view = nullptr;
        Tensor* leaf = nullptr;
        bool requires_grad = false;
        std::vector<double> grad;
        BackwardFn backward;

        const double* data() const { return view ? view : storage.data(); }
    };

    Mode mode_;
    std::vector<Node> nodes_;
};

// ---- operations ---------------------------------------------------------
// All tensors are treated as 2-D (rows x cols); a scalar is 1x1.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a[m x n] + bias[1 x n] broadcast over rows.
Var add_row(Var a, Var bias);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
// tanh approximation of GELU.
Var gelu(Var a);
// log(sigmoid(a)), computed stably.
Var log_sigmoid(Var a);
Var sum(Var a);
Var mean(Var a);
// Row-wise layer normalisation with affine gamma/beta of shape [1 x n].
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
// Row-wise log-softmax stabilised by the row max.
Var log_softmax_rows(Var x);
// Rows of `table` selected by `ids` -> [ids.size() x table.cols].
Var embedding(Var table, std::span<const std::size_t> ids);
Var select_rows(Var x, std::span<const std::size_t> rows);
// [k x 1] column with x[rows[i], cols[i]].
Var pick(Var x, std::span<const std::size_t> rows, std::span<const std::size_t> cols);
// Per-row forward KL(exp(logp_row) || exp(logq_row)) against a constant target,
// [n x 1]. Throws DivergenceUndefinedError if q is zero where p is positive.
Var kl_rows_to_constant(Var logp, std::span<const double> logq);
// Fused multi-head self-attention over packed [L x 3d] projections (Q|K|V).
// `key_allowed[j] == false` removes key j from every query's softmax.
Var multi_head_attention(Var qkv, std::size_t n_heads, std::span<const char> key_allowed);
// Value copy without gradient.
Var detach(Var a);

}  // namespace mdlm
