#include "mdlm/autodiff.hpp"

#include "mdlm/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mdlm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(Var v) { return ConstMap(v.value().data(), v.rows(), v.cols()); }

void require_same_graph(Var a, Var b) {
    if (a.graph != b.graph || a.graph == nullptr) {
        throw ContractError("operands belong to different graphs");
    }
}

void require_same_shape(Var a, Var b, const char* op) {
    require_same_graph(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

template <class Fwd, class Deriv>
Var elementwise(Var a, Fwd fwd, Deriv deriv) {
    auto x = a.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = fwd(x[i]);
    }
    const std::size_t ia = a.id;
    return a.graph->emit(a.rows(), a.cols(), std::move(out), {a}, [ia, deriv](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto x = g.value(Var{&g, ia});
        auto y = g.value(Var{&g, self});
        auto da = g.grad_sink(Var{&g, ia});
        for (std::size_t i = 0; i < up.size(); ++i) {
            da[i] += up[i] * deriv(x[i], y[i]);
        }
    });
}

}  // namespace

// ---- Var ------------------------------------------------------------------

std::size_t Var::rows() const { return graph->rows(*this); }
std::size_t Var::cols() const { return graph->cols(*this); }
std::span<const double> Var::value() const { return graph->value(*this); }

double Var::item() const {
    if (rows() != 1 || cols() != 1) {
        throw ContractError("item() requires a 1x1 value");
    }
    return value()[0];
}

// ---- Graph ----------------------------------------------------------------

Var Graph::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (rows * cols != values.size() || rows == 0 || cols == 0) {
        throw DimensionError("constant: bad shape");
    }
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.storage = std::move(values);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Graph::constant(const Tensor& t) {
    return constant(t.rows(), t.cols(), std::vector<double>(t.values().begin(), t.values().end()));
}

Var Graph::parameter(Tensor& p) {
    Node n;
    n.rows = p.rows();
    n.cols = p.cols();
    n.view = p.values().data();
    n.requires_grad = grad_enabled() && p.requires_grad();
    n.leaf = n.requires_grad ? &p : nullptr;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(const Tensor& p) {
    Node n;
    n.rows = p.rows();
    n.cols = p.cols();
    n.view = p.values().data();
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

std::span<const double> Graph::value(Var v) const {
    const Node& n = nodes_[v.id];
    return {n.data(), n.rows * n.cols};
}

Var Graph::emit(std::size_t rows, std::size_t cols, std::vector<double> values,
                std::initializer_list<Var> parents, BackwardFn fn) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.storage = std::move(values);
    if (grad_enabled()) {
        for (const Var& p : parents) {
            if (p.graph != this) {
                throw ContractError("parent from a different graph");
            }
            n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
        }
    }
    if (n.requires_grad) {
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

std::span<double> Graph::grad_sink(Var v) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) {
        return {};
    }
    if (n.grad.empty()) {
        n.grad.assign(n.rows * n.cols, 0.0);
    }
    return n.grad;
}

void Graph::backward(Var loss) {
    if (loss.graph != this) {
        throw ContractError("backward: loss belongs to another graph");
    }
    if (rows(loss) != 1 || cols(loss) != 1) {
        throw ContractError("backward requires a scalar loss, got " + std::to_string(rows(loss)) + "x" +
                            std::to_string(cols(loss)));
    }
    for (Node& n : nodes_) {
        n.grad.clear();
    }
    if (!nodes_[loss.id].requires_grad) {
        return;
    }
    nodes_[loss.id].grad.assign(1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) {
            continue;
        }
        if (n.backward) {
            n.backward(*this, i);
        } else if (n.leaf) {
            n.leaf->accumulate_grad(n.grad);
        }
    }
}

// ---- ops ------------------------------------------------------------------

Var matmul(Var a, Var b) {
    require_same_graph(a, b);
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree (" + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()) + ")");
    }
    const std::size_t m = a.rows();
    const std::size_t n = b.cols();
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = as_matrix(a) * as_matrix(b);
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->emit(m, n, std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
        Var va{&g, ia}, vb{&g, ib};
        ConstMap up(g.grad(self).data(), va.rows(), vb.cols());
        if (auto da = g.grad_sink(va); !da.empty()) {
            MutMap(da.data(), va.rows(), va.cols()).noalias() += up * as_matrix(vb).transpose();
        }
        if (auto db = g.grad_sink(vb); !db.empty()) {
            MutMap(db.data(), vb.rows(), vb.cols()).noalias() += as_matrix(va).transpose() * up;
        }
    });
}

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    auto x = a.value();
    auto y = b.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] + y[i];
    }
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->emit(a.rows(), a.cols(), std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        for (std::size_t id : {ia, ib}) {
            auto d = g.grad_sink(Var{&g, id});
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] += up[i];
            }
        }
    });
}

Var sub(Var a, Var b) { return add(a, neg(b)); }

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    auto x = a.value();
    auto y = b.value();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    const std::size_t ia = a.id, ib = b.id;
    return a.graph->emit(a.rows(), a.cols(), std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto x = g.value(Var{&g, ia});
        auto y = g.value(Var{&g, ib});
        if (auto da = g.grad_sink(Var{&g, ia}); !da.empty()) {
            for (std::size_t i = 0; i < up.size(); ++i) {
                da[i] += up[i] * y[i];
            }
        }
        if (auto db = g.grad_sink(Var{&g, ib}); !db.empty()) {
            for (std::size_t i = 0; i < up.size(); ++i) {
                db[i] += up[i] * x[i];
            }
        }
    });
}

Var add_row(Var a, Var bias) {
    require_same_graph(a, bias);
    if (bias.rows() != 1 || bias.cols() != a.cols()) {
        throw DimensionError("add_row: bias must be 1x" + std::to_string(a.cols()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    auto x = a.value();
    auto b = bias.value();
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            out[r * n + c] = x[r * n + c] + b[c];
        }
    }
    const std::size_t ia = a.id, ib = bias.id;
    return a.graph->emit(m, n, std::move(out), {a, bias}, [ia, ib, m, n](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        if (auto da = g.grad_sink(Var{&g, ia}); !da.empty()) {
            for (std::size_t i = 0; i < up.size(); ++i) {
                da[i] += up[i];
            }
        }
        if (auto db = g.grad_sink(Var{&g, ib}); !db.empty()) {
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    db[c] += up[r * n + c];
                }
            }
        }
    });
}

Var scale(Var a, double c) {
    return elementwise(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
    return elementwise(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
    return elementwise(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return elementwise(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var gelu(Var a) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c = 0.044715;
    return elementwise(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
        [](double x, double) {
            const double th = std::tanh(k * (x + c * x * x * x));
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x * x);
        });
}

Var log_sigmoid(Var a) {
    return elementwise(
        a,
        [](double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); },
        [](double x, double) {
            // d/dx log sigmoid(x) = sigmoid(-x)
            return x >= 0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
        });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value()) {
        s += v;
    }
    const std::size_t ia = a.id;
    return a.graph->emit(1, 1, {s}, {a}, [ia](Graph& g, std::size_t self) {
        const double up = g.grad(self)[0];
        for (double& d : g.grad_sink(Var{&g, ia})) {
            d += up;
        }
    });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.rows() * a.cols())); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    require_same_graph(x, gamma);
    require_same_graph(x, beta);
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
        throw DimensionError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
    }
    auto xv = x.value();
    auto gv = gamma.value();
    auto bv = beta.value();
    std::vector<double> out(m * n);
    std::vector<double> xhat(m * n);
    std::vector<double> inv_std(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = xv.data() + r * n;
        double mu = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            var += (row[c] - mu) * (row[c] - mu);
        }
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) {
            const double h = (row[c] - mu) * inv_std[r];
            xhat[r * n + c] = h;
            out[r * n + c] = h * gv[c] + bv[c];
        }
    }
    const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
    return x.graph->emit(
        m, n, std::move(out), {x, gamma, beta},
        [ix, ig, ib, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
            auto up = g.grad(self);
            auto gv = g.value(Var{&g, ig});
            if (auto db = g.grad_sink(Var{&g, ib}); !db.empty()) {
                for (std::size_t i = 0; i < up.size(); ++i) {
                    db[i % n] += up[i];
                }
            }
            if (auto dg = g.grad_sink(Var{&g, ig}); !dg.empty()) {
                for (std::size_t i = 0; i < up.size(); ++i) {
                    dg[i % n] += up[i] * xhat[i];
                }
            }
            auto dx = g.grad_sink(Var{&g, ix});
            if (dx.empty()) {
                return;
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < m; ++r) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    const double dh = up[r * n + c] * gv[c];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[r * n + c];
                }
                mean_dh *= inv_n;
                mean_dh_h *= inv_n;
                for (std::size_t c = 0; c < n; ++c) {
                    const double dh = up[r * n + c] * gv[c];
                    dx[r * n + c] += inv_std[r] * (dh - mean_dh - xhat[r * n + c] * mean_dh_h);
                }
            }
        });
}

Var log_softmax_rows(Var x) {
    const std::size_t m = x.rows(), n = x.cols();
    auto xv = x.value();
    std::vector<double> out(m * n);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = xv.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            s += std::exp(row[c] - mx);
        }
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < n; ++c) {
            out[r * n + c] = row[c] - lse;
        }
    }
    const std::size_t ix = x.id;
    return x.graph->emit(m, n, std::move(out), {x}, [ix, m, n](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto y = g.value(Var{&g, self});
        auto dx = g.grad_sink(Var{&g, ix});
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                s += up[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
                dx[r * n + c] += up[r * n + c] - std::exp(y[r * n + c]) * s;
            }
        }
    });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
    const std::size_t v = table.rows(), d = table.cols();
    auto tv = table.value();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] >= v) {
            throw InputError("embedding: id " + std::to_string(ids[i]) + " out of range " + std::to_string(v));
        }
        std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
    }
    const std::size_t it = table.id;
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return table.graph->emit(ids.size(), d, std::move(out), {table},
                             [it, d, idx = std::move(idx)](Graph& g, std::size_t self) {
                                 auto up = g.grad(self);
                                 auto dt = g.grad_sink(Var{&g, it});
                                 for (std::size_t i = 0; i < idx.size(); ++i) {
                                     for (std::size_t c = 0; c < d; ++c) {
                                         dt[idx[i] * d + c] += up[i * d + c];
                                     }
                                 }
                             });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
    const std::size_t m = x.rows();
    for (auto r : rows) {
        if (r >= m) {
            throw DimensionError("select_rows: row " + std::to_string(r) + " out of range");
        }
    }
    if (rows.empty()) {
        throw DimensionError("select_rows: empty selection");
    }
    return embedding(x, rows);
}

Var pick(Var x, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
    if (rows.size() != cols.size() || rows.empty()) {
        throw DimensionError("pick: rows/cols must be non-empty and equally long");
    }
    const std::size_t m = x.rows(), n = x.cols();
    auto xv = x.value();
    std::vector<double> out(rows.size());
    std::vector<std::size_t> flat(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m || cols[i] >= n) {
            throw DimensionError("pick: index out of range");
        }
        flat[i] = rows[i] * n + cols[i];
        out[i] = xv[flat[i]];
    }
    const std::size_t ix = x.id;
    return x.graph->emit(rows.size(), 1, std::move(out), {x}, [ix, flat = std::move(flat)](Graph& g, std::size_t self) {
        auto up = g.grad(self);
        auto dx = g.grad_sink(Var{&g, ix});
        for (std::size_t i = 0; i < flat.size(); ++i) {
            dx[flat[i]] += up[i];
        }
    });
}

Var kl_rows_to_constant(Var logp, std::span<const double> logq) {
    const std::size_t m = logp.rows(), n = logp.cols();
    if (logq.size() != m * n) {
        throw DimensionError("kl_rows_to_constant: target size mismatch");
    }
    auto lp = logp.value();
    std::vector<double> out(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        double kl = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const std::size_t i = r * n + c;
            const double p = std::exp(lp[i]);
            if (p == 0.0) {
                continue;
            }
            if (!std::isfinite(logq[i])) {
                throw DivergenceUndefinedError("KL undefined: target has zero mass where p > 0");
            }
            kl += p * (lp[i] - logq[i]);
        }
        out[r] = kl;
    }
    const std::size_t ip = logp.id;
    std::vector<double> target(logq.begin(), logq.end());
    return logp.graph->emit(m, 1, std::move(out), {logp},
                            [ip, n, target = std::move(target)](Graph& g, std::size_t self) {
                                auto up = g.grad(self);
                                auto lp = g.value(Var{&g, ip});
                                auto d = g.grad_sink(Var{&g, ip});
                                for (std::size_t i = 0; i < d.size(); ++i) {
                                    const double p = std::exp(lp[i]);
                                    if (p == 0.0) {
                                        continue;
                                    }
                                    d[i] += up[i / n] * p * (lp[i] - target[i] + 1.0);
                                }
                            });
}

Var multi_head_attention(Var qkv, std::size_t n_heads, std::span<const char> key_allowed) {
    const std::size_t len = qkv.rows();
    if (qkv.cols() % 3 != 0 || n_heads == 0 || (qkv.cols() / 3) % n_heads != 0) {
        throw DimensionError("attention: packed width must be 3*d with d divisible by n_heads");
    }
    if (key_allowed.size() != len) {
        throw DimensionError("attention: key mask length mismatch");
    }
    if (std::none_of(key_allowed.begin(), key_allowed.end(), [](char c) { return c != 0; })) {
        throw InputError("attention: every key is masked");
    }
    const std::size_t d = qkv.cols() / 3;
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    ConstMap x = as_matrix(qkv);
    std::vector<double> out(len * d);
    MutMap o(out.data(), len, d);
    std::vector<RowMat> probs(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        auto q = x.middleCols(h * dh, dh);
        auto k = x.middleCols(d + h * dh, dh);
        auto v = x.middleCols(2 * d + h * dh, dh);
        RowMat s = (q * k.transpose()) * inv_sqrt;
        for (std::size_t i = 0; i < len; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < len; ++j) {
                if (key_allowed[j]) {
                    mx = std::max(mx, s(i, j));
                }
            }
            double z = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                s(i, j) = key_allowed[j] ? std::exp(s(i, j) - mx) : 0.0;
                z += s(i, j);
            }
            s.row(i) /= z;
        }
        o.middleCols(h * dh, dh).noalias() = s * v;
        probs[h] = std::move(s);
    }
    const std::size_t ix = qkv.id;
    return qkv.graph->emit(
        len, d, std::move(out), {qkv},
        [ix, len, d, dh, n_heads, inv_sqrt, probs = std::move(probs)](Graph& g, std::size_t self) {
            ConstMap up(g.grad(self).data(), len, d);
            ConstMap x(g.value(Var{&g, ix}).data(), len, 3 * d);
            auto sink = g.grad_sink(Var{&g, ix});
            MutMap dx(sink.data(), len, 3 * d);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const RowMat& p = probs[h];
                auto q = x.middleCols(h * dh, dh);
                auto k = x.middleCols(d + h * dh, dh);
                auto v = x.middleCols(2 * d + h * dh, dh);
                auto dout = up.middleCols(h * dh, dh);
                dx.middleCols(2 * d + h * dh, dh).noalias() += p.transpose() * dout;
                RowMat dp = dout * v.transpose();
                Eigen::VectorXd row_dot = (dp.cwiseProduct(p)).rowwise().sum();
                RowMat ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt;
                dx.middleCols(h * dh, dh).noalias() += ds * k;
                dx.middleCols(d + h * dh, dh).noalias() += ds.transpose() * q;
            }
        });
}

Var detach(Var a) {
    auto v = a.value();
    return a.graph->constant(a.rows(), a.cols(), std::vector<double>(v.begin(), v.end()));
}

}  // namespace mdlm
