#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gft/array.hpp"

namespace gft {

// Reverse-mode automatic differentiation over dense double arrays.
//
// Each operation records a node holding its result, its parents, and a
// closure that pushes the node's adjoint into its parents' adjoints.
// backward() walks the graph once in reverse topological order using
// per-call adjoint buffers, then adds the result into every node's grad,
// so repeated backward calls accumulate additively until zero_grad().

class Value;

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// parent_adj(i) returns a mutable adjoint buffer for parents[i]
using BackwardFn =
    std::function<void(const Node& self, const Array& self_adj,
                       const std::function<Array&(std::size_t)>& parent_adj)>;

struct Node {
    Array data;
    Array grad;
    const char* op;
    std::vector<NodePtr> parents;
    BackwardFn backward_fn;

    Node(Array d, const char* o, std::vector<NodePtr> p, BackwardFn fn)
        : data(std::move(d)),
          grad(data.rows(), data.cols(), 0.0),
          op(o),
          parents(std::move(p)),
          backward_fn(std::move(fn)) {}
};

}  // namespace detail

class Value {
public:
    explicit Value(detail::NodePtr n) : n_(std::move(n)) {}

    static Value constant(Array a) {
        return Value(std::make_shared<detail::Node>(std::move(a), "const",
                                                    std::vector<detail::NodePtr>{}, nullptr));
    }
    static Value constant(double x) { return constant(Array::scalar(x)); }
    static Value parameter(Array a) {
        return Value(std::make_shared<detail::Node>(std::move(a), "param",
                                                    std::vector<detail::NodePtr>{}, nullptr));
    }

    const Array& data() const { return n_->data; }
    Array& mutable_data() { return n_->data; }
    const Array& grad() const { return n_->grad; }
    const Shape& shape() const { return n_->data.shape(); }
    const char* op() const { return n_->op; }
    double item() const { return n_->data.item(); }

    void zero_grad() { n_->grad.fill(0.0); }

    detail::NodePtr node() const { return n_; }

private:
    detail::NodePtr n_;
};

namespace detail {

inline Value make_op(Array data, const char* op, std::vector<NodePtr> parents, BackwardFn fn) {
    return Value(std::make_shared<Node>(std::move(data), op, std::move(parents), std::move(fn)));
}

inline void check_same_shape(const char* op, const Value& a, const Value& b) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) {
    detail::check_same_shape("add", a, b);
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_op(std::move(out), "add", {a.node(), b.node()},
                           [](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               Array& gb = padj(1);
                               for (std::size_t i = 0; i < adj.size(); ++i) {
                                   ga[i] += adj[i];
                                   gb[i] += adj[i];
                               }
                           });
}

inline Value mul(const Value& a, const Value& b) {
    detail::check_same_shape("mul", a, b);
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_op(std::move(out), "mul", {a.node(), b.node()},
                           [](const detail::Node& self, const Array& adj, const auto& padj) {
                               const Array& da = self.parents[0]->data;
                               const Array& db = self.parents[1]->data;
                               Array& ga = padj(0);
                               Array& gb = padj(1);
                               for (std::size_t i = 0; i < adj.size(); ++i) {
                                   ga[i] += adj[i] * db[i];
                                   gb[i] += adj[i] * da[i];
                               }
                           });
}

inline Value scale(const Value& a, double c) {
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    return detail::make_op(std::move(out), "scale", {a.node()},
                           [c](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < adj.size(); ++i) ga[i] += adj[i] * c;
                           });
}

inline Value matmul(const Value& a, const Value& b) {
    const int m = a.shape().rows, k = a.shape().cols;
    const int k2 = b.shape().rows, n = b.shape().cols;
    if (k != k2)
        throw ShapeError("matmul: inner dimensions disagree " + a.shape().str() + " vs " +
                         b.shape().str());
    Array out(m, n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a.data().at(i, p);
            for (int j = 0; j < n; ++j) out.at(i, j) += av * b.data().at(p, j);
        }
    return detail::make_op(
        std::move(out), "matmul", {a.node(), b.node()},
        [m, k, n](const detail::Node& self, const Array& adj, const auto& padj) {
            const Array& da = self.parents[0]->data;
            const Array& db = self.parents[1]->data;
            Array& ga = padj(0);
            Array& gb = padj(1);
            // dA += adj * B^T ; dB += A^T * adj
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double g = adj.at(i, j);
                    for (int p = 0; p < k; ++p) {
                        ga.at(i, p) += g * db.at(p, j);
                        gb.at(p, j) += da.at(i, p) * g;
                    }
                }
        });
}

// Select rows of a matrix: out[i, :] = m[indices[i], :]. Used for embedding
// lookup and tabular context rows; backward scatter-adds.
inline Value gather_rows(const Value& m, const std::vector<int>& indices) {
    const int rows = m.shape().rows, cols = m.shape().cols;
    for (int idx : indices)
        if (idx < 0 || idx >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                             m.shape().str());
    Array out(static_cast<int>(indices.size()), cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (int c = 0; c < cols; ++c) out.at(static_cast<int>(i), c) = m.data().at(indices[i], c);
    return detail::make_op(std::move(out), "gather_rows", {m.node()},
                           [indices, cols](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& gm = padj(0);
                               for (std::size_t i = 0; i < indices.size(); ++i)
                                   for (int c = 0; c < cols; ++c)
                                       gm.at(indices[i], c) += adj.at(static_cast<int>(i), c);
                           });
}

// Pick one element by flat index, producing a scalar.
inline Value gather(const Value& v, int flat_index) {
    if (flat_index < 0 || static_cast<std::size_t>(flat_index) >= v.data().size())
        throw ShapeError("gather: index " + std::to_string(flat_index) + " out of range for " +
                         v.shape().str());
    return detail::make_op(Array::scalar(v.data()[static_cast<std::size_t>(flat_index)]), "gather",
                           {v.node()},
                           [flat_index](const detail::Node&, const Array& adj, const auto& padj) {
                               padj(0)[static_cast<std::size_t>(flat_index)] += adj[0];
                           });
}

inline Value log(const Value& a) {
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.data()[i] <= 0.0)
            throw DomainError("log: non-positive input " + std::to_string(a.data()[i]));
        out[i] = std::log(a.data()[i]);
    }
    return detail::make_op(std::move(out), "log", {a.node()},
                           [](const detail::Node& self, const Array& adj, const auto& padj) {
                               const Array& da = self.parents[0]->data;
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < adj.size(); ++i) ga[i] += adj[i] / da[i];
                           });
}

inline Value exp(const Value& a) {
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
    return detail::make_op(std::move(out), "exp", {a.node()},
                           [](const detail::Node& self, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < adj.size(); ++i)
                                   ga[i] += adj[i] * self.data[i];
                           });
}

inline Value tanh(const Value& a) {
    Array out(a.shape().rows, a.shape().cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
    return detail::make_op(std::move(out), "tanh", {a.node()},
                           [](const detail::Node& self, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < adj.size(); ++i)
                                   ga[i] += adj[i] * (1.0 - self.data[i] * self.data[i]);
                           });
}

// Row-wise log-softmax with max-subtraction stabilization.
inline Value log_softmax(const Value& a) {
    const int rows = a.shape().rows, cols = a.shape().cols;
    Array out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        double m = a.data().at(r, 0);
        for (int c = 1; c < cols; ++c) m = std::max(m, a.data().at(r, c));
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += std::exp(a.data().at(r, c) - m);
        const double lse = m + std::log(s);
        for (int c = 0; c < cols; ++c) out.at(r, c) = a.data().at(r, c) - lse;
    }
    return detail::make_op(std::move(out), "log_softmax", {a.node()},
                           [rows, cols](const detail::Node& self, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (int r = 0; r < rows; ++r) {
                                   double total = 0.0;
                                   for (int c = 0; c < cols; ++c) total += adj.at(r, c);
                                   for (int c = 0; c < cols; ++c)
                                       ga.at(r, c) += adj.at(r, c) -
                                                      std::exp(self.data.at(r, c)) * total;
                               }
                           });
}

inline Value sum(const Value& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i];
    return detail::make_op(Array::scalar(s), "sum", {a.node()},
                           [](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += adj[0];
                           });
}

inline Value mean(const Value& a) {
    const double n = static_cast<double>(a.data().size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i];
    return detail::make_op(Array::scalar(s / n), "mean", {a.node()},
                           [n](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += adj[0] / n;
                           });
}

// n-ary elementwise sum; keeps batch graphs shallow.
inline Value add_n(const std::vector<Value>& xs) {
    if (xs.empty()) throw ShapeError("add_n: empty operand list");
    for (const Value& x : xs) detail::check_same_shape("add_n", xs[0], x);
    Array out(xs[0].shape().rows, xs[0].shape().cols, 0.0);
    std::vector<detail::NodePtr> parents;
    parents.reserve(xs.size());
    for (const Value& x : xs) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.data()[i];
        parents.push_back(x.node());
    }
    const std::size_t k = xs.size();
    return detail::make_op(std::move(out), "add_n", std::move(parents),
                           [k](const detail::Node&, const Array& adj, const auto& padj) {
                               for (std::size_t p = 0; p < k; ++p) {
                                   Array& gp = padj(p);
                                   for (std::size_t i = 0; i < adj.size(); ++i) gp[i] += adj[i];
                               }
                           });
}

inline Value reshape(const Value& a, int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != a.shape().numel())
        throw ShapeError("reshape: cannot view " + a.shape().str() + " as " +
                         Shape{rows, cols}.str());
    Array out(rows, cols);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i];
    return detail::make_op(std::move(out), "reshape", {a.node()},
                           [](const detail::Node&, const Array& adj, const auto& padj) {
                               Array& ga = padj(0);
                               for (std::size_t i = 0; i < adj.size(); ++i) ga[i] += adj[i];
                           });
}

// Identical forward data, no gradient path to the input.
inline Value stop_gradient(const Value& a) {
    return detail::make_op(a.data(), "stop_gradient", {}, nullptr);
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator*(double c, const Value& a) { return scale(a, c); }
inline Value operator*(const Value& a, double c) { return scale(a, c); }
inline Value operator-(const Value& a) { return scale(a, -1.0); }

namespace detail {

// Reverse topological order (root last) via iterative post-order DFS.
inline std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace detail

// Accumulate d(root)/d(node) into every reachable node's grad.
inline void backward(const Value& root) {
    if (!root.shape().is_scalar())
        throw ShapeError("backward: root must be scalar, got " + root.shape().str());

    std::vector<detail::Node*> order = detail::topo_order(root.node().get());
    std::unordered_map<detail::Node*, Array> adj;
    adj.emplace(root.node().get(), Array::scalar(1.0));

    auto adj_of = [&adj](detail::Node* n) -> Array& {
        auto it = adj.find(n);
        if (it == adj.end())
            it = adj.emplace(n, Array(n->data.rows(), n->data.cols(), 0.0)).first;
        return it->second;
    };

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        auto found = adj.find(node);
        if (found == adj.end() || !node->backward_fn) continue;
        const Array& self_adj = found->second;
        auto parent_adj = [&](std::size_t i) -> Array& { return adj_of(node->parents[i].get()); };
        node->backward_fn(*node, self_adj, parent_adj);
    }

    for (detail::Node* node : order) {
        auto found = adj.find(node);
        if (found == adj.end()) continue;
        const Array& a = found->second;
        for (std::size_t i = 0; i < a.size(); ++i) node->grad[i] += a[i];
    }
}

using GradMap = std::map<std::string, Array>;

// Named flat list of trainable arrays; copying clones the underlying nodes
// so snapshots are deep and detached.
class ParameterVector {
public:
    ParameterVector() = default;

    ParameterVector(const ParameterVector& o) { *this = o; }
    ParameterVector& operator=(const ParameterVector& o) {
        if (this == &o) return *this;
        entries_.clear();
        index_.clear();
        for (const auto& e : o.entries_) add(e.name, e.value.data());
        return *this;
    }
    ParameterVector(ParameterVector&&) = default;
    ParameterVector& operator=(ParameterVector&&) = default;

    Value add(const std::string& name, Array init) {
        if (index_.count(name))
            throw ConfigError("ParameterVector: duplicate parameter name '" + name + "'");
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, Value::parameter(std::move(init))});
        return entries_.back().value;
    }

    Value get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ConfigError("ParameterVector: unknown parameter '" + name + "'");
        return entries_[it->second].value;
    }

    std::size_t count() const { return entries_.size(); }
    const std::string& name_at(std::size_t i) const { return entries_[i].name; }
    Value value_at(std::size_t i) const { return entries_[i].value; }

    std::size_t flat_size() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.data().size();
        return n;
    }

    double get_flat(std::size_t i) const {
        auto [e, off] = locate(i);
        return entries_[e].value.data()[off];
    }
    void set_flat(std::size_t i, double x) {
        auto [e, off] = locate(i);
        entries_[e].value.node()->data[off] = x;
    }
    std::string flat_name(std::size_t i) const {
        auto [e, off] = locate(i);
        return entries_[e].name + "[" + std::to_string(off) + "]";
    }

    void zero_grad() {
        for (auto& e : entries_) e.value.node()->grad.fill(0.0);
    }

    GradMap grads() const {
        GradMap g;
        for (const auto& e : entries_) g.emplace(e.name, e.value.grad());
        return g;
    }

private:
    struct Entry {
        std::string name;
        Value value;
    };

    std::pair<std::size_t, std::size_t> locate(std::size_t i) const {
        for (std::size_t e = 0; e < entries_.size(); ++e) {
            const std::size_t n = entries_[e].value.data().size();
            if (i < n) return {e, i};
            i -= n;
        }
        throw ConfigError("ParameterVector: flat index out of range");
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline GradMap backward(const Value& root, const ParameterVector& params) {
    backward(root);
    return params.grads();
}

// Central finite differences against the analytic gradient. The loss builder
// must hold every stop-gradient-wrapped quantity fixed at the evaluation
// point (frozen-weight convention) so both sides measure the same function.
//
// Relative error per coordinate is |analytic - numeric| / (|numeric| + 1e-12).
// A disagreement below the difference quotient's own rounding floor
// (~eps * |loss| / step) counts as exact: the quotient is built from a few
// ulps of the loss, so differences under that floor carry no information.
// Group-centered losses hit this on coordinates that cancel to a true zero.
inline double finite_difference_check(const std::function<Value()>& loss_fn,
                                      ParameterVector& params, double step = 1e-5) {
    params.zero_grad();
    Value loss = loss_fn();
    backward(loss);
    GradMap analytic = params.grads();

    const double fd_noise = 50.0 * std::numeric_limits<double>::epsilon() *
                            (std::fabs(loss.item()) + 1.0) / (2.0 * step);
    double max_rel = 0.0;
    std::size_t flat = 0;
    for (std::size_t e = 0; e < params.count(); ++e) {
        const std::string& name = params.name_at(e);
        const Array& g = analytic.at(name);
        Value v = params.value_at(e);
        for (std::size_t i = 0; i < g.size(); ++i, ++flat) {
            const double orig = v.node()->data[i];
            double fp = 0.0, fm = 0.0;
            try {
                v.node()->data[i] = orig + step;
                fp = loss_fn().item();
                v.node()->data[i] = orig - step;
                fm = loss_fn().item();
            } catch (const GftError& err) {
                v.node()->data[i] = orig;
                throw NumericAbort("finite_difference_check: loss failed probing parameter " +
                                   params.flat_name(flat) + ": " + err.what());
            }
            v.node()->data[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericAbort("finite_difference_check: non-finite loss probing parameter " +
                                   params.flat_name(flat));
            const double numeric = (fp - fm) / (2.0 * step);
            if (std::fabs(g[i] - numeric) < fd_noise) continue;
            const double rel = std::fabs(g[i] - numeric) / (std::fabs(numeric) + 1e-12);
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace gft
