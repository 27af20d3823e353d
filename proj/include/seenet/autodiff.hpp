#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape owns every intermediate value created while evaluating an expression.
// Nodes are appended in evaluation order, so the node list is a topological
// order; backward() walks it in exact reverse and accumulates gradients by
// summation across all paths.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seenet/tensor.hpp"

namespace seenet {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace ad {

using GradMap = std::map<std::string, Tensor>;
using Index = std::vector<std::size_t>;

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor t) { return push(std::move(t), false, {}, "constant"); }

    /// A differentiable input. Named leaves show up in the gradient map.
    Var leaf(Tensor t, std::string name = {}) {
        Var v = push(std::move(t), true, {}, "leaf");
        nodes_[v.id()].name = std::move(name);
        return v;
    }

    /// Appends a computed node. `rule` is dropped when no input requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward rule, const char* op) {
        bool needs = false;
        for (const Var& in : inputs) needs = needs || in.requires_grad();
        return push(std::move(value), needs, needs ? std::move(rule) : Backward{}, op);
    }

    Var record(Tensor value, std::span<const Var> inputs, Backward rule, const char* op) {
        bool needs = false;
        for (const Var& in : inputs) needs = needs || in.requires_grad();
        return push(std::move(value), needs, needs ? std::move(rule) : Backward{}, op);
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient slot of a node, zero-initialised on first touch. Only valid inside backward().
    Tensor& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor(n.value.shape(), 0.0);
            n.has_grad = true;
        }
        return n.grad;
    }

    /// Runs the reverse sweep from a scalar loss, returns gradients of named leaves, clears the tape.
    GradMap backward(Var loss) {
        if (loss.value().size() != 1)
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        GradMap out;
        if (loss.requires_grad()) {
            grad(loss.id())[0] = 1.0;
            for (std::size_t i = loss.id() + 1; i-- > 0;) {
                Node& n = nodes_[i];
                if (!n.has_grad) continue;
                if (n.rule) n.rule(*this, n.grad);
            }
            for (Node& n : nodes_)
                if (n.rule == nullptr && n.requires_grad && !n.name.empty()) {
                    Tensor g = n.has_grad ? std::move(n.grad) : Tensor(n.value.shape(), 0.0);
                    auto [it, fresh] = out.try_emplace(n.name, std::move(g));
                    if (!fresh)  // same name bound twice on this tape
                        for (std::size_t k = 0; k < it->second.size(); ++k) it->second[k] += g[k];
                }
        } else {
            for (Node& n : nodes_)
                if (n.requires_grad && !n.rule && !n.name.empty()) out.emplace(n.name, Tensor(n.value.shape(), 0.0));
        }
        clear();
        return out;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::string name;
        Backward rule;
    };

    Var push(Tensor t, bool requires_grad, Backward rule, const char* op) {
        if (!t.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
        nodes_.push_back(Node{std::move(t), Tensor{}, requires_grad, false, {}, std::move(rule)});
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;  // stable addresses: Var::value() references survive later pushes
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

inline MapC as_mat(const Tensor& t) { return MapC(t.raw().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
inline Map as_mat(Tensor& t) { return Map(t.raw().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

inline void require_same(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

inline void accumulate(Tape& tape, const Var& v, const Tensor& g) {
    if (!v.requires_grad()) return;
    auto dst = tape.grad(v.id()).values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
    detail::require_same("add", a, b);
    Tensor out(a.shape());
    auto x = a.value().values(), y = b.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    return a.tape().record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor& g) {
                               detail::accumulate(t, a, g);
                               detail::accumulate(t, b, g);
                           },
                           "add");
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same("sub", a, b);
    Tensor out(a.shape());
    auto x = a.value().values(), y = b.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    return a.tape().record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor& g) {
                               detail::accumulate(t, a, g);
                               if (b.requires_grad()) {
                                   auto d = t.grad(b.id()).values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
                               }
                           },
                           "sub");
}

inline Var hadamard(const Var& a, const Var& b) {
    detail::require_same("hadamard", a, b);
    Tensor out(a.shape());
    auto x = a.value().values(), y = b.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    return a.tape().record(std::move(out), {a, b},
                           [a, b](Tape& t, const Tensor& g) {
                               if (a.requires_grad()) {
                                   auto d = t.grad(a.id()).values();
                                   auto y = b.value().values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
                               }
                               if (b.requires_grad()) {
                                   auto d = t.grad(b.id()).values();
                                   auto x = a.value().values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
                               }
                           },
                           "hadamard");
}

inline Var scale(const Var& a, double c) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
    return a.tape().record(std::move(out), {a},
                           [a, c](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
                           },
                           "scale");
}

/// Multiplies every entry of x by the single value held in s.
inline Var scale_by(const Var& x, const Var& s) {
    if (s.value().size() != 1)
        throw DimensionError("scale_by: expected a scalar factor, got " + shape_str(s.shape()));
    const double c = s.value()[0];
    Tensor out(x.shape());
    auto xv = x.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * xv[i];
    return x.tape().record(std::move(out), {x, s},
                           [x, s](Tape& t, const Tensor& g) {
                               const double c = s.value()[0];
                               auto xv = x.value().values();
                               if (x.requires_grad()) {
                                   auto d = t.grad(x.id()).values();
                                   for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * g[i];
                               }
                               if (s.requires_grad()) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < xv.size(); ++i) acc += g[i] * xv[i];
                                   t.grad(s.id())[0] += acc;
                               }
                           },
                           "scale_by");
}

inline Var sigmoid(const Var& a) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
    // The rule reads this node's own output; its id is the next slot on the tape.
    const std::size_t self = a.tape().size();
    return a.tape().record(std::move(out), {a},
                       [a, self](Tape& t, const Tensor& g) {
                           auto d = t.grad(a.id()).values();
                           auto s = t.value(self).values();
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * s[i] * (1.0 - s[i]);
                       },
                       "sigmoid");
}

inline Var log(const Var& a) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(x[i]);
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               auto x = a.value().values();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
                           },
                           "log");
}

/// log(sigmoid(x)) evaluated without underflow.
inline Var log_sigmoid(const Var& a) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x[i] >= 0 ? -std::log1p(std::exp(-x[i])) : x[i] - std::log1p(std::exp(x[i]));
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               auto x = a.value().values();
                               for (std::size_t i = 0; i < d.size(); ++i) {
                                   // d/dx log sigma(x) = 1 - sigma(x) = sigma(-x)
                                   const double s = x[i] >= 0 ? std::exp(-x[i]) / (1.0 + std::exp(-x[i]))
                                                              : 1.0 / (1.0 + std::exp(x[i]));
                                   d[i] += g[i] * s;
                               }
                           },
                           "log_sigmoid");
}

inline Var relu(const Var& a) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0 ? x[i] : 0.0;
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               auto x = a.value().values();
                               for (std::size_t i = 0; i < d.size(); ++i)
                                   if (x[i] > 0) d[i] += g[i];
                           },
                           "relu");
}

inline Var tanh(const Var& a) {
    Tensor out(a.shape());
    auto x = a.value().values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               auto x = a.value().values();
                               for (std::size_t i = 0; i < d.size(); ++i) {
                                   const double y = std::tanh(x[i]);
                                   d[i] += g[i] * (1.0 - y * y);
                               }
                           },
                           "tanh");
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return a.tape().record(Tensor::scalar(s), {a},
                           [a](Tape& t, const Tensor& g) {
                               for (double& d : t.grad(a.id()).values()) d += g[0];
                           },
                           "sum");
}

inline Var mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), 1.0 / double(n));
}

/// Sum of squared entries.
inline Var sq_norm(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v * v;
    return a.tape().record(Tensor::scalar(s), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               auto x = a.value().values();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * x[i] * g[0];
                           },
                           "sq_norm");
}

/// Elementwise mean of same-shaped values. Throws on an empty set; callers decide what "empty" means.
inline Var mean_pool(std::span<const Var> xs) {
    if (xs.empty()) throw ContractError("mean_pool: empty set");
    for (const Var& x : xs) detail::require_same("mean_pool", xs.front(), x);
    Tensor out(xs.front().shape());
    auto o = out.values();
    for (const Var& x : xs) {
        auto v = x.value().values();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += v[i];
    }
    const double inv = 1.0 / double(xs.size());
    for (double& v : o) v *= inv;
    std::vector<Var> ins(xs.begin(), xs.end());
    return xs.front().tape().record(std::move(out), std::span<const Var>(ins),
                                    [ins, inv](Tape& t, const Tensor& g) {
                                        for (const Var& x : ins) {
                                            if (!x.requires_grad()) continue;
                                            auto d = t.grad(x.id()).values();
                                            for (std::size_t i = 0; i < d.size(); ++i) d[i] += inv * g[i];
                                        }
                                    },
                                    "mean_pool");
}

/// Per-row sum of a matrix; a vector reduces to a scalar.
inline Var row_sum(const Var& a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) return sum(a);
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out(Shape{m});
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (double v : x.row(r)) s += v;
        out[r] = s;
    }
    return a.tape().record(std::move(out), {a},
                           [a, m, n](Tape& t, const Tensor& g) {
                               Tensor& d = t.grad(a.id());
                               for (std::size_t r = 0; r < m; ++r)
                                   for (std::size_t c = 0; c < n; ++c) d.at(r, c) += g[r];
                           },
                           "row_sum");
}

// ---------------------------------------------------------------------------
// Linear algebra

/// A(m x k) * B(k x n), or A(m x k) * b(k) -> (m).
inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || B.rank() < 1 || A.cols() != (B.rank() == 2 ? B.rows() : B.size()))
        throw DimensionError("matmul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    const bool vec = B.rank() == 1;
    const std::size_t n = vec ? 1 : B.cols();
    Tensor out = vec ? Tensor(Shape{A.rows()}) : Tensor(Shape{A.rows(), n});
    {
        detail::MapC bm(B.raw().data(), Eigen::Index(A.cols()), Eigen::Index(n));
        detail::Map om(out.raw().data(), Eigen::Index(A.rows()), Eigen::Index(n));
        om.noalias() = detail::as_mat(A) * bm;
    }
    return a.tape().record(std::move(out), {a, b},
                           [a, b, n](Tape& t, const Tensor& g) {
                               const Tensor& A = a.value();
                               const Tensor& B = b.value();
                               detail::MapC gm(g.raw().data(), Eigen::Index(A.rows()), Eigen::Index(n));
                               detail::MapC bm(B.raw().data(), Eigen::Index(A.cols()), Eigen::Index(n));
                               if (a.requires_grad()) detail::as_mat(t.grad(a.id())).noalias() += gm * bm.transpose();
                               if (b.requires_grad()) {
                                   Tensor& gb = t.grad(b.id());
                                   detail::Map dbm(gb.raw().data(), Eigen::Index(A.cols()), Eigen::Index(n));
                                   dbm.noalias() += detail::as_mat(A).transpose() * gm;
                               }
                           },
                           "matmul");
}

/// Applies a weight W(out x in): vector x(in) -> W x; matrix X(m x in) -> X W^T (row-wise W x).
inline Var linear(const Var& x, const Var& w) {
    const Tensor& X = x.value();
    const Tensor& W = w.value();
    if (W.rank() != 2 || X.rank() < 1 || X.cols() != W.cols())
        throw DimensionError("linear: shape mismatch " + shape_str(X.shape()) + " vs " + shape_str(W.shape()));
    const std::size_t m = X.rows(), out_dim = W.rows();
    Tensor out = X.rank() == 1 ? Tensor(Shape{out_dim}) : Tensor(Shape{m, out_dim});
    {
        detail::Map om(out.raw().data(), Eigen::Index(m), Eigen::Index(out_dim));
        om.noalias() = detail::as_mat(X) * detail::as_mat(W).transpose();
    }
    return x.tape().record(std::move(out), {x, w},
                           [x, w, m, out_dim](Tape& t, const Tensor& g) {
                               detail::MapC gm(g.raw().data(), Eigen::Index(m), Eigen::Index(out_dim));
                               if (x.requires_grad()) detail::as_mat(t.grad(x.id())).noalias() += gm * detail::as_mat(w.value());
                               if (w.requires_grad())
                                   detail::as_mat(t.grad(w.id())).noalias() += gm.transpose() * detail::as_mat(x.value());
                           },
                           "linear");
}

inline Var transpose(const Var& a) {
    const Tensor& A = a.value();
    if (A.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(A.shape()));
    Tensor out(Shape{A.cols(), A.rows()});
    detail::as_mat(out) = detail::as_mat(A).transpose();
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) {
                               const Tensor& A = a.value();
                               detail::MapC gm(g.raw().data(), Eigen::Index(A.cols()), Eigen::Index(A.rows()));
                               detail::as_mat(t.grad(a.id())) += gm.transpose();
                           },
                           "transpose");
}

inline Var reshape(const Var& a, Shape s) {
    if (shape_numel(s) != a.value().size())
        throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(s));
    return a.tape().record(a.value().reshaped(std::move(s)), {a},
                           [a](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
                           },
                           "reshape");
}

// ---------------------------------------------------------------------------
// Structure

/// Concatenation along the last axis. Matrices must agree in row count.
inline Var concat(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != B.rank() || A.rank() == 0 || A.rows() != B.rows())
        throw DimensionError("concat: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    const std::size_t m = A.rows(), ca = A.cols(), cb = B.cols();
    Tensor out = A.rank() == 1 ? Tensor(Shape{ca + cb}) : Tensor(Shape{m, ca + cb});
    for (std::size_t r = 0; r < m; ++r) {
        std::copy_n(A.row(r).begin(), ca, out.row(r).begin());
        std::copy_n(B.row(r).begin(), cb, out.row(r).begin() + ca);
    }
    return a.tape().record(std::move(out), {a, b},
                           [a, b, m, ca, cb](Tape& t, const Tensor& g) {
                               const std::size_t w = ca + cb;
                               if (a.requires_grad()) {
                                   auto d = t.grad(a.id()).values();
                                   for (std::size_t r = 0; r < m; ++r)
                                       for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += g[r * w + c];
                               }
                               if (b.requires_grad()) {
                                   auto d = t.grad(b.id()).values();
                                   for (std::size_t r = 0; r < m; ++r)
                                       for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += g[r * w + ca + c];
                               }
                           },
                           "concat");
}

/// Columns [begin, end) of a matrix, or entries [begin, end) of a vector.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& A = a.value();
    if (A.rank() == 0 || begin > end || end > A.cols())
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") outside " + shape_str(A.shape()));
    const std::size_t m = A.rows(), w = end - begin, n = A.cols();
    Tensor out = A.rank() == 1 ? Tensor(Shape{w}) : Tensor(Shape{m, w});
    for (std::size_t r = 0; r < m; ++r) std::copy_n(A.row(r).begin() + begin, w, out.row(r).begin());
    return a.tape().record(std::move(out), {a},
                           [a, m, w, n, begin](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               for (std::size_t r = 0; r < m; ++r)
                                   for (std::size_t c = 0; c < w; ++c) d[r * n + begin + c] += g[r * w + c];
                           },
                           "slice_cols");
}

/// Stacks vectors into rows of a matrix, or concatenates matrices along rows.
inline Var stack_rows(std::span<const Var> xs) {
    if (xs.empty()) throw ContractError("stack_rows: empty set");
    const std::size_t n = xs.front().value().cols();
    std::size_t m = 0;
    for (const Var& x : xs) {
        if (x.value().cols() != n || x.value().rank() == 0)
            throw DimensionError("stack_rows: shape mismatch " + shape_str(xs.front().shape()) + " vs " +
                                 shape_str(x.shape()));
        m += x.value().rows();
    }
    Tensor out(Shape{m, n});
    std::size_t off = 0;
    for (const Var& x : xs) {
        std::copy(x.value().raw().begin(), x.value().raw().end(), out.raw().begin() + off);
        off += x.value().size();
    }
    std::vector<Var> ins(xs.begin(), xs.end());
    return xs.front().tape().record(std::move(out), std::span<const Var>(ins),
                                    [ins](Tape& t, const Tensor& g) {
                                        std::size_t off = 0;
                                        for (const Var& x : ins) {
                                            const std::size_t sz = x.value().size();
                                            if (x.requires_grad()) {
                                                auto d = t.grad(x.id()).values();
                                                for (std::size_t i = 0; i < sz; ++i) d[i] += g[off + i];
                                            }
                                            off += sz;
                                        }
                                    },
                                    "stack_rows");
}

/// Row lookup: matrix (n x d) with m indices -> (m x d); a vector gathers single entries.
inline Var gather_rows(const Var& a, Index idx) {
    const Tensor& A = a.value();
    if (A.rank() == 0) throw DimensionError("gather_rows: scalar input");
    const std::size_t n = A.rank() == 2 ? A.rows() : A.size();
    const std::size_t w = A.rank() == 2 ? A.cols() : 1;
    for (std::size_t i : idx)
        if (i >= n) throw DimensionError("gather_rows: index " + std::to_string(i) + " outside " + shape_str(A.shape()));
    std::vector<double> vals;
    vals.reserve(idx.size() * w);
    for (std::size_t i : idx) vals.insert(vals.end(), A.raw().begin() + i * w, A.raw().begin() + (i + 1) * w);
    Tensor out = A.rank() == 2 ? Tensor(Shape{idx.size(), w}, std::move(vals)) : Tensor(Shape{idx.size()}, std::move(vals));
    return a.tape().record(std::move(out), {a},
                           [a, idx = std::move(idx), w](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                   for (std::size_t c = 0; c < w; ++c) d[idx[r] * w + c] += g[r * w + c];
                           },
                           "gather_rows");
}

/// Single-row embedding lookup returning a vector.
inline Var embedding(const Var& table, std::size_t k) {
    const Tensor& A = table.value();
    if (A.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + shape_str(A.shape()));
    return reshape(gather_rows(table, Index{k}), Shape{A.cols()});
}

/// Sums rows of X(m x d) into n output rows by index; vectors scatter entries.
inline Var scatter_add(const Var& a, const Index& idx, std::size_t n) {
    const Tensor& A = a.value();
    if (A.rank() == 0)
        throw DimensionError("scatter_add: scalar input");
    const std::size_t m = A.rank() == 2 ? A.rows() : A.size();
    const std::size_t w = A.rank() == 2 ? A.cols() : 1;
    if (idx.size() != m)
        throw DimensionError("scatter_add: " + std::to_string(idx.size()) + " indices for " + shape_str(A.shape()));
    Tensor out = A.rank() == 2 ? Tensor(Shape{n, w}) : Tensor(Shape{n});
    for (std::size_t r = 0; r < m; ++r) {
        if (idx[r] >= n) throw DimensionError("scatter_add: index " + std::to_string(idx[r]) + " >= " + std::to_string(n));
        for (std::size_t c = 0; c < w; ++c) out[idx[r] * w + c] += A[r * w + c];
    }
    return a.tape().record(std::move(out), {a},
                           [a, idx, w](Tape& t, const Tensor& g) {
                               auto d = t.grad(a.id()).values();
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                   for (std::size_t c = 0; c < w; ++c) d[r * w + c] += g[idx[r] * w + c];
                           },
                           "scatter_add");
}

/// Like scatter_add but each output row is divided by its number of contributors. Empty rows stay zero.
inline Var scatter_mean(const Var& a, const Index& idx, std::size_t n) {
    Var s = scatter_add(a, idx, n);
    std::vector<double> count(n, 0.0);
    for (std::size_t i : idx) count[i] += 1.0;
    const std::size_t w = a.value().rank() == 2 ? a.value().cols() : 1;
    Tensor inv(s.shape());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) inv[r * w + c] = count[r] > 0 ? 1.0 / count[r] : 0.0;
    return hadamard(s, a.tape().constant(std::move(inv)));
}

/// Multiplies each row of X(m x d) by the matching entry of s(m).
inline Var row_scale(const Var& x, const Var& s) {
    const Tensor& X = x.value();
    const Tensor& S = s.value();
    if (X.rank() != 2 || S.size() != X.rows())
        throw DimensionError("row_scale: shape mismatch " + shape_str(X.shape()) + " vs " + shape_str(S.shape()));
    const std::size_t m = X.rows(), w = X.cols();
    Tensor out(X.shape());
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < w; ++c) out[r * w + c] = X[r * w + c] * S[r];
    return x.tape().record(std::move(out), {x, s},
                           [x, s, m, w](Tape& t, const Tensor& g) {
                               if (x.requires_grad()) {
                                   auto d = t.grad(x.id()).values();
                                   const Tensor& S = s.value();
                                   for (std::size_t r = 0; r < m; ++r)
                                       for (std::size_t c = 0; c < w; ++c) d[r * w + c] += g[r * w + c] * S[r];
                               }
                               if (s.requires_grad()) {
                                   auto d = t.grad(s.id()).values();
                                   const Tensor& X = x.value();
                                   for (std::size_t r = 0; r < m; ++r) {
                                       double acc = 0.0;
                                       for (std::size_t c = 0; c < w; ++c) acc += g[r * w + c] * X[r * w + c];
                                       d[r] += acc;
                                   }
                               }
                           },
                           "row_scale");
}

namespace detail {

inline void check_sparse(const char* op, const Tensor& X, const Index& idx, std::size_t m) {
    if (X.rank() != 2) throw DimensionError(std::string(op) + ": operand must be rank 2, got " + shape_str(X.shape()));
    if (idx.size() != m) throw DimensionError(std::string(op) + ": index lengths differ");
    for (std::size_t i : idx)
        if (i >= X.rows())
            throw DimensionError(std::string(op) + ": index " + std::to_string(i) + " outside " + shape_str(X.shape()));
}

inline void check_dst(const char* op, const Index& dst, std::size_t n) {
    for (std::size_t i : dst)
        if (i >= n) throw DimensionError(std::string(op) + ": index " + std::to_string(i) + " >= " + std::to_string(n));
}

}  // namespace detail

/// out[dst[e]] += weight[e] * X[src[e]] for every entry e; the same as
/// scatter_add(row_scale(gather_rows(X, src), weight), dst, n) without the m x d intermediates.
inline Var weighted_gather_scatter(const Var& x, const Var& weight, const Index& src, const Index& dst, std::size_t n) {
    const Tensor& X = x.value();
    const std::size_t m = src.size(), w = X.rank() == 2 ? X.cols() : 0;
    detail::check_sparse("weighted_gather_scatter", X, src, m);
    if (dst.size() != m) throw DimensionError("weighted_gather_scatter: index lengths differ");
    detail::check_dst("weighted_gather_scatter", dst, n);
    if (weight.value().size() != m) throw DimensionError("weighted_gather_scatter: one weight per entry required");
    Tensor out(Shape{n, w});
    const Tensor& W = weight.value();
    for (std::size_t e = 0; e < m; ++e) {
        const double* a = X.raw().data() + src[e] * w;
        double* o = out.raw().data() + dst[e] * w;
        for (std::size_t c = 0; c < w; ++c) o[c] += W[e] * a[c];
    }
    return x.tape().record(std::move(out), {x, weight},
                           [x, weight, src, dst, w](Tape& t, const Tensor& g) {
                               const Tensor& W = weight.value();
                               if (x.requires_grad()) {
                                   double* d = t.grad(x.id()).raw().data();
                                   for (std::size_t e = 0; e < src.size(); ++e) {
                                       const double* ge = g.raw().data() + dst[e] * w;
                                       double* de = d + src[e] * w;
                                       for (std::size_t c = 0; c < w; ++c) de[c] += W[e] * ge[c];
                                   }
                               }
                               if (weight.requires_grad()) {
                                   auto d = t.grad(weight.id()).values();
                                   const Tensor& X = x.value();
                                   for (std::size_t e = 0; e < src.size(); ++e) {
                                       const double* ge = g.raw().data() + dst[e] * w;
                                       const double* a = X.raw().data() + src[e] * w;
                                       double acc = 0.0;
                                       for (std::size_t c = 0; c < w; ++c) acc += ge[c] * a[c];
                                       d[e] += acc;
                                   }
                               }
                           },
                           "weighted_gather_scatter");
}

/// out[dst[e]] += coef[e] * (A[a_idx[e]] * B[b_idx[e]]) elementwise; an empty coef means all ones.
inline Var hadamard_gather_scatter(const Var& a, const Index& a_idx, const Var& b, const Index& b_idx, const Index& dst,
                                   std::size_t n, std::vector<double> coef = {}) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    const std::size_t m = dst.size();
    detail::check_sparse("hadamard_gather_scatter", A, a_idx, m);
    detail::check_sparse("hadamard_gather_scatter", B, b_idx, m);
    detail::check_dst("hadamard_gather_scatter", dst, n);
    if (A.cols() != B.cols()) throw DimensionError("hadamard_gather_scatter: width mismatch");
    if (!coef.empty() && coef.size() != m) throw DimensionError("hadamard_gather_scatter: one coefficient per entry required");
    if (coef.empty()) coef.assign(m, 1.0);
    const std::size_t w = A.cols();
    Tensor out(Shape{n, w});
    for (std::size_t e = 0; e < m; ++e) {
        const double* x = A.raw().data() + a_idx[e] * w;
        const double* y = B.raw().data() + b_idx[e] * w;
        double* o = out.raw().data() + dst[e] * w;
        for (std::size_t c = 0; c < w; ++c) o[c] += coef[e] * x[c] * y[c];
    }
    return a.tape().record(std::move(out), {a, b},
                           [a, b, a_idx, b_idx, dst, coef = std::move(coef), w](Tape& t, const Tensor& g) {
                               const Tensor& A = a.value();
                               const Tensor& B = b.value();
                               if (a.requires_grad()) {
                                   double* d = t.grad(a.id()).raw().data();
                                   for (std::size_t e = 0; e < dst.size(); ++e) {
                                       const double* ge = g.raw().data() + dst[e] * w;
                                       const double* y = B.raw().data() + b_idx[e] * w;
                                       double* de = d + a_idx[e] * w;
                                       for (std::size_t c = 0; c < w; ++c) de[c] += coef[e] * ge[c] * y[c];
                                   }
                               }
                               if (b.requires_grad()) {
                                   double* d = t.grad(b.id()).raw().data();
                                   for (std::size_t e = 0; e < dst.size(); ++e) {
                                       const double* ge = g.raw().data() + dst[e] * w;
                                       const double* x = A.raw().data() + a_idx[e] * w;
                                       double* de = d + b_idx[e] * w;
                                       for (std::size_t c = 0; c < w; ++c) de[c] += coef[e] * ge[c] * x[c];
                                   }
                               }
                           },
                           "hadamard_gather_scatter");
}

}  // namespace ad
}  // namespace seenet
