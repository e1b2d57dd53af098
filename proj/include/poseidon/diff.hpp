#pragma once

// Tape-based reverse-mode differentiation over dense float64 tensors.
//
// A Tape owns every node created during one forward evaluation. Var is a cheap
// handle (tape pointer + node index). Calling Tape::backward(out) seeds d(out)=1
// and walks the nodes in reverse creation order, which is a valid topological
// order because a node can only reference nodes created before it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "poseidon/common.hpp"

namespace poseidon::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

/// Plain value tensor (row-major).
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (values.size() != numel(shape))
            throw invalid_input("Tensor: " + std::to_string(values.size()) + " values for shape " +
                                to_string(shape));
    }
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(numel(shape), fill) {}

    std::size_t size() const { return values.size(); }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    std::span<const double> values() const;
    std::span<const double> grad() const;
    std::size_t size() const;
    double item() const;
    double operator[](std::size_t i) const { return values()[i]; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        const char* op = "leaf";
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor t, bool requires_grad = false) {
        return push("leaf", std::move(t.shape), std::move(t.values), requires_grad, {});
    }
    Var leaf(Shape shape, std::vector<double> values, bool requires_grad = false) {
        return leaf(Tensor(std::move(shape), std::move(values)), requires_grad);
    }
    Var constant(Shape shape, std::vector<double> values) { return leaf(std::move(shape), std::move(values), false); }
    Var scalar(double v, bool requires_grad = false) { return push("leaf", Shape{}, {v}, requires_grad, {}); }

    Var push(const char* op, Shape shape, std::vector<double> value, bool requires_grad, Backward bw) {
        if (value.size() != numel(shape)) throw invalid_input(std::string(op) + ": internal shape/value mismatch");
        Node n;
        n.op = op;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    Node& node(Var v) { return nodes_[v.id()]; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient buffer of a node, allocated (zeroed) on first use.
    std::vector<double>& grad_buffer(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

    /// Reverse sweep from a scalar output. One sweep per forward.
    void backward(Var out) {
        if (backward_done_) throw invalid_input("Tape::backward: tape already differentiated");
        auto& o = nodes_[out.id()];
        if (o.value.size() != 1) throw invalid_input("Tape::backward: output must be scalar, got " + to_string(o.shape));
        backward_done_ = true;
        if (!o.requires_grad) return;
        grad_buffer(out.id())[0] += 1.0;
        for (std::size_t i = out.id() + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, i);
        }
    }

private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

inline const Shape& Var::shape() const { return tape_->node(id_).shape; }
inline std::span<const double> Var::values() const { return tape_->node(id_).value; }
inline std::span<const double> Var::grad() const { return tape_->node(id_).grad; }
inline std::size_t Var::size() const { return tape_->node(id_).value.size(); }
inline double Var::item() const {
    if (size() != 1) throw invalid_input("item() on non-scalar " + to_string(shape()));
    return values()[0];
}

namespace detail {

inline bool rg(const Var& v) { return v.tape().node(v.id()).requires_grad; }

inline void same_tape(const Var& a, const Var& b, const char* op) {
    if (&a.tape() != &b.tape()) throw invalid_input(std::string(op) + ": operands live on different tapes");
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t n = std::max(a.size(), b.size());
    Shape out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t da = i < n - a.size() ? 1 : a[i - (n - a.size())];
        const std::size_t db = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (da != db && da != 1 && db != 1)
            throw invalid_input(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` expressed against `out`'s index space (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        const std::size_t oi = k + (out.size() - in.size());
        st[oi] = in[k] == 1 ? 0 : s;
        s *= in[k];
    }
    return st;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const std::size_t total = numel(out);
    if (sa == out && sb == out) {
        for (std::size_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    if (sa == out && numel(sb) == 1) {
        for (std::size_t i = 0; i < total; ++i) f(i, i, std::size_t{0});
        return;
    }
    if (numel(sa) == 1 && sb == out) {
        for (std::size_t i = 0; i < total; ++i) f(i, std::size_t{0}, i);
        return;
    }
    const auto st_a = broadcast_strides(sa, out);
    const auto st_b = broadcast_strides(sb, out);
    std::vector<std::size_t> idx(out.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < total; ++o) {
        f(o, ia, ib);
        for (std::size_t k = out.size(); k-- > 0;) {
            ++idx[k];
            ia += st_a[k];
            ib += st_b[k];
            if (idx[k] < out[k]) break;
            ia -= st_a[k] * idx[k];
            ib -= st_b[k] * idx[k];
            idx[k] = 0;
        }
    }
}

// Elementwise binary op with numpy broadcasting.
// da(x, y, z) / db(x, y, z) return local partials given inputs and output.
template <class Fwd, class Da, class Db>
Var binary(const char* op, const Var& a, const Var& b, Fwd fwd, Da da, Db db) {
    same_tape(a, b, op);
    Tape& t = a.tape();
    const Shape out = broadcast_shape(a.shape(), b.shape(), op);
    std::vector<double> v(numel(out));
    {
        const auto av = a.values();
        const auto bv = b.values();
        for_each_broadcast(out, a.shape(), b.shape(),
                           [&](std::size_t o, std::size_t i, std::size_t j) { v[o] = fwd(av[i], bv[j]); });
    }
    const std::size_t ia = a.id(), ib = b.id();
    return t.push(op, out, std::move(v), rg(a) || rg(b), [ia, ib, da, db](Tape& tp, std::size_t self) {
        const auto& n = tp.node(self);
        const bool ga = tp.node(ia).requires_grad, gb = tp.node(ib).requires_grad;
        std::vector<double>* gA = ga ? &tp.grad_buffer(ia) : nullptr;
        std::vector<double>* gB = gb ? &tp.grad_buffer(ib) : nullptr;
        const auto& av = tp.node(ia).value;
        const auto& bv = tp.node(ib).value;
        for_each_broadcast(n.shape, tp.node(ia).shape, tp.node(ib).shape,
                           [&](std::size_t o, std::size_t i, std::size_t j) {
                               const double g = n.grad[o];
                               if (g == 0.0) return;
                               if (gA) (*gA)[i] += g * da(av[i], bv[j], n.value[o]);
                               if (gB) (*gB)[j] += g * db(av[i], bv[j], n.value[o]);
                           });
    });
}

// Elementwise unary op; d(x, y) is the local derivative given input and output.
template <class Fwd, class D>
Var unary(const char* op, const Var& a, Fwd fwd, D d) {
    Tape& t = a.tape();
    const auto av = a.values();
    std::vector<double> v(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) v[i] = fwd(av[i]);
    const std::size_t ia = a.id();
    return t.push(op, a.shape(), std::move(v), rg(a), [ia, d](Tape& tp, std::size_t self) {
        const auto& n = tp.node(self);
        auto& g = tp.grad_buffer(ia);
        const auto& x = tp.node(ia).value;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (n.grad[i] != 0.0) g[i] += n.grad[i] * d(x[i], n.value[i]);
    });
}

inline double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// (e^x - 1)/x, continuous at 0.
inline double exprel(double x) {
    if (std::abs(x) < 1e-5) return 1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0;
    return std::expm1(x) / x;
}

inline double exprel_derivative(double x) {
    if (std::abs(x) < 1e-4) return 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0;
    return (x * std::exp(x) - std::expm1(x)) / (x * x);
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
    const long r = static_cast<long>(rank);
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw invalid_input(std::string(op) + ": axis out of range");
    return static_cast<std::size_t>(axis);
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
    return detail::binary("add", a, b, [](double x, double y) { return x + y; },
                          [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}
inline Var sub(const Var& a, const Var& b) {
    return detail::binary("sub", a, b, [](double x, double y) { return x - y; },
                          [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}
inline Var mul(const Var& a, const Var& b) {
    return detail::binary("mul", a, b, [](double x, double y) { return x * y; },
                          [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}
inline Var div(const Var& a, const Var& b) {
    return detail::binary("div", a, b, [](double x, double y) { return x / y; },
                          [](double, double y, double) { return 1.0 / y; },
                          [](double, double y, double z) { return -z / y; });
}
/// a^b elementwise. The exponent partial uses ln(a) and is only taken when a > 0.
inline Var pow(const Var& a, const Var& b) {
    return detail::binary(
        "pow", a, b, [](double x, double y) { return std::pow(x, y); },
        [](double x, double y, double) { return y == 0.0 ? 0.0 : y * std::pow(x, y - 1.0); },
        [](double x, double, double z) { return x > 0.0 ? z * std::log(x) : 0.0; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

inline Var scale(const Var& a, double s) {
    return detail::unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}
inline Var shift(const Var& a, double s) {
    return detail::unary("shift", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var square(const Var& a) {
    return detail::unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var pow(const Var& a, double exponent) {
    return detail::unary(
        "pow_scalar", a, [exponent](double x) { return std::pow(x, exponent); },
        [exponent](double x, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0); });
}

// ---------------------------------------------------------------------------
// Activations and transcendental functions

inline Var relu(const Var& a) {
    return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Var sigmoid(const Var& a) {
    return detail::unary("sigmoid", a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Var tanh(const Var& a) {
    return detail::unary("tanh", a, [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}
inline Var softplus(const Var& a) {
    return detail::unary("softplus", a, detail::stable_softplus,
                         [](double x, double) { return detail::stable_sigmoid(x); });
}
inline Var exp(const Var& a) {
    return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log(const Var& a) {
    return detail::unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var log1p(const Var& a) {
    return detail::unary("log1p", a, [](double x) { return std::log1p(x); },
                         [](double x, double) { return 1.0 / (1.0 + x); });
}
/// (e^x - 1)/x with the removable singularity at 0 filled in.
inline Var exprel(const Var& a) {
    return detail::unary("exprel", a, detail::exprel, [](double x, double) { return detail::exprel_derivative(x); });
}
/// Clamp into [lo, hi]; zero gradient where the clamp is active.
inline Var clamp(const Var& a, double lo, double hi) {
    return detail::unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                         [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const std::size_t ia = a.id();
    return a.tape().push("sum", Shape{}, {s}, detail::rg(a), [ia](Tape& tp, std::size_t self) {
        const double g = tp.node(self).grad[0];
        for (auto& x : tp.grad_buffer(ia)) x += g;
    });
}

inline Var mean(const Var& a) {
    if (a.size() == 0) throw invalid_input("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Sum over one axis, keeping it with extent 1.
inline Var sum(const Var& a, long axis) {
    const std::size_t ax = detail::normalize_axis(axis, a.shape().size(), "sum");
    const auto [outer, len, inner] = detail::split_axis(a.shape(), ax);
    Shape out = a.shape();
    out[ax] = 1;
    std::vector<double> v(outer * inner, 0.0);
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i) v[o * inner + i] += av[(o * len + k) * inner + i];
    const std::size_t ia = a.id();
    return a.tape().push("sum_axis", out, std::move(v), detail::rg(a),
                         [ia, outer = outer, len = len, inner = inner](Tape& tp, std::size_t self) {
                             const auto& g = tp.node(self).grad;
                             auto& ga = tp.grad_buffer(ia);
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t k = 0; k < len; ++k)
                                     for (std::size_t i = 0; i < inner; ++i)
                                         ga[(o * len + k) * inner + i] += g[o * inner + i];
                         });
}

inline Var mean(const Var& a, long axis) {
    const std::size_t ax = detail::normalize_axis(axis, a.shape().size(), "mean");
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[ax]));
}

/// Max over one axis (kept with extent 1). Ties route the gradient to the first maximum.
inline Var max(const Var& a, long axis) {
    const std::size_t ax = detail::normalize_axis(axis, a.shape().size(), "max");
    const auto [outer, len, inner] = detail::split_axis(a.shape(), ax);
    if (len == 0) throw invalid_input("max: empty axis");
    Shape out = a.shape();
    out[ax] = 1;
    std::vector<double> v(outer * inner);
    std::vector<std::size_t> arg(outer * inner);
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            std::size_t best = (o * len) * inner + i;
            for (std::size_t k = 1; k < len; ++k) {
                const std::size_t idx = (o * len + k) * inner + i;
                if (av[idx] > av[best]) best = idx;
            }
            v[o * inner + i] = av[best];
            arg[o * inner + i] = best;
        }
    const std::size_t ia = a.id();
    return a.tape().push("max_axis", out, std::move(v), detail::rg(a),
                         [ia, arg = std::move(arg)](Tape& tp, std::size_t self) {
                             const auto& g = tp.node(self).grad;
                             auto& ga = tp.grad_buffer(ia);
                             for (std::size_t j = 0; j < arg.size(); ++j) ga[arg[j]] += g[j];
                         });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
    if (numel(shape) != a.size())
        throw invalid_input("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    std::vector<double> v(a.values().begin(), a.values().end());
    const std::size_t ia = a.id();
    return a.tape().push("reshape", std::move(shape), std::move(v), detail::rg(a), [ia](Tape& tp, std::size_t self) {
        const auto& g = tp.node(self).grad;
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline Var broadcast_to(const Var& a, const Shape& shape) {
    const Shape out = detail::broadcast_shape(a.shape(), shape, "broadcast");
    if (out != shape)
        throw invalid_input("broadcast: cannot broadcast " + to_string(a.shape()) + " to " + to_string(shape));
    std::vector<double> v(numel(shape));
    const auto av = a.values();
    detail::for_each_broadcast(shape, a.shape(), shape, [&](std::size_t o, std::size_t i, std::size_t) { v[o] = av[i]; });
    const std::size_t ia = a.id();
    return a.tape().push("broadcast", shape, std::move(v), detail::rg(a), [ia](Tape& tp, std::size_t self) {
        const auto& n = tp.node(self);
        auto& ga = tp.grad_buffer(ia);
        detail::for_each_broadcast(n.shape, tp.node(ia).shape, n.shape,
                                   [&](std::size_t o, std::size_t i, std::size_t) { ga[i] += n.grad[o]; });
    });
}

inline Var concat(const std::vector<Var>& parts, long axis) {
    if (parts.empty()) throw invalid_input("concat: no operands");
    Tape& t = parts.front().tape();
    const Shape& s0 = parts.front().shape();
    const std::size_t ax = detail::normalize_axis(axis, s0.size(), "concat");
    Shape out = s0;
    out[ax] = 0;
    bool any_rg = false;
    for (const auto& p : parts) {
        detail::same_tape(parts.front(), p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
        if (!ok) throw invalid_input("concat: shape mismatch " + to_string(s0) + " vs " + to_string(s));
        out[ax] += s[ax];
        any_rg = any_rg || detail::rg(p);
    }
    const auto [outer, total_len, inner] = detail::split_axis(out, ax);
    std::vector<double> v(numel(out));
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (node id, axis length)
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[ax];
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                        v.begin() + static_cast<std::ptrdiff_t>((o * total_len + offset) * inner));
        spans.emplace_back(p.id(), len);
        offset += len;
    }
    return t.push("concat", out, std::move(v), any_rg,
                  [spans, outer = outer, total_len = total_len, inner = inner](Tape& tp, std::size_t self) {
                      const auto& g = tp.node(self).grad;
                      std::size_t off = 0;
                      for (const auto& [id, len] : spans) {
                          if (tp.node(id).requires_grad) {
                              auto& gp = tp.grad_buffer(id);
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t k = 0; k < len * inner; ++k)
                                      gp[o * len * inner + k] += g[(o * total_len + off) * inner + k];
                          }
                          off += len;
                      }
                  });
}

/// Contiguous range [start, start + length) along one axis.
inline Var slice(const Var& a, long axis, std::size_t start, std::size_t length) {
    const std::size_t ax = detail::normalize_axis(axis, a.shape().size(), "slice");
    if (start + length > a.shape()[ax])
        throw invalid_input("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") exceeds axis of " + to_string(a.shape()));
    const auto [outer, len, inner] = detail::split_axis(a.shape(), ax);
    Shape out = a.shape();
    out[ax] = length;
    std::vector<double> v(outer * length * inner);
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * len + start) * inner), length * inner,
                    v.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
    const std::size_t ia = a.id();
    return a.tape().push("slice", out, std::move(v), detail::rg(a),
                         [ia, outer = outer, len = len, inner = inner, start, length](Tape& tp, std::size_t self) {
                             const auto& g = tp.node(self).grad;
                             auto& ga = tp.grad_buffer(ia);
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t k = 0; k < length * inner; ++k)
                                     ga[(o * len + start) * inner + k] += g[o * length * inner + k];
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution

/// (m, k) x (k, n) -> (m, n)
inline Var matmul(const Var& a, const Var& b) {
    detail::same_tape(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw invalid_input("matmul: shape mismatch " + to_string(sa) + " x " + to_string(sb));
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<double> v(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double x = av[i * k + p];
            if (x == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += x * bv[p * n + j];
        }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push("matmul", Shape{m, n}, std::move(v), detail::rg(a) || detail::rg(b),
                         [ia, ib, m, k, n](Tape& tp, std::size_t self) {
                             const auto& g = tp.node(self).grad;
                             const auto& av = tp.node(ia).value;
                             const auto& bv = tp.node(ib).value;
                             if (tp.node(ia).requires_grad) {
                                 auto& ga = tp.grad_buffer(ia);
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t p = 0; p < k; ++p) {
                                         double s = 0.0;
                                         for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                                         ga[i * k + p] += s;
                                     }
                             }
                             if (tp.node(ib).requires_grad) {
                                 auto& gb = tp.grad_buffer(ib);
                                 for (std::size_t i = 0; i < m; ++i)
                                     for (std::size_t p = 0; p < k; ++p) {
                                         const double x = av[i * k + p];
                                         if (x == 0.0) continue;
                                         for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
                                     }
                             }
                         });
}

/// 2-D convolution (cross-correlation), stride 1, zero padding k/2, odd square kernels.
/// x: (N, C, H, W), weight: (O, C, k, k), bias: (O) -> (N, O, H, W).
inline Var conv2d(const Var& x, const Var& weight, const Var& bias) {
    detail::same_tape(x, weight, "conv2d");
    detail::same_tape(x, bias, "conv2d");
    const Shape& sx = x.shape();
    const Shape& sw = weight.shape();
    if (sx.size() != 4 || sw.size() != 4 || sw[1] != sx[1] || sw[2] != sw[3] || sw[2] % 2 == 0 ||
        bias.shape() != Shape{sw[0]})
        throw invalid_input("conv2d: shape mismatch input " + to_string(sx) + ", weight " + to_string(sw) +
                            ", bias " + to_string(bias.shape()));
    const std::size_t N = sx[0], C = sx[1], H = sx[2], W = sx[3], O = sw[0], K = sw[2];
    const long P = static_cast<long>(K / 2);
    std::vector<double> out(N * O * H * W);
    const auto xv = x.values();
    const auto wv = weight.values();
    const auto bv = bias.values();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
            double* dst = &out[((n * O) + o) * H * W];
            std::fill(dst, dst + H * W, bv[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* src = &xv[((n * C) + c) * H * W];
                const double* ker = &wv[((o * C) + c) * K * K];
                for (std::size_t ki = 0; ki < K; ++ki)
                    for (std::size_t kj = 0; kj < K; ++kj) {
                        const double w = ker[ki * K + kj];
                        if (w == 0.0) continue;
                        const long di = static_cast<long>(ki) - P, dj = static_cast<long>(kj) - P;
                        const std::size_t i0 = static_cast<std::size_t>(std::max(0L, -di));
                        const std::size_t i1 = static_cast<std::size_t>(std::min<long>(H, static_cast<long>(H) - di));
                        const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -dj));
                        const std::size_t j1 = static_cast<std::size_t>(std::min<long>(W, static_cast<long>(W) - dj));
                        for (std::size_t i = i0; i < i1; ++i) {
                            const double* s = src + (i + di) * W + dj;
                            double* d = dst + i * W;
                            for (std::size_t j = j0; j < j1; ++j) d[j] += w * s[j];
                        }
                    }
            }
        }
    const std::size_t ix = x.id(), iw = weight.id(), ibias = bias.id();
    const bool any = detail::rg(x) || detail::rg(weight) || detail::rg(bias);
    return x.tape().push(
        "conv2d", Shape{N, O, H, W}, std::move(out), any, [=](Tape& tp, std::size_t self) {
            const auto& g = tp.node(self).grad;
            const auto& xv = tp.node(ix).value;
            const auto& wv = tp.node(iw).value;
            std::vector<double>* gx = tp.node(ix).requires_grad ? &tp.grad_buffer(ix) : nullptr;
            std::vector<double>* gw = tp.node(iw).requires_grad ? &tp.grad_buffer(iw) : nullptr;
            if (tp.node(ibias).requires_grad) {
                auto& gb = tp.grad_buffer(ibias);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < O; ++o) {
                        const double* gg = &g[((n * O) + o) * H * W];
                        double s = 0.0;
                        for (std::size_t q = 0; q < H * W; ++q) s += gg[q];
                        gb[o] += s;
                    }
            }
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < O; ++o) {
                    const double* gg = &g[((n * O) + o) * H * W];
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* src = &xv[((n * C) + c) * H * W];
                        const std::size_t kbase = ((o * C) + c) * K * K;
                        for (std::size_t ki = 0; ki < K; ++ki)
                            for (std::size_t kj = 0; kj < K; ++kj) {
                                const long di = static_cast<long>(ki) - P, dj = static_cast<long>(kj) - P;
                                const std::size_t i0 = static_cast<std::size_t>(std::max(0L, -di));
                                const std::size_t i1 =
                                    static_cast<std::size_t>(std::min<long>(H, static_cast<long>(H) - di));
                                const std::size_t j0 = static_cast<std::size_t>(std::max(0L, -dj));
                                const std::size_t j1 =
                                    static_cast<std::size_t>(std::min<long>(W, static_cast<long>(W) - dj));
                                const double w = wv[kbase + ki * K + kj];
                                double acc = 0.0;
                                for (std::size_t i = i0; i < i1; ++i) {
                                    const double* s = src + (i + di) * W + dj;
                                    const double* gr = gg + i * W;
                                    if (gw)
                                        for (std::size_t j = j0; j < j1; ++j) acc += gr[j] * s[j];
                                    if (gx && w != 0.0) {
                                        double* d = gx->data() + ((n * C) + c) * H * W + (i + di) * W + dj;
                                        for (std::size_t j = j0; j < j1; ++j) d[j] += w * gr[j];
                                    }
                                }
                                if (gw) (*gw)[kbase + ki * K + kj] += acc;
                            }
                    }
                }
        });
}

/// (N, C, H, W) -> (N, C)
inline Var global_avg_pool(const Var& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw invalid_input("global_avg_pool: expected (N,C,H,W), got " + to_string(s));
    return reshape(mean(reshape(x, Shape{s[0] * s[1], s[2] * s[3]}), 1), Shape{s[0], s[1]});
}

// ---------------------------------------------------------------------------
// Finite-difference verification

struct GradCheckOptions {
    double step = 1e-5;
    /// Coordinates to probe; empty means all.
    std::vector<std::size_t> coordinates;
    /// When set, coordinates whose central differences at h and h/2 disagree by more
    /// than `kink_tolerance` (relative) are treated as straddling a non-differentiable
    /// point and excluded from the maximum.
    bool exclude_kinks = false;
    double kink_tolerance = 1e-3;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
    std::vector<double> analytic;  // full gradient
};

using ScalarFn = std::function<Var(Tape&, const Var&)>;

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares the reverse-mode gradient of scalar f at x against central differences.
inline GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, const GradCheckOptions& opt = {}) {
    GradCheckResult res;
    {
        Tape tape;
        Var xv = tape.leaf(x, true);
        Var y = f(tape, xv);
        if (y.size() != 1) throw invalid_input("grad_check: f must be scalar-valued, got " + to_string(y.shape()));
        tape.backward(y);
        const auto g = xv.grad();
        res.analytic.assign(x.size(), 0.0);
        if (!g.empty()) std::copy(g.begin(), g.end(), res.analytic.begin());
    }
    auto eval = [&](std::size_t i, double delta) {
        Tensor xp = x;
        xp.values[i] += delta;
        Tape tape;
        Var xv = tape.leaf(std::move(xp), false);
        return f(tape, xv).item();
    };
    std::vector<std::size_t> coords = opt.coordinates;
    if (coords.empty()) {
        coords.resize(x.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
    }
    const double h = opt.step;
    for (std::size_t i : coords) {
        if (i >= x.size()) throw invalid_input("grad_check: coordinate out of range");
        const double fd = (eval(i, h) - eval(i, -h)) / (2.0 * h);
        if (opt.exclude_kinks) {
            const double fd2 = (eval(i, h / 2) - eval(i, -h / 2)) / h;
            if (relative_error(fd, fd2) > opt.kink_tolerance) {
                ++res.excluded;
                continue;
            }
        }
        const double err = relative_error(res.analytic[i], fd);
        ++res.checked;
        if (err > res.max_rel_error) {
            res.max_rel_error = err;
            res.worst_coordinate = i;
        }
    }
    return res;
}

}  // namespace poseidon::diff
