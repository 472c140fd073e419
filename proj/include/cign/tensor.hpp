#pragma once

// Dense 64-bit tensors with reverse-mode differentiation on an explicit tape.
// Every differentiable op takes the Tape it records onto; recording happens
// only when some input requires a gradient. Backward replays the tape in
// reverse execution order and accumulates gradients additively.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cign/errors.hpp"

namespace cign {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward/zero_grad
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (shape_numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : Tensor(shape, std::vector<double>(shape_numel(shape), fill), requires_grad) {}

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                            bool requires_grad = false) {
        std::size_t r = rows.size();
        std::size_t c = r ? rows.begin()->size() : 0;
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw ShapeError("ragged rows in tensor literal");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(data), requires_grad);
    }

    static Tensor randn(Shape shape, std::mt19937_64& rng, double sigma = 1.0,
                        bool requires_grad = false) {
        std::normal_distribution<double> dist(0.0, sigma);
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = dist(rng);
        return Tensor(std::move(shape), std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::span<const double> values() const { return node_->value; }
    std::vector<double>& raw() { return node_->value; }
    const std::vector<double>& raw() const { return node_->value; }

    double at(std::size_t i) const { return node_->value.at(i); }
    double at(std::size_t r, std::size_t c) const {
        return node_->value.at(r * node_->shape.at(1) + c);
    }
    void set(std::size_t i, double v) { node_->value.at(i) = v; }
    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    void zero_grad() {
        node_->grad.assign(node_->value.size(), 0.0);
    }
    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
    std::span<const double> grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<double>& grad_raw() {
        node_->ensure_grad();
        return node_->grad;
    }
    double grad_at(std::size_t i) const {
        node_->ensure_grad();
        return node_->grad.at(i);
    }

    // Deep copy of values (gradient buffer is not carried over).
    Tensor clone(bool requires_grad) const {
        return Tensor(node_->shape, node_->value, requires_grad);
    }

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of executed differentiable operations. backward() replays
// the record once, in reverse execution order; a tensor feeding several
// consumers accumulates the sum of its path gradients.
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void backward(const Tensor& loss) {
        if (loss.numel() != 1) {
            throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        }
        loss.node()->ensure_grad();
        loss.node()->grad[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

namespace detail {

using NodePtr = std::shared_ptr<TensorNode>;

inline bool grads_pending(const NodePtr& out) {
    // Nodes never visited by backward carry no gradient; their op is a no-op.
    return out->grad.size() == out->value.size();
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Broadcast classification for binary elementwise ops: b may equal a's shape,
// be a single element, or match a trailing suffix of a's shape (tiled over the
// leading extents). Anything else is a shape error.
enum class Bcast { Same, Scalar, Suffix };

inline Bcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.numel() == 1) return Bcast::Scalar;
    if (b.rank() < a.rank()) {
        bool suffix = std::equal(b.shape().begin(), b.shape().end(),
                                 a.shape().end() - b.rank());
        if (suffix) return Bcast::Suffix;
    }
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) + " to " +
                     shape_str(a.shape()));
}

template <class Fwd, class DaFn, class DbFn>
Tensor binary_elementwise(Tape& tape, const Tensor& a, const Tensor& b, const char* name,
                          Fwd fwd, DaFn dfa, DbFn dfb) {
    Bcast mode = classify_broadcast(a, b, name);
    std::size_t n = a.numel();
    std::size_t bn = b.numel();
    std::vector<double> out(n);
    const auto& av = a.raw();
    const auto& bv = b.raw();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = mode == Bcast::Same ? i : (mode == Bcast::Scalar ? 0 : i % bn);
        out[i] = fwd(av[i], bv[j]);
    }
    Tensor result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (result.requires_grad()) {
        tape.record([an = a.node(), bn_ = b.node(), on = result.node(), mode, dfa, dfb] {
            if (!grads_pending(on)) return;
            std::size_t n2 = on->value.size();
            std::size_t bsz = bn_->value.size();
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n2; ++i) {
                    std::size_t j = mode == Bcast::Same ? i : (mode == Bcast::Scalar ? 0 : i % bsz);
                    an->grad[i] += dfa(an->value[i], bn_->value[j], on->value[i]) * on->grad[i];
                }
            }
            if (bn_->requires_grad) {
                bn_->ensure_grad();
                for (std::size_t i = 0; i < n2; ++i) {
                    std::size_t j = mode == Bcast::Same ? i : (mode == Bcast::Scalar ? 0 : i % bsz);
                    bn_->grad[j] += dfb(an->value[i], bn_->value[j], on->value[i]) * on->grad[i];
                }
            }
        });
    }
    return result;
}

template <class Fwd, class DFn>
Tensor unary_elementwise(Tape& tape, const Tensor& x, const char* /*name*/, Fwd fwd, DFn dfn) {
    std::size_t n = x.numel();
    std::vector<double> out(n);
    const auto& xv = x.raw();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node(), dfn] {
            if (!grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->value.size(); ++i) {
                xn->grad[i] += dfn(xn->value[i], on->value[i]) * on->grad[i];
            }
        });
    }
    return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
    return detail::binary_elementwise(
        tape, a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

inline Tensor scale(Tape& tape, const Tensor& x, double s) {
    return detail::unary_elementwise(
        tape, x, "scale", [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, "sigmoid",
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                     : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor log(Tape& tape, const Tensor& x) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
        if (!(x.at(i) > 0.0)) {
            throw DomainError("log of nonpositive value " + std::to_string(x.at(i)) +
                              " at index " + std::to_string(i));
        }
    }
    return detail::unary_elementwise(
        tape, x, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

inline Tensor exp(Tape& tape, const Tensor& x) {
    return detail::unary_elementwise(
        tape, x, "exp", [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

inline Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
    return detail::unary_elementwise(
        tape, x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

inline Tensor clamp_min(Tape& tape, const Tensor& x, double lo) {
    return clamp(tape, x, lo, std::numeric_limits<double>::infinity());
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    std::size_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
    if (k != k2) {
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const auto& av = a.raw();
    const auto& bv = b.raw();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    }
    Tensor result(Shape{m, n}, std::move(out), a.requires_grad() || b.requires_grad());
    if (result.requires_grad()) {
        tape.record([an = a.node(), bn = b.node(), on = result.node(), m, k, n] {
            if (!detail::grads_pending(on)) return;
            if (an->requires_grad) {
                an->ensure_grad();  // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += on->grad[i * n + j] * bn->value[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();  // dB = A^T * dC
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += an->value[i * k + p] * on->grad[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        });
    }
    return result;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(x.shape()));
    std::size_t r = x.extent(0), c = x.extent(1);
    std::vector<double> out(r * c);
    const auto& xv = x.raw();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    Tensor result(Shape{c, r}, std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node(), r, c] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
        });
    }
    return result;
}

// Contiguous row block [start, start+count) of a rank-2 tensor.
inline Tensor rows(Tape& tape, const Tensor& x, std::size_t start, std::size_t count) {
    if (x.rank() != 2) throw ShapeError("rows expects rank 2, got " + shape_str(x.shape()));
    std::size_t r = x.extent(0), c = x.extent(1);
    if (start + count > r) {
        throw ShapeError("rows: block [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + shape_str(x.shape()));
    }
    std::vector<double> out(x.raw().begin() + start * c, x.raw().begin() + (start + count) * c);
    Tensor result(Shape{count, c}, std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node(), start, c, count] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < count * c; ++i) xn->grad[start * c + i] += on->grad[i];
        });
    }
    return result;
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    }
    Tensor result(std::move(shape), x.raw(), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node()] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return result;
}

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of empty list");
    std::size_t rank = parts.front().rank();
    if (axis >= rank) throw ShapeError("concat: invalid axis " + std::to_string(axis));
    Shape out_shape = parts.front().shape();
    bool rg = false;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < rank; ++d) {
            if (d == axis) continue;
            if (p.shape()[d] != out_shape[d]) {
                throw ShapeError("concat: extent mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(out_shape));
            }
        }
        rg = rg || p.requires_grad();
    }
    out_shape[axis] = 0;
    for (const auto& p : parts) out_shape[axis] += p.shape()[axis];

    // inner = product of extents after axis; outer = product before axis
    std::size_t inner = 1, outer = 1;
    for (std::size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];

    std::vector<double> out(shape_numel(out_shape));
    std::size_t axis_total = out_shape[axis];
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::size_t pa = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < pa; ++a)
                for (std::size_t i = 0; i < inner; ++i)
                    out[(o * axis_total + offset + a) * inner + i] =
                        p.raw()[(o * pa + a) * inner + i];
        offset += pa;
    }
    Tensor result(out_shape, std::move(out), rg);
    if (rg) {
        std::vector<detail::NodePtr> nodes;
        std::vector<std::size_t> axis_extents;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            axis_extents.push_back(p.shape()[axis]);
        }
        tape.record([nodes, axis_extents, on = result.node(), outer, inner, axis_total] {
            if (!detail::grads_pending(on)) return;
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                std::size_t pa = axis_extents[pi];
                if (nodes[pi]->requires_grad) {
                    nodes[pi]->ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t a = 0; a < pa; ++a)
                            for (std::size_t i = 0; i < inner; ++i)
                                nodes[pi]->grad[(o * pa + a) * inner + i] +=
                                    on->grad[(o * axis_total + off + a) * inner + i];
                }
                off += pa;
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(Tape& tape, const Tensor& x) {
    double total = std::accumulate(x.raw().begin(), x.raw().end(), 0.0);
    Tensor result(Shape{1}, std::vector<double>{total}, x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node()] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (auto& g : xn->grad) g += on->grad[0];
        });
    }
    return result;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
    if (x.numel() == 0) throw ShapeError("mean of empty tensor");
    double inv = 1.0 / static_cast<double>(x.numel());
    return scale(tape, sum(tape, x), inv);
}

inline Tensor sum(Tape& tape, const Tensor& x, std::size_t axis) {
    if (x.rank() == 1) {
        if (axis != 0) throw ShapeError("sum: invalid axis for rank-1 tensor");
        return sum(tape, x);
    }
    if (x.rank() != 2 || axis > 1) {
        throw ShapeError("sum: axis " + std::to_string(axis) + " invalid for " +
                         shape_str(x.shape()));
    }
    std::size_t r = x.extent(0), c = x.extent(1);
    std::size_t out_n = axis == 0 ? c : r;
    std::vector<double> out(out_n, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x.raw()[i * c + j];
    Tensor result(Shape{out_n}, std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node(), r, c, axis] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    xn->grad[i * c + j] += on->grad[axis == 0 ? j : i];
        });
    }
    return result;
}

inline Tensor mean(Tape& tape, const Tensor& x, std::size_t axis) {
    Tensor s = sum(tape, x, axis);
    std::size_t count = x.rank() == 1 ? x.numel() : x.extent(axis == 0 ? 0 : 1);
    return scale(tape, s, 1.0 / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_slice(const double* in, double* out, std::size_t n, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, in[i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i * stride] = std::exp(in[i * stride] - mx);
        z += out[i * stride];
    }
    for (std::size_t i = 0; i < n; ++i) out[i * stride] /= z;
}

}  // namespace detail

// Max-subtraction stabilized softmax along `axis`. Each slice along the axis
// sums to 1; the output is invariant to a constant shift of the slice.
inline Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
    if (axis >= std::max<std::size_t>(x.rank(), 1)) {
        throw ShapeError("softmax: invalid axis " + std::to_string(axis) + " for " +
                         shape_str(x.shape()));
    }
    if (x.rank() > 2) throw ShapeError("softmax supports rank <= 2, got " + shape_str(x.shape()));

    std::size_t n, stride, slices, slice_step;
    if (x.rank() <= 1) {
        n = x.numel();
        stride = 1;
        slices = 1;
        slice_step = 0;
    } else if (axis == 1) {  // per row
        n = x.extent(1);
        stride = 1;
        slices = x.extent(0);
        slice_step = n;
    } else {  // per column
        n = x.extent(0);
        stride = x.extent(1);
        slices = x.extent(1);
        slice_step = 1;
    }
    std::vector<double> out(x.numel());
    for (std::size_t s = 0; s < slices; ++s)
        detail::softmax_slice(x.raw().data() + s * slice_step, out.data() + s * slice_step, n,
                              stride);
    Tensor result(x.shape(), std::move(out), x.requires_grad());
    if (result.requires_grad()) {
        tape.record([xn = x.node(), on = result.node(), n, stride, slices, slice_step] {
            if (!detail::grads_pending(on)) return;
            xn->ensure_grad();
            for (std::size_t s = 0; s < slices; ++s) {
                const double* y = on->value.data() + s * slice_step;
                const double* dy = on->grad.data() + s * slice_step;
                double* dx = xn->grad.data() + s * slice_step;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += dy[i * stride] * y[i * stride];
                for (std::size_t i = 0; i < n; ++i)
                    dx[i * stride] += y[i * stride] * (dy[i * stride] - dot);
            }
        });
    }
    return result;
}

inline Tensor softmax(Tape& tape, const Tensor& x) {
    return softmax(tape, x, x.rank() == 2 ? 1 : 0);
}

// Straight-through hard assignment: forward emits a one-hot per row (argmax of
// the soft distribution, first index on ties), backward passes the incoming
// gradient to the soft distribution unchanged.
inline Tensor hard_one_hot(Tape& tape, const Tensor& soft) {
    if (soft.rank() != 2) {
        throw ShapeError("hard_one_hot expects rank 2, got " + shape_str(soft.shape()));
    }
    std::size_t r = soft.extent(0), c = soft.extent(1);
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (soft.raw()[i * c + j] > soft.raw()[i * c + best]) best = j;
        out[i * c + best] = 1.0;
    }
    Tensor result(soft.shape(), std::move(out), soft.requires_grad());
    if (result.requires_grad()) {
        tape.record([sn = soft.node(), on = result.node()] {
            if (!detail::grads_pending(on)) return;
            sn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) sn->grad[i] += on->grad[i];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Row-wise division, column normalization, and cosine similarity
// ---------------------------------------------------------------------------

// Backward divisor floor for normalize_columns. The forward quotient is safe
// at any nonzero mass (each entry is at most the column sum, so the result
// stays in [0, 1] and a lone entry divides to exactly 1), but the gradient
// scales as 1/mass and would overflow once a column's mass fell into the
// subnormal range. Clamping only the backward divisor keeps gradients finite
// without disturbing the forward values.
inline constexpr double kColumnMassFloor = 1e-100;

// Divides every column of a[R x C] by its own sum. Dividing each weight by
// the shared column sum (instead of dividing the pooled result) makes a
// single-row input normalize to exactly 1.0 whatever its value. Columns that
// sum to exactly zero (empty one-hot assignments) stay all-zero and receive
// no gradient.
inline Tensor normalize_columns(Tape& tape, const Tensor& a) {
    if (a.rank() != 2) {
        throw ShapeError("normalize_columns expects a rank-2 tensor, got " +
                         shape_str(a.shape()));
    }
    std::size_t r = a.extent(0), c = a.extent(1);
    std::vector<double> mass(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) mass[j] += a.raw()[i * c + j];
    std::vector<double> out(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            if (mass[j] != 0.0) out[i * c + j] = a.raw()[i * c + j] / mass[j];
    Tensor result(a.shape(), std::move(out), a.requires_grad());
    if (result.requires_grad()) {
        tape.record([an = a.node(), on = result.node(), mass, r, c] {
            if (!detail::grads_pending(on)) return;
            an->ensure_grad();
            for (std::size_t j = 0; j < c; ++j) {
                if (mass[j] == 0.0) continue;
                double weighted = 0.0;
                for (std::size_t i = 0; i < r; ++i)
                    weighted += on->grad[i * c + j] * on->value[i * c + j];
                double div = std::max(mass[j], kColumnMassFloor);
                for (std::size_t i = 0; i < r; ++i)
                    an->grad[i * c + j] += (on->grad[i * c + j] - weighted) / div;
            }
        });
    }
    return result;
}

// a[R x C] divided row-by-row by b[R].
inline Tensor div_rows(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 1 || a.extent(0) != b.extent(0)) {
        throw ShapeError("div_rows: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    std::size_t r = a.extent(0), c = a.extent(1);
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a.raw()[i * c + j] / b.raw()[i];
    Tensor result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (result.requires_grad()) {
        tape.record([an = a.node(), bn = b.node(), on = result.node(), r, c] {
            if (!detail::grads_pending(on)) return;
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        an->grad[i * c + j] += on->grad[i * c + j] / bn->value[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < c; ++j)
                        acc += on->grad[i * c + j] * an->value[i * c + j];
                    bn->grad[i] -= acc / (bn->value[i] * bn->value[i]);
                }
            }
        });
    }
    return result;
}

inline constexpr double kCosineNormEps = 1e-12;

// Cosine similarity of two equal-length vectors (any shape with equal numel).
inline Tensor cosine_sim(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) {
        throw ShapeError("cosine_sim: length mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::size_t n = a.numel();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += a.raw()[i] * b.raw()[i];
        na2 += a.raw()[i] * a.raw()[i];
        nb2 += b.raw()[i] * b.raw()[i];
    }
    double na = std::sqrt(na2), nb = std::sqrt(nb2);
    if (na <= kCosineNormEps || nb <= kCosineNormEps) {
        throw DomainError("cosine_sim: degenerate vector with norm <= 1e-12");
    }
    double sim = dot / (na * nb);
    Tensor result(Shape{1}, std::vector<double>{sim}, a.requires_grad() || b.requires_grad());
    if (result.requires_grad()) {
        tape.record([an = a.node(), bn = b.node(), on = result.node(), na, nb, sim, n] {
            if (!detail::grads_pending(on)) return;
            double dy = on->grad[0];
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    an->grad[i] += dy * (bn->value[i] / (na * nb) - sim * an->value[i] / (na * na));
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i)
                    bn->grad[i] += dy * (an->value[i] / (na * nb) - sim * bn->value[i] / (nb * nb));
            }
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

inline std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw ShapeError("argmax of empty span");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.raw())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace cign
