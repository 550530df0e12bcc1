#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mimo/errors.hpp"
#include "mimo/parallel.hpp"
#include "mimo/rng.hpp"

namespace mimo {

using index_t = std::int64_t;

// All tensors are dense 4-D (batch, channels, height, width), row-major.
struct Shape {
    index_t n = 0, c = 0, h = 0, w = 0;

    index_t numel() const { return n * c * h * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }
};

namespace detail {

// Thread-local autograd switch. Ops record adjoints only while enabled.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Scoped "no tape" region, used for inference and finite differences.
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
class Tensor;

namespace detail {

// One recorded operation (or leaf). The web of nodes reachable from a loss
// is the computation graph; ops append to it in execution order, which is
// already topological.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated on first use, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // pushes this->grad into parents

    bool is_leaf() const { return parents.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false) {
        return make_leaf(s, std::vector<T>(static_cast<std::size_t>(s.numel()), T(0)), requires_grad);
    }

    static Tensor full(Shape s, T v, bool requires_grad = false) {
        return make_leaf(s, std::vector<T>(static_cast<std::size_t>(s.numel()), v), requires_grad);
    }

    static Tensor from(Shape s, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<index_t>(data.size()) != s.numel())
            throw UsageError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + s.str());
        return make_leaf(s, std::move(data), requires_grad);
    }

    // Normal(0, stddev^2) entries.
    static Tensor randn(Shape s, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        std::vector<T> d(static_cast<std::size_t>(s.numel()));
        for (auto& v : d) v = static_cast<T>(rng.next_normal() * static_cast<double>(stddev));
        return make_leaf(s, std::move(d), requires_grad);
    }

    // Uniform in [lo, hi).
    static Tensor rand_uniform(Shape s, Rng& rng, T lo = T(0), T hi = T(1), bool requires_grad = false) {
        std::vector<T> d(static_cast<std::size_t>(s.numel()));
        for (auto& v : d)
            v = static_cast<T>(static_cast<double>(lo) +
                               rng.next_double() * (static_cast<double>(hi) - static_cast<double>(lo)));
        return make_leaf(s, std::move(d), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    index_t numel() const { return node_->shape.numel(); }
    bool requires_grad() const { return node_->requires_grad; }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    T& at(index_t n, index_t c, index_t h, index_t w) {
        return node_->value[static_cast<std::size_t>(offset(n, c, h, w))];
    }
    const T& at(index_t n, index_t c, index_t h, index_t w) const {
        return node_->value[static_cast<std::size_t>(offset(n, c, h, w))];
    }

    // Scalar read; the tensor must hold exactly one element.
    T item() const {
        if (numel() != 1) throw UsageError("item() called on tensor of shape " + shape().str());
        return node_->value[0];
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (node_->grad.empty()) throw UsageError("gradient not populated");
        return node_->grad;
    }
    T grad_at(index_t n, index_t c, index_t h, index_t w) const {
        return grad()[static_cast<std::size_t>(offset(n, c, h, w))];
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Deep copy of the values as a fresh leaf (no graph history).
    Tensor clone(bool requires_grad = false) const {
        return make_leaf(shape(), node_->value, requires_grad);
    }

    // Leaf view of the same values, detached from the graph (shares storage).
    Tensor detached() const {
        Tensor t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        return t;
    }

    detail::Node<T>* node() const { return node_.get(); }
    std::shared_ptr<detail::Node<T>> node_ptr() const { return node_; }

    index_t offset(index_t n, index_t c, index_t h, index_t w) const {
        const Shape& s = node_->shape;
        return ((n * s.c + c) * s.h + h) * s.w + w;
    }

    static Tensor wrap(std::shared_ptr<detail::Node<T>> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

private:
    static Tensor make_leaf(Shape s, std::vector<T> data, bool requires_grad) {
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = s;
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return wrap(std::move(n));
    }

    std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// The adjoint callable stays a plain template parameter so that untracked
// (inference / finite-difference) calls never materialize a std::function
// or copy the parent handles.
template <typename T, typename Parents, typename F>
Tensor<T> make_op_impl(Shape shape, std::vector<T>&& value, const Parents& parents, F&& backprop) {
    auto n = std::make_shared<Node<T>>();
    n->shape = shape;
    n->value = std::move(value);
    if (grad_mode()) {
        bool track = false;
        for (const auto& p : parents) track = track || p.requires_grad();
        if (track) {
            n->requires_grad = true;
            n->parents.reserve(parents.size());
            for (const auto& p : parents) n->parents.push_back(p.node_ptr());
            n->backprop = std::forward<F>(backprop);
        }
    }
    return Tensor<T>::wrap(std::move(n));
}

template <typename T, typename F>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> parents,
                  F&& backprop) {
    return make_op_impl<T>(shape, std::move(value), parents, std::forward<F>(backprop));
}

template <typename T, typename F>
Tensor<T> make_op(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                  F&& backprop) {
    return make_op_impl<T>(shape, std::move(value), parents, std::forward<F>(backprop));
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (!(a.shape() == b.shape()))
        throw ConfigError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Populates grad for every gradient-tracked tensor reachable from `loss`.
// Interior grads are recomputed from scratch on each call while leaf grads
// accumulate, so calling backward twice doubles parameter gradients.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw UsageError("backward() requires a scalar loss node");
    auto* root = loss.node();
    if (!root->requires_grad)
        throw UsageError("backward() called on a node without gradient tracking");

    // iterative post-order DFS; emission order is a topological order
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> visited;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (!n->is_leaf()) {
            n->grad.assign(n->value.size(), T(0));
        } else {
            n->ensure_grad();
        }
    }
    root->grad[0] = T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *n.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
        auto& a_ = *n.parents[0];
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) a_.grad[i] += n.grad[i];
        }
        auto& b_ = *n.parents[1];
        if (b_.requires_grad) {
            b_.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b_.grad[i] -= n.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
    return detail::make_op<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& n) {
        auto& a_ = *n.parents[0];
        auto& b_ = *n.parents[1];
        if (a_.requires_grad) {
            a_.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) a_.grad[i] += n.grad[i] * b_.value[i];
        }
        if (b_.requires_grad) {
            b_.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) b_.grad[i] += n.grad[i] * a_.value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * factor;
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [factor](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * factor;
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T v) {
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + v;
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.values().size());
    const T* pa = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] > T(0) ? pa[i] : T(0);
    return detail::make_op<T>(a.shape(), std::move(out), {a}, [](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (p.value[i] > T(0)) p.grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

// Sum of all entries as a 1x1x1x1 scalar node.
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double acc = 0.0;
    for (T v : a.values()) acc += static_cast<double>(v);
    return detail::make_op<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc)}, {a}, [](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        T g = n.grad[0];
        for (auto& v : p.grad) v += g;
    });
}

// Sum of |a - b| as a scalar node. Subgradient convention: sign(0) = 0.
template <typename T>
Tensor<T> l1_sum(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "l1_sum");
    const T* pa = a.data();
    const T* pb = b.data();
    double acc = 0.0;
    for (index_t i = 0, e = a.numel(); i < e; ++i)
        acc += std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
    return detail::make_op<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc)}, {a, b},
                              [](detail::Node<T>& n) {
                                  auto& a_ = *n.parents[0];
                                  auto& b_ = *n.parents[1];
                                  T g = n.grad[0];
                                  if (a_.requires_grad) a_.ensure_grad();
                                  if (b_.requires_grad) b_.ensure_grad();
                                  for (std::size_t i = 0; i < a_.value.size(); ++i) {
                                      T d = a_.value[i] - b_.value[i];
                                      T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                                      if (a_.requires_grad) a_.grad[i] += g * s;
                                      if (b_.requires_grad) b_.grad[i] -= g * s;
                                  }
                              });
}

// Mean absolute difference: l1_sum / numel(a).
template <typename T>
Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b) {
    return scale(l1_sum(a, b), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// channel concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw UsageError("concat_channels: no inputs");
    Shape s0 = parts[0].shape();
    index_t ctotal = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
            throw ConfigError("concat_channels: mismatched N/H/W: " + s.str() + " vs " + s0.str());
        ctotal += s.c;
    }
    Shape out_shape{s0.n, ctotal, s0.h, s0.w};
    std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
    const index_t plane = s0.h * s0.w;
    for (index_t n = 0; n < s0.n; ++n) {
        index_t co = 0;
        for (const auto& p : parts) {
            const index_t pc = p.shape().c;
            const T* src = p.data() + n * pc * plane;
            T* dst = out.data() + (n * ctotal + co) * plane;
            std::copy(src, src + pc * plane, dst);
            co += pc;
        }
    }
    return detail::make_op<T>(out_shape, std::move(out), parts, [plane](detail::Node<T>& n) {
        const index_t ctotal = n.shape.c;
        for (index_t b = 0; b < n.shape.n; ++b) {
            index_t co = 0;
            for (auto& pp : n.parents) {
                auto& p = *pp;
                const index_t pc = p.shape.c;
                if (p.requires_grad) {
                    p.ensure_grad();
                    const T* src = n.grad.data() + (b * ctotal + co) * plane;
                    T* dst = p.grad.data() + b * pc * plane;
                    for (index_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
                }
                co += pc;
            }
        }
    });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    return concat_channels(std::vector<Tensor<T>>{a, b});
}

// Channels [c0, c1) as a standalone tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, index_t c0, index_t c1) {
    const Shape& s = x.shape();
    if (c0 < 0 || c1 > s.c || c0 >= c1)
        throw UsageError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + s.str());
    Shape out_shape{s.n, c1 - c0, s.h, s.w};
    std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
    const index_t plane = s.h * s.w;
    for (index_t n = 0; n < s.n; ++n) {
        const T* src = x.data() + (n * s.c + c0) * plane;
        T* dst = out.data() + n * (c1 - c0) * plane;
        std::copy(src, src + (c1 - c0) * plane, dst);
    }
    return detail::make_op<T>(out_shape, std::move(out), {x}, [c0, plane](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const index_t cs = n.shape.c;
        for (index_t b = 0; b < n.shape.n; ++b) {
            const T* src = n.grad.data() + b * cs * plane;
            T* dst = p.grad.data() + (b * p.shape.c + c0) * plane;
            for (index_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

// Integer ceil/floor division for possibly negative numerators (b > 0).
inline index_t div_ceil(index_t a, index_t b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline index_t div_floor(index_t a, index_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Dot product with eight independent accumulator lanes; the fixed-order
// combine keeps results identical across thread counts, and the lane array
// lets the compiler vectorize what a plain reduction could not.
template <typename T>
T dot_lanes(const T* a, const T* b, index_t k) {
    T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
    index_t i = 0;
    for (; i + 8 <= k; i += 8)
        for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    T tail = T(0);
    for (; i < k; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) +
           tail;
}

// Patch matrix in (m, k) order: row m holds the receptive field of output
// position m, k = (ci*kH + kh)*kW + kw. Out-of-bounds taps are zero. Every
// entry is written exactly once; the buffer needs no pre-clearing.
template <typename T>
void im2col_rows(T* col, const T* x_img, Shape xs, Shape ws, index_t oh_n, index_t ow_n,
                 index_t stride, index_t pad) {
    const index_t k_total = ws.c * ws.h * ws.w;
    for (index_t oh = 0; oh < oh_n; ++oh)
        for (index_t ow = 0; ow < ow_n; ++ow) {
            T* dst = col + (oh * ow_n + ow) * k_total;
            for (index_t ci = 0; ci < ws.c; ++ci) {
                const T* x_chan = x_img + ci * xs.h * xs.w;
                for (index_t kh = 0; kh < ws.h; ++kh) {
                    const index_t ih = oh * stride - pad + kh;
                    T* d = dst + (ci * ws.h + kh) * ws.w;
                    if (ih < 0 || ih >= xs.h) {
                        for (index_t kw = 0; kw < ws.w; ++kw) d[kw] = T(0);
                        continue;
                    }
                    const T* x_row = x_chan + ih * xs.w;
                    for (index_t kw = 0; kw < ws.w; ++kw) {
                        const index_t iw = ow * stride - pad + kw;
                        d[kw] = (iw >= 0 && iw < xs.w) ? x_row[iw] : T(0);
                    }
                }
            }
        }
}

// Patch matrix in (k, m) order, transposed relative to im2col_rows, for
// contiguous reductions over the output positions. Write-once, like
// im2col_rows.
template <typename T>
void im2col_cols(T* col, const T* x_img, Shape xs, Shape ws, index_t oh_n, index_t ow_n,
                 index_t stride, index_t pad) {
    const index_t m_total = oh_n * ow_n;
    for (index_t ci = 0; ci < ws.c; ++ci) {
        const T* x_chan = x_img + ci * xs.h * xs.w;
        for (index_t kh = 0; kh < ws.h; ++kh)
            for (index_t kw = 0; kw < ws.w; ++kw) {
                T* dst = col + ((ci * ws.h + kh) * ws.w + kw) * m_total;
                for (index_t oh = 0; oh < oh_n; ++oh) {
                    const index_t ih = oh * stride - pad + kh;
                    T* d = dst + oh * ow_n;
                    if (ih < 0 || ih >= xs.h) {
                        for (index_t ow = 0; ow < ow_n; ++ow) d[ow] = T(0);
                        continue;
                    }
                    const T* x_row = x_chan + ih * xs.w;
                    const index_t ow0 =
                        std::min<index_t>(ow_n, std::max<index_t>(0, div_ceil(pad - kw, stride)));
                    const index_t ow1 = std::max<index_t>(
                        ow0,
                        std::min<index_t>(ow_n, div_floor(xs.w - 1 + pad - kw, stride) + 1));
                    for (index_t ow = 0; ow < ow0; ++ow) d[ow] = T(0);
                    if (stride == 1) {
                        const T* xr = x_row + kw - pad;
                        for (index_t ow = ow0; ow < ow1; ++ow) d[ow] = xr[ow];
                    } else {
                        for (index_t ow = ow0; ow < ow1; ++ow)
                            d[ow] = x_row[ow * stride - pad + kw];
                    }
                    for (index_t ow = ow1; ow < ow_n; ++ow) d[ow] = T(0);
                }
            }
    }
}

// out[n,co,oh,ow] += sum_{ci,kh,kw} w[co,ci,kh,kw] * x[n,ci,oh*s-p+kh,ow*s-p+kw]
// Cross-correlation, no kernel flip. Two regimes: narrow planes go through
// an im2col patch matrix and contiguous dot products (per-tap row passes
// cannot amortize their setup there); wide planes use per-tap row passes,
// which vectorize well on long rows. Both parallelize over disjoint output
// slices, so results do not depend on the thread count.
template <typename T>
void conv_forward_kernel(T* out, const T* x, const T* w, Shape xs, Shape ws, index_t oh_n,
                         index_t ow_n, index_t stride, index_t pad) {
    const index_t k_total = ws.c * ws.h * ws.w;
    const index_t m_total = oh_n * ow_n;
    if (ws.h == 1 && ws.w == 1 && stride == 1 && pad == 0) {
        // pointwise conv: plain channel mixing over the contiguous plane
        parallel_for(xs.n * ws.n, [&](index_t task) {
            const index_t n = task / ws.n;
            const index_t co = task % ws.n;
            T* out_plane = out + (n * ws.n + co) * m_total;
            for (index_t ci = 0; ci < ws.c; ++ci) {
                const T wv = w[co * ws.c + ci];
                const T* x_plane = x + (n * xs.c + ci) * m_total;
                for (index_t m = 0; m < m_total; ++m) out_plane[m] += wv * x_plane[m];
            }
        });
        return;
    }
    if (ow_n < 48 && m_total * k_total <= (index_t{1} << 23)) {
        // caller-thread arena; raw pointers are captured before the parallel
        // phases because thread_local lookups inside the lambdas would hit
        // each worker's own (empty) arena
        thread_local std::vector<std::vector<T>> cols_arena;
        if (cols_arena.size() < static_cast<std::size_t>(xs.n))
            cols_arena.resize(static_cast<std::size_t>(xs.n));
        std::vector<T*> col_ptrs(static_cast<std::size_t>(xs.n));
        for (index_t n = 0; n < xs.n; ++n) {
            cols_arena[static_cast<std::size_t>(n)].resize(
                static_cast<std::size_t>(m_total * k_total));
            col_ptrs[static_cast<std::size_t>(n)] = cols_arena[static_cast<std::size_t>(n)].data();
        }
        const bool k_major = m_total >= 48;
        parallel_for(xs.n, [&](index_t n) {
            T* buf = col_ptrs[static_cast<std::size_t>(n)];
            const T* img = x + n * xs.c * xs.h * xs.w;
            if (k_major)
                im2col_cols(buf, img, xs, ws, oh_n, ow_n, stride, pad);
            else
                im2col_rows(buf, img, xs, ws, oh_n, ow_n, stride, pad);
        });
        parallel_for(xs.n * ws.n, [&](index_t task) {
            const index_t n = task / ws.n;
            const index_t co = task % ws.n;
            const T* col = col_ptrs[static_cast<std::size_t>(n)];
            const T* w_row = w + co * k_total;
            T* out_plane = out + (n * ws.n + co) * m_total;
            if (k_major) {
                // one contiguous pass over the plane per kernel tap
                for (index_t k = 0; k < k_total; ++k) {
                    const T wv = w_row[k];
                    if (wv == T(0)) continue;
                    const T* src = col + k * m_total;
                    for (index_t m = 0; m < m_total; ++m) out_plane[m] += wv * src[m];
                }
            } else {
                for (index_t m = 0; m < m_total; ++m)
                    out_plane[m] += dot_lanes(w_row, col + m * k_total, k_total);
            }
        });
        return;
    }
    parallel_for(xs.n * ws.n, [&](index_t task) {
        const index_t n = task / ws.n;
        const index_t co = task % ws.n;
        T* out_plane = out + (n * ws.n + co) * oh_n * ow_n;
        for (index_t ci = 0; ci < ws.c; ++ci) {
            const T* x_chan = x + (n * xs.c + ci) * xs.h * xs.w;
            const T* w_chan = w + (co * ws.c + ci) * ws.h * ws.w;
            for (index_t kh = 0; kh < ws.h; ++kh) {
                for (index_t kw = 0; kw < ws.w; ++kw) {
                    const T wv = w_chan[kh * ws.w + kw];
                    if (wv == T(0)) continue;
                    for (index_t oh = 0; oh < oh_n; ++oh) {
                        const index_t ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= xs.h) continue;
                        const T* x_row = x_chan + ih * xs.w;
                        T* out_row = out_plane + oh * ow_n;
                        if (stride == 1) {
                            const index_t shift = kw - pad;
                            const index_t ow0 = std::max<index_t>(0, -shift);
                            const index_t ow1 = std::min<index_t>(ow_n, xs.w - shift);
                            const T* xr = x_row + shift;
                            for (index_t ow = ow0; ow < ow1; ++ow) out_row[ow] += wv * xr[ow];
                        } else {
                            const index_t ow0 = std::max<index_t>(0, div_ceil(pad - kw, stride));
                            const index_t ow1 = std::min<index_t>(
                                ow_n, div_floor(xs.w - 1 + pad - kw, stride) + 1);
                            for (index_t ow = ow0; ow < ow1; ++ow)
                                out_row[ow] += wv * x_row[ow * stride - pad + kw];
                        }
                    }
                }
            }
        }
    });
}

// xg[n,ci,ih,iw] += sum_{co,kh,kw} w[co,ci,kh,kw] * g[n,co,oh,ow]. Parallel
// over (n, ci).
template <typename T>
void conv_backward_input_kernel(T* xg, const T* g, const T* w, Shape xs, Shape ws, index_t oh_n,
                                index_t ow_n, index_t stride, index_t pad) {
    if (ws.h == 1 && ws.w == 1 && stride == 1 && pad == 0) {
        const index_t m_total = oh_n * ow_n;
        parallel_for(xs.n * xs.c, [&](index_t task) {
            const index_t n = task / xs.c;
            const index_t ci = task % xs.c;
            T* xg_plane = xg + (n * xs.c + ci) * m_total;
            for (index_t co = 0; co < ws.n; ++co) {
                const T wv = w[co * ws.c + ci];
                const T* g_plane = g + (n * ws.n + co) * m_total;
                for (index_t m = 0; m < m_total; ++m) xg_plane[m] += wv * g_plane[m];
            }
        });
        return;
    }
    parallel_for(xs.n * xs.c, [&](index_t task) {
        const index_t n = task / xs.c;
        const index_t ci = task % xs.c;
        T* xg_chan = xg + (n * xs.c + ci) * xs.h * xs.w;
        for (index_t co = 0; co < ws.n; ++co) {
            const T* g_plane = g + (n * ws.n + co) * oh_n * ow_n;
            const T* w_chan = w + (co * ws.c + ci) * ws.h * ws.w;
            for (index_t kh = 0; kh < ws.h; ++kh) {
                for (index_t kw = 0; kw < ws.w; ++kw) {
                    const T wv = w_chan[kh * ws.w + kw];
                    if (wv == T(0)) continue;
                    for (index_t oh = 0; oh < oh_n; ++oh) {
                        const index_t ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= xs.h) continue;
                        T* xg_row = xg_chan + ih * xs.w;
                        const T* g_row = g_plane + oh * ow_n;
                        if (stride == 1) {
                            const index_t shift = kw - pad;
                            const index_t ow0 = std::max<index_t>(0, -shift);
                            const index_t ow1 = std::min<index_t>(ow_n, xs.w - shift);
                            T* xr = xg_row + shift;
                            for (index_t ow = ow0; ow < ow1; ++ow) xr[ow] += wv * g_row[ow];
                        } else {
                            const index_t ow0 = std::max<index_t>(0, div_ceil(pad - kw, stride));
                            const index_t ow1 = std::min<index_t>(
                                ow_n, div_floor(xs.w - 1 + pad - kw, stride) + 1);
                            for (index_t ow = ow0; ow < ow1; ++ow)
                                xg_row[ow * stride - pad + kw] += wv * g_row[ow];
                        }
                    }
                }
            }
        }
    });
}

// wg[co,ci,kh,kw] += sum_{n,oh,ow} g[n,co,oh,ow] * x[n,ci,ih,iw]. The batch
// reduction stays serial; per batch item a transposed patch matrix turns
// every tap gradient into one contiguous dot product over the output plane.
// Falls back to per-tap traversal when the patch matrix would be too large.
template <typename T>
void conv_backward_weight_kernel(T* wg, const T* x, const T* g, Shape xs, Shape ws, index_t oh_n,
                                 index_t ow_n, index_t stride, index_t pad) {
    const index_t k_total = ws.c * ws.h * ws.w;
    const index_t m_total = oh_n * ow_n;
    if (ws.h == 1 && ws.w == 1 && stride == 1 && pad == 0) {
        parallel_for(ws.n, [&](index_t co) {
            for (index_t n = 0; n < xs.n; ++n) {
                const T* g_plane = g + (n * ws.n + co) * m_total;
                for (index_t ci = 0; ci < ws.c; ++ci)
                    wg[co * ws.c + ci] +=
                        dot_lanes(g_plane, x + (n * xs.c + ci) * m_total, m_total);
            }
        });
        return;
    }
    if (k_total * m_total <= (index_t{1} << 23)) {
        std::vector<T> col(static_cast<std::size_t>(k_total * m_total));
        for (index_t n = 0; n < xs.n; ++n) {
            im2col_cols(col.data(), x + n * xs.c * xs.h * xs.w, xs, ws, oh_n, ow_n, stride, pad);
            parallel_for(ws.n, [&](index_t co) {
                const T* g_plane = g + (n * ws.n + co) * m_total;
                T* wg_row = wg + co * k_total;
                for (index_t k = 0; k < k_total; ++k)
                    wg_row[k] += dot_lanes(g_plane, col.data() + k * m_total, m_total);
            });
        }
        return;
    }
    parallel_for(ws.n, [&](index_t co) {
        for (index_t n = 0; n < xs.n; ++n) {
            const T* g_plane = g + (n * ws.n + co) * oh_n * ow_n;
            for (index_t ci = 0; ci < ws.c; ++ci) {
                const T* x_chan = x + (n * xs.c + ci) * xs.h * xs.w;
                T* wg_chan = wg + (co * ws.c + ci) * ws.h * ws.w;
                for (index_t kh = 0; kh < ws.h; ++kh) {
                    for (index_t kw = 0; kw < ws.w; ++kw) {
                        T acc = T(0);
                        for (index_t oh = 0; oh < oh_n; ++oh) {
                            const index_t ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= xs.h) continue;
                            const T* x_row = x_chan + ih * xs.w;
                            const T* g_row = g_plane + oh * ow_n;
                            if (stride == 1) {
                                const index_t shift = kw - pad;
                                const index_t ow0 = std::max<index_t>(0, -shift);
                                const index_t ow1 = std::min<index_t>(ow_n, xs.w - shift);
                                const T* xr = x_row + shift;
                                for (index_t ow = ow0; ow < ow1; ++ow) acc += g_row[ow] * xr[ow];
                            } else {
                                const index_t ow0 =
                                    std::max<index_t>(0, div_ceil(pad - kw, stride));
                                const index_t ow1 = std::min<index_t>(
                                    ow_n, div_floor(xs.w - 1 + pad - kw, stride) + 1);
                                for (index_t ow = ow0; ow < ow1; ++ow)
                                    acc += g_row[ow] * x_row[ow * stride - pad + kw];
                            }
                        }
                        wg_chan[kh * ws.w + kw] += acc;
                    }
                }
            }
        }
    });
}

}  // namespace detail

// 2-D convolution (cross-correlation). weight: (C_out, C_in, kH, kW),
// bias: (1, C_out, 1, 1). Differentiable w.r.t. input, weight and bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 index_t stride, index_t padding) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (stride <= 0) throw ConfigError("conv2d: stride must be positive");
    if (padding < 0) throw ConfigError("conv2d: padding must be non-negative");
    if (xs.c != ws.c)
        throw ConfigError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                          std::to_string(ws.c));
    if (!(bias.shape() == Shape{1, ws.n, 1, 1}))
        throw ConfigError("conv2d: bias shape " + bias.shape().str() + " != (1," +
                          std::to_string(ws.n) + ",1,1)");
    const index_t oh_n = (xs.h + 2 * padding - ws.h) / stride + 1;
    const index_t ow_n = (xs.w + 2 * padding - ws.w) / stride + 1;
    if (oh_n <= 0 || ow_n <= 0)
        throw ConfigError("conv2d: kernel " + ws.str() + " does not fit input " + xs.str());

    Shape os{xs.n, ws.n, oh_n, ow_n};
    std::vector<T> out(static_cast<std::size_t>(os.numel()));
    // bias pre-fill
    for (index_t n = 0; n < os.n; ++n)
        for (index_t co = 0; co < os.c; ++co)
            std::fill_n(out.data() + (n * os.c + co) * oh_n * ow_n, oh_n * ow_n, bias.data()[co]);
    detail::conv_forward_kernel(out.data(), x.data(), weight.data(), xs, ws, oh_n, ow_n, stride,
                                padding);

    return detail::make_op<T>(
        os, std::move(out), {x, weight, bias},
        [xs, ws, oh_n, ow_n, stride, padding](detail::Node<T>& n) {
            auto& x_ = *n.parents[0];
            auto& w_ = *n.parents[1];
            auto& b_ = *n.parents[2];
            if (x_.requires_grad) {
                x_.ensure_grad();
                detail::conv_backward_input_kernel(x_.grad.data(), n.grad.data(), w_.value.data(),
                                                   xs, ws, oh_n, ow_n, stride, padding);
            }
            if (w_.requires_grad) {
                w_.ensure_grad();
                detail::conv_backward_weight_kernel(w_.grad.data(), x_.value.data(), n.grad.data(),
                                                    xs, ws, oh_n, ow_n, stride, padding);
            }
            if (b_.requires_grad) {
                b_.ensure_grad();
                parallel_for(ws.n, [&](index_t co) {
                    double acc = 0.0;
                    for (index_t b = 0; b < xs.n; ++b) {
                        const T* g_plane = n.grad.data() + (b * ws.n + co) * oh_n * ow_n;
                        for (index_t i = 0; i < oh_n * ow_n; ++i)
                            acc += static_cast<double>(g_plane[i]);
                    }
                    b_.grad[co] += static_cast<T>(acc);
                });
            }
        });
}

// Transposed convolution, the exact adjoint of conv2d with the same kernel.
// weight: (C_in, C_out, kH, kW), bias: (1, C_out, 1, 1). The configuration
// must double the spatial size (the decoder contract): stride 2, kH = kW,
// kH - 2*padding = 2.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            index_t stride = 2, index_t padding = 1) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();  // (Ci, Co, kH, kW)
    if (xs.c != ws.n)
        throw ConfigError("transposed_conv2d: input has " + std::to_string(xs.c) +
                          " channels, weight expects " + std::to_string(ws.n));
    if (!(bias.shape() == Shape{1, ws.c, 1, 1}))
        throw ConfigError("transposed_conv2d: bias shape " + bias.shape().str() + " != (1," +
                          std::to_string(ws.c) + ",1,1)");
    const index_t oh_n = stride * (xs.h - 1) + ws.h - 2 * padding;
    const index_t ow_n = stride * (xs.w - 1) + ws.w - 2 * padding;
    if (stride != 2 || ws.h != ws.w || oh_n != 2 * xs.h || ow_n != 2 * xs.w)
        throw ConfigError("transposed_conv2d: configuration must exactly double the spatial size "
                          "(stride 2, k - 2*padding = 2); got kernel " +
                          ws.str() + ", stride " + std::to_string(stride) + ", padding " +
                          std::to_string(padding));

    Shape os{xs.n, ws.c, oh_n, ow_n};
    std::vector<T> out(static_cast<std::size_t>(os.numel()));
    for (index_t n = 0; n < os.n; ++n)
        for (index_t co = 0; co < os.c; ++co)
            std::fill_n(out.data() + (n * os.c + co) * oh_n * ow_n, oh_n * ow_n, bias.data()[co]);

    // Forward is the conv backward-input pattern with the output in the role
    // of the (larger) conv input. Reuse the kernels with a conv-layout view
    // of the weights: wconv[co', ci', kh, kw] = weight[ci', co', kh, kw]
    // where the "conv" maps (N, Co, 2H, 2W) -> (N, Ci, H, W).
    const Shape conv_ws{ws.n, ws.c, ws.h, ws.w};  // (conv C_out = Ci, conv C_in = Co)
    detail::conv_backward_input_kernel(out.data(), x.data(), weight.data(), os, conv_ws, xs.h,
                                       xs.w, stride, padding);

    return detail::make_op<T>(
        os, std::move(out), {x, weight, bias},
        [xs, ws, os, conv_ws, stride, padding](detail::Node<T>& n) {
            auto& x_ = *n.parents[0];
            auto& w_ = *n.parents[1];
            auto& b_ = *n.parents[2];
            if (x_.requires_grad) {
                x_.ensure_grad();
                // adjoint of the adjoint: plain conv forward without bias
                detail::conv_forward_kernel(x_.grad.data(), n.grad.data(), w_.value.data(), os,
                                            conv_ws, xs.h, xs.w, stride, padding);
            }
            if (w_.requires_grad) {
                w_.ensure_grad();
                // same contraction as conv's weight grad with x and g swapped
                detail::conv_backward_weight_kernel(w_.grad.data(), n.grad.data(), x_.value.data(),
                                                    os, conv_ws, xs.h, xs.w, stride, padding);
            }
            if (b_.requires_grad) {
                b_.ensure_grad();
                parallel_for(os.c, [&](index_t co) {
                    double acc = 0.0;
                    for (index_t b = 0; b < os.n; ++b) {
                        const T* g_plane = n.grad.data() + (b * os.c + co) * os.h * os.w;
                        for (index_t i = 0; i < os.h * os.w; ++i)
                            acc += static_cast<double>(g_plane[i]);
                    }
                    b_.grad[co] += static_cast<T>(acc);
                });
            }
        });
}

// ---------------------------------------------------------------------------
// bilinear resize
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
    index_t i0, i1;
    double w;  // weight of i1; i0 carries (1 - w)
};

inline std::vector<LerpTap> resize_taps(index_t in_n, index_t out_n) {
    std::vector<LerpTap> taps(static_cast<std::size_t>(out_n));
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (index_t o = 0; o < out_n; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in_n - 1));
        index_t i0 = static_cast<index_t>(src);
        index_t i1 = std::min(i0 + 1, in_n - 1);
        taps[static_cast<std::size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

}  // namespace detail

// Half-pixel-aligned bilinear interpolation to (out_h, out_w). Halving is
// then exactly the 2x2 box average; constants are preserved bit-exactly.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, index_t out_h, index_t out_w) {
    const Shape xs = x.shape();
    if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_resize: output size must be >= 1");
    Shape os{xs.n, xs.c, out_h, out_w};
    auto ytaps = std::make_shared<std::vector<detail::LerpTap>>(detail::resize_taps(xs.h, out_h));
    auto xtaps = std::make_shared<std::vector<detail::LerpTap>>(detail::resize_taps(xs.w, out_w));

    std::vector<T> out(static_cast<std::size_t>(os.numel()));
    parallel_for(xs.n * xs.c, [&](index_t plane) {
        const T* src = x.data() + plane * xs.h * xs.w;
        T* dst = out.data() + plane * out_h * out_w;
        for (index_t oy = 0; oy < out_h; ++oy) {
            const auto& ty = (*ytaps)[static_cast<std::size_t>(oy)];
            const T* row0 = src + ty.i0 * xs.w;
            const T* row1 = src + ty.i1 * xs.w;
            const T wy = static_cast<T>(ty.w);
            for (index_t ox = 0; ox < out_w; ++ox) {
                const auto& tx = (*xtaps)[static_cast<std::size_t>(ox)];
                const T wx = static_cast<T>(tx.w);
                const T top = row0[tx.i0] + wx * (row0[tx.i1] - row0[tx.i0]);
                const T bot = row1[tx.i0] + wx * (row1[tx.i1] - row1[tx.i0]);
                dst[oy * out_w + ox] = top + wy * (bot - top);
            }
        }
    });

    return detail::make_op<T>(os, std::move(out), {x}, [xs, os, ytaps, xtaps](detail::Node<T>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        parallel_for(xs.n * xs.c, [&](index_t plane) {
            T* pg = p.grad.data() + plane * xs.h * xs.w;
            const T* g = n.grad.data() + plane * os.h * os.w;
            for (index_t oy = 0; oy < os.h; ++oy) {
                const auto& ty = (*ytaps)[static_cast<std::size_t>(oy)];
                const T wy = static_cast<T>(ty.w);
                for (index_t ox = 0; ox < os.w; ++ox) {
                    const auto& tx = (*xtaps)[static_cast<std::size_t>(ox)];
                    const T wx = static_cast<T>(tx.w);
                    const T gv = g[oy * os.w + ox];
                    pg[ty.i0 * xs.w + tx.i0] += (T(1) - wy) * (T(1) - wx) * gv;
                    pg[ty.i0 * xs.w + tx.i1] += (T(1) - wy) * wx * gv;
                    pg[ty.i1 * xs.w + tx.i0] += wy * (T(1) - wx) * gv;
                    pg[ty.i1 * xs.w + tx.i1] += wy * wx * gv;
                }
            }
        });
    });
}

// ---------------------------------------------------------------------------
// data-only transforms (not differentiable; inputs must be graph leaves
// without gradient tracking — they serve data preparation and inference)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void require_plain(const Tensor<T>& x, const char* op) {
    if (x.requires_grad())
        throw UsageError(std::string(op) + " is a data transform and is not differentiable");
}

}  // namespace detail

template <typename T>
Tensor<T> crop(const Tensor<T>& x, index_t top, index_t left, index_t height, index_t width) {
    detail::require_plain(x, "crop");
    const Shape s = x.shape();
    if (top < 0 || left < 0 || top + height > s.h || left + width > s.w)
        throw UsageError("crop: window out of bounds");
    Tensor<T> out = Tensor<T>::zeros({s.n, s.c, height, width});
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < height; ++y) {
                const T* src = x.data() + ((n * s.c + c) * s.h + top + y) * s.w + left;
                T* dst = out.data() + ((n * s.c + c) * height + y) * width;
                std::copy(src, src + width, dst);
            }
    return out;
}

// Mirror padding that does not repeat the border sample (reflect-101).
template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, index_t bottom, index_t right) {
    detail::require_plain(x, "reflect_pad");
    const Shape s = x.shape();
    if (bottom >= s.h || right >= s.w)
        throw InputError("reflect_pad: padding must be smaller than the image");
    Tensor<T> out = Tensor<T>::zeros({s.n, s.c, s.h + bottom, s.w + right});
    const Shape os = out.shape();
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < os.h; ++y) {
                const index_t sy = y < s.h ? y : 2 * (s.h - 1) - y;
                for (index_t xw = 0; xw < os.w; ++xw) {
                    const index_t sx = xw < s.w ? xw : 2 * (s.w - 1) - xw;
                    out.at(n, c, y, xw) = x.at(n, c, sy, sx);
                }
            }
    return out;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
    detail::require_plain(x, "hflip");
    const Shape s = x.shape();
    Tensor<T> out = Tensor<T>::zeros(s);
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < s.h; ++y)
                for (index_t xw = 0; xw < s.w; ++xw)
                    out.at(n, c, y, xw) = x.at(n, c, y, s.w - 1 - xw);
    return out;
}

// Counter-clockwise rotation by quarter * 90 degrees.
template <typename T>
Tensor<T> rot90(const Tensor<T>& x, int quarter) {
    detail::require_plain(x, "rot90");
    const Shape s = x.shape();
    quarter = ((quarter % 4) + 4) % 4;
    if (quarter == 0) return x.clone();
    Shape os = (quarter % 2 == 0) ? s : Shape{s.n, s.c, s.w, s.h};
    Tensor<T> out = Tensor<T>::zeros(os);
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < s.h; ++y)
                for (index_t xw = 0; xw < s.w; ++xw) {
                    T v = x.at(n, c, y, xw);
                    switch (quarter) {
                        case 1: out.at(n, c, s.w - 1 - xw, y) = v; break;
                        case 2: out.at(n, c, s.h - 1 - y, s.w - 1 - xw) = v; break;
                        default: out.at(n, c, xw, s.h - 1 - y) = v; break;
                    }
                }
    return out;
}

// Cyclic shift (positive = down/right).
template <typename T>
Tensor<T> roll(const Tensor<T>& x, index_t dy, index_t dx) {
    detail::require_plain(x, "roll");
    const Shape s = x.shape();
    dy = ((dy % s.h) + s.h) % s.h;
    dx = ((dx % s.w) + s.w) % s.w;
    Tensor<T> out = Tensor<T>::zeros(s);
    for (index_t n = 0; n < s.n; ++n)
        for (index_t c = 0; c < s.c; ++c)
            for (index_t y = 0; y < s.h; ++y)
                for (index_t xw = 0; xw < s.w; ++xw)
                    out.at(n, c, (y + dy) % s.h, (xw + dx) % s.w) = x.at(n, c, y, xw);
    return out;
}

// Stacks single-sample tensors along the batch dimension.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
    if (items.empty()) throw UsageError("stack_batch: no inputs");
    const Shape s0 = items[0].shape();
    index_t ntotal = 0;
    for (const auto& t : items) {
        detail::require_plain(t, "stack_batch");
        const Shape s = t.shape();
        if (s.c != s0.c || s.h != s0.h || s.w != s0.w)
            throw ConfigError("stack_batch: mismatched shapes");
        ntotal += s.n;
    }
    Tensor<T> out = Tensor<T>::zeros({ntotal, s0.c, s0.h, s0.w});
    T* dst = out.data();
    for (const auto& t : items) {
        std::copy(t.data(), t.data() + t.numel(), dst);
        dst += t.numel();
    }
    return out;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.values())
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

}  // namespace mimo
