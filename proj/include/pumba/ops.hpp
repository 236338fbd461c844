#pragma once

// Differentiable operation set over TensorT. Exactly the ops the model
// needs: elementwise arithmetic with numpy-style broadcasting, matmul,
// activations, layer norm, softmax, depthwise conv, reductions, shape
// surgery. Float inner loops go through the dispatched kernel table; the
// double instantiation (gradient-check shadow) uses inline reference loops.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <type_traits>
#include <vector>

#include "pumba/kernels.hpp"
#include "pumba/tensor.hpp"

namespace pumba {

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape);

namespace detail {

template <typename T>
inline void k_add(size_t n, const T* a, const T* b, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().add(n, a, b, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

template <typename T>
inline void k_sub(size_t n, const T* a, const T* b, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().sub(n, a, b, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = a[i] - b[i];
}

template <typename T>
inline void k_mul(size_t n, const T* a, const T* b, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().mul(n, a, b, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}

template <typename T>
inline void k_div(size_t n, const T* a, const T* b, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().div(n, a, b, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = a[i] / b[i];
}

template <typename T>
inline void k_scale(size_t n, T alpha, const T* x, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().scale(n, alpha, x, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = alpha * x[i];
}

template <typename T>
inline void k_axpy(size_t n, T alpha, const T* x, T* y) {
    if constexpr (std::is_same_v<T, float>) kern::active().axpy(n, alpha, x, y);
    else
        for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline void k_madd(size_t n, const T* a, const T* b, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().madd(n, a, b, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] += a[i] * b[i];
}

template <typename T>
inline T k_dot(size_t n, const T* a, const T* b) {
    if constexpr (std::is_same_v<T, float>) return kern::active().dot(n, a, b);
    else {
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
        return acc;
    }
}

template <typename T>
inline T k_sum(size_t n, const T* x) {
    if constexpr (std::is_same_v<T, float>) return kern::active().sum(n, x);
    else {
        T acc = T(0);
        for (size_t i = 0; i < n; ++i) acc += x[i];
        return acc;
    }
}

template <typename T>
inline T k_max(size_t n, const T* x) {
    if constexpr (std::is_same_v<T, float>) return kern::active().max(n, x);
    else {
        T m = x[0];
        for (size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
}

template <typename T>
inline void k_vexp(size_t n, const T* x, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().vexp(n, x, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = std::exp(x[i]);
}

template <typename T>
inline void k_vsigmoid(size_t n, const T* x, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().vsigmoid(n, x, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = T(1) / (T(1) + std::exp(-x[i]));
}

template <typename T>
inline void k_vsilu(size_t n, const T* x, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().vsilu(n, x, o);
    else
        for (size_t i = 0; i < n; ++i) o[i] = x[i] / (T(1) + std::exp(-x[i]));
}

template <typename T>
inline void k_vsoftplus(size_t n, const T* x, T* o) {
    if constexpr (std::is_same_v<T, float>) kern::active().vsoftplus(n, x, o);
    else
        for (size_t i = 0; i < n; ++i)
            o[i] = x[i] > T(0) ? x[i] + std::log1p(std::exp(-x[i]))
                               : std::log1p(std::exp(x[i]));
}

template <typename T>
inline void k_gemm(size_t m, size_t k, size_t n, const T* a, const T* b, T beta, T* c) {
    if constexpr (std::is_same_v<T, float>) kern::active().gemm(m, k, n, a, b, beta, c);
    else {
        for (size_t i = 0; i < m; ++i) {
            T* crow = c + i * n;
            if (beta == T(0))
                for (size_t j = 0; j < n; ++j) crow[j] = T(0);
            const T* arow = a + i * k;
            for (size_t p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b + p * n;
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
inline bool recording(std::initializer_list<const TensorT<T>*> inputs) {
    if (!active_tape<T>()) return false;
    for (const TensorT<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Wraps a backward closure so the node's output grad is allocated (zeros)
// before the body reads it; outputs never reached by the loss then
// contribute exact zeros.
template <typename T>
inline void record_node(const std::shared_ptr<TensorImplT<T>>& out_impl,
                        std::function<void()> fn) {
    active_tape<T>()->record([out_impl, fn = std::move(fn)] {
        out_impl->ensure_grad();
        fn();
    });
}

// ---- broadcasting machinery (numpy right-aligned, rank <= 6) ----

constexpr size_t kMaxRank = 6;

struct BcastPlan {
    size_t rank = 0;
    size_t dims[kMaxRank] = {};
    size_t sa[kMaxRank] = {};
    size_t sb[kMaxRank] = {};
    size_t total = 1;
    bool same_shape = false;
};

inline BcastPlan make_bcast_plan(const Shape& a, const Shape& b, Shape& out) {
    if (a.size() > kMaxRank || b.size() > kMaxRank)
        throw ShapeError("broadcast: rank above " + std::to_string(kMaxRank) +
                         " unsupported: " + shape_str(a) + " vs " + shape_str(b));
    BcastPlan p;
    p.rank = std::max(a.size(), b.size());
    out.assign(p.rank, 1);
    for (size_t i = 0; i < p.rank; ++i) {
        const size_t ia = a.size() + i >= p.rank ? a[a.size() + i - p.rank] : 1;
        const size_t ib = b.size() + i >= p.rank ? b[b.size() + i - p.rank] : 1;
        if (ia != ib && ia != 1 && ib != 1)
            throw ShapeError("broadcast: incompatible shapes " + shape_str(a) +
                             " and " + shape_str(b));
        out[i] = std::max(ia, ib);
        p.dims[i] = out[i];
        p.total *= out[i];
    }
    // row-major strides over each input's own extents, zeroed on broadcast axes
    size_t stride = 1;
    for (size_t i = p.rank; i-- > 0;) {
        const size_t ia = a.size() + i >= p.rank ? a[a.size() + i - p.rank] : 1;
        p.sa[i] = ia == 1 ? 0 : stride;
        stride *= ia;
    }
    stride = 1;
    for (size_t i = p.rank; i-- > 0;) {
        const size_t ib = b.size() + i >= p.rank ? b[b.size() + i - p.rank] : 1;
        p.sb[i] = ib == 1 ? 0 : stride;
        stride *= ib;
    }
    p.same_shape = (a == b);
    return p;
}

// out[lin] = f(a[offset_a], b[offset_b]) over the whole broadcast iteration
// space; odometer walk keeps both offsets in sync.
template <typename T, typename F>
inline void bcast_apply(const BcastPlan& p, const T* a, const T* b, T* out, F&& f) {
    size_t idx[kMaxRank] = {};
    size_t oa = 0, ob = 0;
    for (size_t lin = 0; lin < p.total; ++lin) {
        out[lin] = f(a[oa], b[ob]);
        for (size_t ax = p.rank; ax-- > 0;) {
            oa += p.sa[ax];
            ob += p.sb[ax];
            if (++idx[ax] < p.dims[ax]) break;
            idx[ax] = 0;
            oa -= p.sa[ax] * p.dims[ax];
            ob -= p.sb[ax] * p.dims[ax];
        }
    }
}

// ga[offset_a] += fa(a,b) * g[lin]; gb likewise. Either target may be null.
template <typename T, typename FA, typename FB>
inline void bcast_backward(const BcastPlan& p, const T* a, const T* b, const T* g,
                           T* ga, T* gb, FA&& fa, FB&& fb) {
    size_t idx[kMaxRank] = {};
    size_t oa = 0, ob = 0;
    for (size_t lin = 0; lin < p.total; ++lin) {
        if (ga) ga[oa] += fa(a[oa], b[ob]) * g[lin];
        if (gb) gb[ob] += fb(a[oa], b[ob]) * g[lin];
        for (size_t ax = p.rank; ax-- > 0;) {
            oa += p.sa[ax];
            ob += p.sb[ax];
            if (++idx[ax] < p.dims[ax]) break;
            idx[ax] = 0;
            oa -= p.sa[ax] * p.dims[ax];
            ob -= p.sb[ax] * p.dims[ax];
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, BinOp op) {
    Shape out_shape;
    const BcastPlan plan = make_bcast_plan(a.shape(), b.shape(), out_shape);
    TensorT<T> out(out_shape);
    const size_t n = out.size();
    if (plan.same_shape) {
        switch (op) {
            case BinOp::Add: k_add<T>(n, a.data(), b.data(), out.data()); break;
            case BinOp::Sub: k_sub<T>(n, a.data(), b.data(), out.data()); break;
            case BinOp::Mul: k_mul<T>(n, a.data(), b.data(), out.data()); break;
            case BinOp::Div: k_div<T>(n, a.data(), b.data(), out.data()); break;
        }
    } else {
        switch (op) {
            case BinOp::Add: bcast_apply<T>(plan, a.data(), b.data(), out.data(), [](T x, T y) { return x + y; }); break;
            case BinOp::Sub: bcast_apply<T>(plan, a.data(), b.data(), out.data(), [](T x, T y) { return x - y; }); break;
            case BinOp::Mul: bcast_apply<T>(plan, a.data(), b.data(), out.data(), [](T x, T y) { return x * y; }); break;
            case BinOp::Div: bcast_apply<T>(plan, a.data(), b.data(), out.data(), [](T x, T y) { return x / y; }); break;
        }
    }
    if (recording<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_node<T>(oi, [ai, bi, oi, plan, op] {
            const size_t n = oi->data.size();
            T* ga = nullptr;
            T* gb = nullptr;
            if (ai->requires_grad) { ai->ensure_grad(); ga = ai->grad.data(); }
            if (bi->requires_grad) { bi->ensure_grad(); gb = bi->grad.data(); }
            const T* g = oi->grad.data();
            if (plan.same_shape) {
                switch (op) {
                    case BinOp::Add:
                        if (ga) k_axpy<T>(n, T(1), g, ga);
                        if (gb) k_axpy<T>(n, T(1), g, gb);
                        break;
                    case BinOp::Sub:
                        if (ga) k_axpy<T>(n, T(1), g, ga);
                        if (gb) k_axpy<T>(n, T(-1), g, gb);
                        break;
                    case BinOp::Mul:
                        if (ga) k_madd<T>(n, g, bi->data.data(), ga);
                        if (gb) k_madd<T>(n, g, ai->data.data(), gb);
                        break;
                    case BinOp::Div:
                        for (size_t i = 0; i < n; ++i) {
                            const T bv = bi->data[i];
                            if (ga) ga[i] += g[i] / bv;
                            if (gb) gb[i] -= g[i] * ai->data[i] / (bv * bv);
                        }
                        break;
                }
                return;
            }
            const T* av = ai->data.data();
            const T* bv = bi->data.data();
            switch (op) {
                case BinOp::Add:
                    bcast_backward<T>(plan, av, bv, g, ga, gb, [](T, T) { return T(1); },
                                      [](T, T) { return T(1); });
                    break;
                case BinOp::Sub:
                    bcast_backward<T>(plan, av, bv, g, ga, gb, [](T, T) { return T(1); },
                                      [](T, T) { return T(-1); });
                    break;
                case BinOp::Mul:
                    bcast_backward<T>(plan, av, bv, g, ga, gb, [](T, T y) { return y; },
                                      [](T x, T) { return x; });
                    break;
                case BinOp::Div:
                    bcast_backward<T>(plan, av, bv, g, ga, gb,
                                      [](T, T y) { return T(1) / y; },
                                      [](T x, T y) { return -x / (y * y); });
                    break;
            }
        });
    }
    return out;
}

}  // namespace detail

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Add);
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Sub);
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Mul);
}
template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return detail::binary_op(a, b, detail::BinOp::Div);
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& x, T c) {
    TensorT<T> out(x.shape());
    const size_t n = x.size();
    for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + c;
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            detail::k_axpy<T>(oi->grad.size(), T(1), oi->grad.data(), xi->grad.data());
        });
    }
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& x, T c) {
    TensorT<T> out(x.shape());
    detail::k_scale<T>(x.size(), c, x.data(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, c] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            detail::k_axpy<T>(oi->grad.size(), c, oi->grad.data(), xi->grad.data());
        });
    }
    return out;
}

template <typename T>
TensorT<T> neg(const TensorT<T>& x) {
    return mul_scalar(x, T(-1));
}

template <typename T>
TensorT<T> exp(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    detail::k_vexp<T>(x.size(), x.data(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            detail::k_madd<T>(oi->grad.size(), oi->grad.data(), oi->data.data(),
                              xi->grad.data());
        });
    }
    return out;
}

template <typename T>
TensorT<T> log(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    for (size_t i = 0; i < x.size(); ++i) out.data()[i] = std::log(x.data()[i]);
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] / xi->data[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sqrt(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    for (size_t i = 0; i < x.size(); ++i) out.data()[i] = std::sqrt(x.data()[i]);
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[i] += oi->grad[i] * T(0.5) / oi->data[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    detail::k_vsigmoid<T>(x.size(), x.data(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) {
                const T y = oi->data[i];
                xi->grad[i] += oi->grad[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    detail::k_vsilu<T>(x.size(), x.data(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const size_t n = oi->grad.size();
            std::vector<T> sig(n);
            detail::k_vsigmoid<T>(n, xi->data.data(), sig.data());
            for (size_t i = 0; i < n; ++i) {
                const T s = sig[i];
                xi->grad[i] += oi->grad[i] * (s + xi->data[i] * s * (T(1) - s));
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> softplus(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    detail::k_vsoftplus<T>(x.size(), x.data(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const size_t n = oi->grad.size();
            std::vector<T> sig(n);
            detail::k_vsigmoid<T>(n, xi->data.data(), sig.data());
            for (size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * sig[i];
        });
    }
    return out;
}

// Gradient passes through where lo <= x <= hi, zero outside.
template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi) {
    TensorT<T> out(x.shape());
    for (size_t i = 0; i < x.size(); ++i)
        out.data()[i] = std::min(std::max(x.data()[i], lo), hi);
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, lo, hi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) {
                const T v = xi->data[i];
                if (v >= lo && v <= hi) xi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
    return clamp(x, T(0), std::numeric_limits<T>::max());
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    TensorT<T> out(Shape{m, n});
    detail::k_gemm<T>(m, k, n, a.data(), b.data(), T(0), out.data());
    if (detail::recording<T>({&a, &b})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        detail::record_node<T>(oi, [ai, bi, oi, m, k, n] {
            const T* g = oi->grad.data();
            if (ai->requires_grad) {
                ai->ensure_grad();
                // gA += g * B^T
                std::vector<T> bt(n * k);
                for (size_t r = 0; r < k; ++r)
                    for (size_t c = 0; c < n; ++c) bt[c * k + r] = bi->data[r * n + c];
                detail::k_gemm<T>(m, n, k, g, bt.data(), T(1), ai->grad.data());
            }
            if (bi->requires_grad) {
                bi->ensure_grad();
                // gB += A^T * g
                std::vector<T> at(k * m);
                for (size_t r = 0; r < m; ++r)
                    for (size_t c = 0; c < k; ++c) at[c * m + r] = ai->data[r * k + c];
                detail::k_gemm<T>(k, m, n, at.data(), g, T(1), bi->grad.data());
            }
        });
    }
    return out;
}

// Standardize over the last axis, then affine. Population variance.
template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain,
                      const TensorT<T>& bias, T eps) {
    if (eps <= T(0)) throw ContractError("layer_norm: eps must be positive");
    if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
    const size_t d = x.shape().back();
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm: gain/bias length " + std::to_string(gain.size()) +
                         "/" + std::to_string(bias.size()) + " vs last axis " +
                         std::to_string(d));
    const size_t rows = x.size() / d;
    TensorT<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_sigma = std::make_shared<std::vector<T>>(rows);
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * d;
        T* or_ = out.data() + r * d;
        T mean = detail::k_sum<T>(d, xr) / T(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) {
            const T c = xr[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_sigma)[r] = is;
        T* xh = xhat->data() + r * d;
        for (size_t j = 0; j < d; ++j) {
            xh[j] = (xr[j] - mean) * is;
            or_[j] = gain.data()[j] * xh[j] + bias.data()[j];
        }
    }
    if (detail::recording<T>({&x, &gain, &bias})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
        detail::record_node<T>(oi, [xi, gi, bi, oi, xhat, inv_sigma, rows, d] {
            const T* g = oi->grad.data();
            if (gi->requires_grad) gi->ensure_grad();
            if (bi->requires_grad) bi->ensure_grad();
            if (xi->requires_grad) xi->ensure_grad();
            std::vector<T> gp(d);
            for (size_t r = 0; r < rows; ++r) {
                const T* gr = g + r * d;
                const T* xh = xhat->data() + r * d;
                if (gi->requires_grad)
                    for (size_t j = 0; j < d; ++j) gi->grad[j] += gr[j] * xh[j];
                if (bi->requires_grad)
                    for (size_t j = 0; j < d; ++j) bi->grad[j] += gr[j];
                if (xi->requires_grad) {
                    T mean_gp = T(0), mean_gpxh = T(0);
                    for (size_t j = 0; j < d; ++j) {
                        gp[j] = gi->data[j] * gr[j];
                        mean_gp += gp[j];
                        mean_gpxh += gp[j] * xh[j];
                    }
                    mean_gp /= T(d);
                    mean_gpxh /= T(d);
                    const T is = (*inv_sigma)[r];
                    T* gx = xi->grad.data() + r * d;
                    for (size_t j = 0; j < d; ++j)
                        gx[j] += is * (gp[j] - mean_gp - xh[j] * mean_gpxh);
                }
            }
        });
    }
    return out;
}

namespace detail {

// (outer, len, inner) view of an axis for reductions and softmax
struct AxisView {
    size_t outer, len, inner;
};

inline AxisView axis_view(const Shape& s, size_t axis) {
    if (axis >= s.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    AxisView v{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

inline Shape reduced_shape(const Shape& s, size_t axis, bool keepdim) {
    Shape out = s;
    if (keepdim) out[axis] = 1;
    else out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out = {1};
    return out;
}

}  // namespace detail

// Max-subtracted softmax along an axis.
template <typename T>
TensorT<T> softmax(const TensorT<T>& x, size_t axis) {
    const auto v = detail::axis_view(x.shape(), axis);
    TensorT<T> out(x.shape());
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
            const size_t base = o * v.len * v.inner + i;
            T m = x.data()[base];
            for (size_t l = 1; l < v.len; ++l)
                m = std::max(m, x.data()[base + l * v.inner]);
            T s = T(0);
            for (size_t l = 0; l < v.len; ++l) {
                const T e = std::exp(x.data()[base + l * v.inner] - m);
                out.data()[base + l * v.inner] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (size_t l = 0; l < v.len; ++l) out.data()[base + l * v.inner] *= inv;
        }
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, v] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t i = 0; i < v.inner; ++i) {
                    const size_t base = o * v.len * v.inner + i;
                    T dotgy = T(0);
                    for (size_t l = 0; l < v.len; ++l) {
                        const size_t k = base + l * v.inner;
                        dotgy += oi->grad[k] * oi->data[k];
                    }
                    for (size_t l = 0; l < v.len; ++l) {
                        const size_t k = base + l * v.inner;
                        xi->grad[k] += oi->data[k] * (oi->grad[k] - dotgy);
                    }
                }
        });
    }
    return out;
}

template <typename T>
TensorT<T> sum_axis(const TensorT<T>& x, size_t axis, bool keepdim = false) {
    const auto v = detail::axis_view(x.shape(), axis);
    TensorT<T> out(detail::reduced_shape(x.shape(), axis, keepdim));
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t l = 0; l < v.len; ++l)
            detail::k_axpy<T>(v.inner, T(1), x.data() + (o * v.len + l) * v.inner,
                              out.data() + o * v.inner);
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, v] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t o = 0; o < v.outer; ++o)
                for (size_t l = 0; l < v.len; ++l)
                    detail::k_axpy<T>(v.inner, T(1), oi->grad.data() + o * v.inner,
                                      xi->grad.data() + (o * v.len + l) * v.inner);
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, size_t axis, bool keepdim = false) {
    TensorT<T> s = sum_axis(x, axis, keepdim);
    return mul_scalar(s, T(1) / T(x.shape()[axis]));
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    TensorT<T> out(Shape{1});
    out.data()[0] = detail::k_sum<T>(x.size(), x.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const T g = oi->grad[0];
            for (auto& v : xi->grad) v += g;
        });
    }
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return mul_scalar(sum_all(x), T(1) / T(x.size()));
}

// Max along an axis, detached from the graph (stabilization helper).
template <typename T>
TensorT<T> max_axis_detached(const TensorT<T>& x, size_t axis, bool keepdim = false) {
    const auto v = detail::axis_view(x.shape(), axis);
    TensorT<T> out(detail::reduced_shape(x.shape(), axis, keepdim));
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t i = 0; i < v.inner; ++i) {
            const size_t base = o * v.len * v.inner + i;
            T m = x.data()[base];
            for (size_t l = 1; l < v.len; ++l)
                m = std::max(m, x.data()[base + l * v.inner]);
            out.data()[o * v.inner + i] = m;
        }
    return out;
}

// Depthwise 1-D convolution along the token axis (rows), "same" padding:
// pad_left = (K-1)/2, remainder on the right. x is [T x D], w is [K x D].
template <typename T>
TensorT<T> conv1d_depthwise(const TensorT<T>& x, const TensorT<T>& w) {
    if (x.rank() != 2 || w.rank() != 2 || x.extent(1) != w.extent(1))
        throw ShapeError("conv1d_depthwise: want [T x D] and [K x D], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const size_t Tn = x.extent(0), D = x.extent(1), K = w.extent(0);
    const size_t pl = (K - 1) / 2;
    TensorT<T> out(x.shape());
    for (size_t t = 0; t < Tn; ++t)
        for (size_t k = 0; k < K; ++k) {
            const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(t + k) -
                                     static_cast<std::ptrdiff_t>(pl);
            if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
            detail::k_madd<T>(D, w.data() + k * D, x.data() + u * D, out.data() + t * D);
        }
    if (detail::recording<T>({&x, &w})) {
        out.set_requires_grad(true);
        auto xi = x.impl(), wi = w.impl(), oi = out.impl();
        detail::record_node<T>(oi, [xi, wi, oi, Tn, D, K, pl] {
            if (xi->requires_grad) xi->ensure_grad();
            if (wi->requires_grad) wi->ensure_grad();
            for (size_t t = 0; t < Tn; ++t)
                for (size_t k = 0; k < K; ++k) {
                    const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(t + k) -
                                             static_cast<std::ptrdiff_t>(pl);
                    if (u < 0 || u >= static_cast<std::ptrdiff_t>(Tn)) continue;
                    const T* g = oi->grad.data() + t * D;
                    if (wi->requires_grad)
                        detail::k_madd<T>(D, g, xi->data.data() + u * D,
                                          wi->grad.data() + k * D);
                    if (xi->requires_grad)
                        detail::k_madd<T>(D, g, wi->data.data() + k * D,
                                          xi->grad.data() + u * D);
                }
        });
    }
    return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const size_t rank = parts[0].rank();
    if (axis >= rank) throw ShapeError("concat: axis out of range");
    Shape out_shape = parts[0].shape();
    size_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank)
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()));
        for (size_t i = 0; i < rank; ++i)
            if (i != axis && p.shape()[i] != out_shape[i])
                throw ShapeError("concat: incompatible " + shape_str(p.shape()) +
                                 " vs " + shape_str(parts[0].shape()));
        axis_total += p.shape()[axis];
    }
    out_shape[axis] = axis_total;
    TensorT<T> out(out_shape);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
    const size_t out_row = axis_total * inner;
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t chunk = p.shape()[axis] * inner;
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(p.data() + o * chunk, chunk, out.data() + o * out_row + off);
        off += chunk;
    }
    bool rec = false;
    for (const auto& p : parts)
        if (p.requires_grad()) rec = true;
    if (rec && active_tape<T>()) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImplT<T>>> impls;
        std::vector<size_t> chunks;
        for (const auto& p : parts) {
            impls.push_back(p.impl());
            chunks.push_back(p.shape()[axis] * inner);
        }
        auto oi = out.impl();
        detail::record_node<T>(oi, [impls, chunks, oi, outer, out_row] {
            size_t off = 0;
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                const size_t chunk = chunks[pi];
                if (impls[pi]->requires_grad) {
                    impls[pi]->ensure_grad();
                    for (size_t o = 0; o < outer; ++o)
                        detail::k_axpy<T>(chunk, T(1), oi->grad.data() + o * out_row + off,
                                          impls[pi]->grad.data() + o * chunk);
                }
                off += chunk;
            }
        });
    }
    return out;
}

// Gather along axis 0; rows may repeat. Adjoint scatter-adds.
template <typename T>
TensorT<T> select_rows(const TensorT<T>& x, std::vector<size_t> indices) {
    if (x.rank() < 1) throw ShapeError("select_rows: rank-0 input");
    const size_t rows = x.extent(0);
    const size_t rowsz = x.size() / rows;
    for (size_t i : indices)
        if (i >= rows)
            throw ContractError("select_rows: index " + std::to_string(i) +
                                " out of range [0, " + std::to_string(rows) + ")");
    Shape out_shape = x.shape();
    out_shape[0] = indices.size();
    TensorT<T> out(out_shape);
    for (size_t r = 0; r < indices.size(); ++r)
        std::copy_n(x.data() + indices[r] * rowsz, rowsz, out.data() + r * rowsz);
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        auto idx = std::make_shared<std::vector<size_t>>(std::move(indices));
        detail::record_node<T>(oi, [xi, oi, idx, rowsz] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t r = 0; r < idx->size(); ++r)
                detail::k_axpy<T>(rowsz, T(1), oi->grad.data() + r * rowsz,
                                  xi->grad.data() + (*idx)[r] * rowsz);
        });
    }
    return out;
}

template <typename T>
TensorT<T> row_range(const TensorT<T>& x, size_t lo, size_t hi) {
    if (lo > hi || hi > x.extent(0))
        throw ContractError("row_range: [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + ") out of range for " +
                            shape_str(x.shape()));
    std::vector<size_t> idx(hi - lo);
    for (size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    return select_rows(x, std::move(idx));
}

template <typename T>
TensorT<T> row(const TensorT<T>& x, size_t r) {
    TensorT<T> sel = select_rows(x, std::vector<size_t>{r});
    Shape s(x.shape().begin() + 1, x.shape().end());
    if (s.empty()) s = {1};
    return reshape(sel, s);
}

template <typename T>
TensorT<T> reverse_rows(const TensorT<T>& x) {
    std::vector<size_t> idx(x.extent(0));
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = idx.size() - 1 - i;
    return select_rows(x, std::move(idx));
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expects rank 2, got " + shape_str(x.shape()));
    const size_t m = x.extent(0), n = x.extent(1);
    TensorT<T> out(Shape{n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, m, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j)
                    xi->grad[i * n + j] += oi->grad[j * m + i];
        });
    }
    return out;
}

// Copying reshape; the tape stores no aliasing views.
template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(new_shape) + " changes element count");
    TensorT<T> out(new_shape);
    std::copy_n(x.data(), x.size(), out.data());
    if (detail::recording<T>({&x})) {
        out.set_requires_grad(true);
        auto xi = x.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            detail::k_axpy<T>(oi->grad.size(), T(1), oi->grad.data(), xi->grad.data());
        });
    }
    return out;
}

template <typename T>
TensorT<T> detach(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    std::copy_n(x.data(), x.size(), out.data());
    return out;
}

template <typename T>
TensorT<T> stack_rows(const std::vector<TensorT<T>>& rows_in) {
    std::vector<TensorT<T>> shaped;
    shaped.reserve(rows_in.size());
    for (const auto& r : rows_in) {
        Shape s = r.shape();
        s.insert(s.begin(), 1);
        shaped.push_back(reshape(r, s));
    }
    return concat(shaped, 0);
}

}  // namespace pumba
