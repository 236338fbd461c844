#pragma once

// Reference kernel templates shared by the float scalar table and the
// 64-bit shadow instantiation used for gradient checking. One definition
// of the math, two precisions.

#include <cmath>
#include <cstddef>
#include <vector>

namespace pumba::kern::ref {

template <typename T>
void gemm(size_t m, size_t k, size_t n, const T* a, const T* b, T beta, T* c) {
    for (size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (beta == T(0)) {
            for (size_t j = 0; j < n; ++j) crow[j] = T(0);
        }
        const T* arow = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
T softplus_scalar(T v) {
    return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

// Selective-scan recurrence; see kernels.hpp for the contract.
template <typename T>
void scan_forward(size_t T_len, size_t D, size_t S,
                  const T* A, const T* delta, const T* B, const T* C,
                  const T* x, const T* dskip, T* h_state, T* y, T* h_all) {
    T* h_buf = h_state;
    std::vector<T> h_local;
    if (!h_buf) {
        h_local.assign(D * S, T(0));
        h_buf = h_local.data();
    }
    for (size_t t = 0; t < T_len; ++t) {
        const T* Bt = B + t * S;
        const T* Ct = C + t * S;
        const T* xt = x + t * D;
        const T* dt = delta + t * D;
        T* yt = y + t * D;
        for (size_t d = 0; d < D; ++d) {
            const T dd = dt[d];
            const T dx = dd * xt[d];
            const T* Ad = A + d * S;
            T* hd = h_buf + d * S;
            T acc = T(0);
            for (size_t s = 0; s < S; ++s) {
                hd[s] = std::exp(dd * Ad[s]) * hd[s] + dx * Bt[s];
                acc += Ct[s] * hd[s];
            }
            yt[d] = acc + dskip[d] * xt[d];
        }
        if (h_all) {
            T* dst = h_all + t * D * S;
            for (size_t i = 0; i < D * S; ++i) dst[i] = h_buf[i];
        }
    }
}

template <typename T>
void scan_backward(size_t T_len, size_t D, size_t S,
                   const T* A, const T* delta, const T* B, const T* C,
                   const T* x, const T* dskip, const T* h_all, const T* gy,
                   T* gx, T* gdelta, T* gB, T* gC, T* gA, T* gdskip) {
    std::vector<T> hhat(D * S, T(0));
    std::vector<T> abar_next(D * S, T(0));
    for (size_t t = T_len; t-- > 0;) {
        const T* Bt = B + t * S;
        const T* Ct = C + t * S;
        const T* xt = x + t * D;
        const T* dt = delta + t * D;
        const T* gyt = gy + t * D;
        const T* ht = h_all + t * D * S;
        const T* hprev = t > 0 ? h_all + (t - 1) * D * S : nullptr;
        T* gBt = gB + t * S;
        T* gCt = gC + t * S;
        const bool has_next = t + 1 < T_len;
        for (size_t d = 0; d < D; ++d) {
            const T g = gyt[d];
            const T dd = dt[d];
            const T xv = xt[d];
            const T* Ad = A + d * S;
            const T* htd = ht + d * S;
            T* hh = hhat.data() + d * S;
            T* ab = abar_next.data() + d * S;
            T gdelta_acc = T(0);
            T gx_acc = T(0);
            for (size_t s = 0; s < S; ++s) {
                const T hh_s = g * Ct[s] + (has_next ? ab[s] * hh[s] : T(0));
                gCt[s] += g * htd[s];
                const T abar = std::exp(dd * Ad[s]);
                const T hp = hprev ? hprev[d * S + s] : T(0);
                const T gabar = hh_s * hp;
                gdelta_acc += gabar * abar * Ad[s] + hh_s * Bt[s] * xv;
                gA[d * S + s] += gabar * abar * dd;
                gBt[s] += hh_s * dd * xv;
                gx_acc += hh_s * dd * Bt[s];
                hh[s] = hh_s;
                ab[s] = abar;
            }
            gdelta[t * D + d] += gdelta_acc;
            gx[t * D + d] += gx_acc + g * dskip[d];
            gdskip[d] += g * xv;
        }
    }
}

// Exact zero-order-hold discretization of the input path:
//   Bbar = expm1(delta*A)/A * B     (ablation mode, scalar only)
template <typename T>
void scan_forward_zoh(size_t T_len, size_t D, size_t S,
                      const T* A, const T* delta, const T* B, const T* C,
                      const T* x, const T* dskip, T* h_state, T* y, T* h_all) {
    T* h_buf = h_state;
    std::vector<T> h_local;
    if (!h_buf) {
        h_local.assign(D * S, T(0));
        h_buf = h_local.data();
    }
    for (size_t t = 0; t < T_len; ++t) {
        const T* Bt = B + t * S;
        const T* Ct = C + t * S;
        const T* xt = x + t * D;
        const T* dt = delta + t * D;
        T* yt = y + t * D;
        for (size_t d = 0; d < D; ++d) {
            const T dd = dt[d];
            const T xv = xt[d];
            const T* Ad = A + d * S;
            T* hd = h_buf + d * S;
            T acc = T(0);
            for (size_t s = 0; s < S; ++s) {
                const T f = std::expm1(dd * Ad[s]) / Ad[s];
                hd[s] = std::exp(dd * Ad[s]) * hd[s] + f * Bt[s] * xv;
                acc += Ct[s] * hd[s];
            }
            yt[d] = acc + dskip[d] * xt[d];
        }
        if (h_all) {
            T* dst = h_all + t * D * S;
            for (size_t i = 0; i < D * S; ++i) dst[i] = h_buf[i];
        }
    }
}

template <typename T>
void scan_backward_zoh(size_t T_len, size_t D, size_t S,
                       const T* A, const T* delta, const T* B, const T* C,
                       const T* x, const T* dskip, const T* h_all, const T* gy,
                       T* gx, T* gdelta, T* gB, T* gC, T* gA, T* gdskip) {
    std::vector<T> hhat(D * S, T(0));
    std::vector<T> abar_next(D * S, T(0));
    for (size_t t = T_len; t-- > 0;) {
        const T* Bt = B + t * S;
        const T* Ct = C + t * S;
        const T* xt = x + t * D;
        const T* dt = delta + t * D;
        const T* gyt = gy + t * D;
        const T* ht = h_all + t * D * S;
        const T* hprev = t > 0 ? h_all + (t - 1) * D * S : nullptr;
        T* gBt = gB + t * S;
        T* gCt = gC + t * S;
        const bool has_next = t + 1 < T_len;
        for (size_t d = 0; d < D; ++d) {
            const T g = gyt[d];
            const T dd = dt[d];
            const T xv = xt[d];
            const T* Ad = A + d * S;
            const T* htd = ht + d * S;
            T* hh = hhat.data() + d * S;
            T* ab = abar_next.data() + d * S;
            T gdelta_acc = T(0);
            T gx_acc = T(0);
            for (size_t s = 0; s < S; ++s) {
                const T hh_s = g * Ct[s] + (has_next ? ab[s] * hh[s] : T(0));
                gCt[s] += g * htd[s];
                const T a = Ad[s];
                const T abar = std::exp(dd * a);
                const T f = std::expm1(dd * a) / a;
                const T hp = hprev ? hprev[d * S + s] : T(0);
                const T gabar = hh_s * hp;
                // df/ddelta = abar ; df/dA = (delta*abar - f)/A
                gdelta_acc += gabar * abar * a + hh_s * abar * Bt[s] * xv;
                gA[d * S + s] += gabar * abar * dd + hh_s * ((dd * abar - f) / a) * Bt[s] * xv;
                gBt[s] += hh_s * f * xv;
                gx_acc += hh_s * f * Bt[s];
                hh[s] = hh_s;
                ab[s] = abar;
            }
            gdelta[t * D + d] += gdelta_acc;
            gx[t * D + d] += gx_acc + g * dskip[d];
            gdskip[d] += g * xv;
        }
    }
}

}  // namespace pumba::kern::ref
