// AVX2+FMA kernel variants. Compiled with -mavx2 -mfma; only reached when
// cpuid reports support (see kernels.cpp), so no runtime guards here.

#include "pumba/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace pumba::kern {
namespace avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

inline float hmax(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_max_ps(lo, hi);
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_movehdup_ps(lo));
    return _mm_cvtss_f32(lo);
}

// exp via range reduction x = n*ln2 + r and a degree-5 minimax polynomial
// on r; classic Cephes expf coefficients. Matches std::exp(float) to a
// couple of ulp across the clamped range.
inline __m256 v_expf(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647950f);
    const __m256 lo = _mm256_set1_ps(-87.3365478515625f);
    x = _mm256_min_ps(_mm256_max_ps(x, lo), hi);

    const __m256 log2e = _mm256_set1_ps(1.442695040888963f);
    __m256 n = _mm256_round_ps(_mm256_mul_ps(x, log2e),
                               _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    const __m256 ln2_hi = _mm256_set1_ps(0.693359375f);
    const __m256 ln2_lo = _mm256_set1_ps(-2.12194440e-4f);
    __m256 r = _mm256_fnmadd_ps(n, ln2_hi, x);
    r = _mm256_fnmadd_ps(n, ln2_lo, r);

    __m256 p = _mm256_set1_ps(1.9875691500e-4f);
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
    p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
    const __m256 r2 = _mm256_mul_ps(r, r);
    __m256 y = _mm256_fmadd_ps(p, r2, r);
    y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));

    // scale by 2^n through the exponent bits
    __m256i e = _mm256_cvtps_epi32(n);
    e = _mm256_slli_epi32(_mm256_add_epi32(e, _mm256_set1_epi32(127)), 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

inline __m256 v_sigmoid(__m256 x) {
    const __m256 one = _mm256_set1_ps(1.0f);
    const __m256 e = v_expf(_mm256_sub_ps(_mm256_setzero_ps(), x));
    return _mm256_div_ps(one, _mm256_add_ps(one, e));
}

}  // namespace

void add(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void div(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_div_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}

void scale(size_t n, float alpha, const float* x, float* out) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}

void axpy(size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void madd(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i),
                                                  _mm256_loadu_ps(out + i)));
    for (; i < n; ++i) out[i] += a[i] * b[i];
}

float dot(size_t n, const float* a, const float* b) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    float r = hsum(acc);
    for (; i < n; ++i) r += a[i] * b[i];
    return r;
}

float sum(size_t n, const float* x) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

float max(size_t n, const float* x) {
    if (n < 8) {
        float m = x[0];
        for (size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
        return m;
    }
    __m256 acc = _mm256_loadu_ps(x);
    size_t i = 8;
    for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
    float m = hmax(acc);
    for (; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void vexp(size_t n, const float* x, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, v_expf(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = std::exp(x[i]);
}

void vsigmoid(size_t n, const float* x, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, v_sigmoid(_mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-x[i]));
}

void vsilu(size_t n, const float* x, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        _mm256_storeu_ps(out + i, _mm256_mul_ps(v, v_sigmoid(v)));
    }
    for (; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void vsoftplus(size_t n, const float* x, float* out) {
    // log1p has no vector form here; keep the stabilized scalar expression
    for (size_t i = 0; i < n; ++i) {
        const float v = x[i];
        out[i] = v > 0.0f ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
}

void gemm(size_t m, size_t k, size_t n,
          const float* a, const float* b, float beta, float* c) {
    for (size_t i = 0; i < m; ++i) {
        float* crow = c + i * n;
        if (beta == 0.0f) {
            size_t j = 0;
            const __m256 z = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, z);
            for (; j < n; ++j) crow[j] = 0.0f;
        }
        const float* arow = a + i * k;
        size_t p = 0;
        // two rows of B per pass keeps the FMA pipes busier
        for (; p + 2 <= k; p += 2) {
            const __m256 a0 = _mm256_set1_ps(arow[p]);
            const __m256 a1 = _mm256_set1_ps(arow[p + 1]);
            const float* b0 = b + p * n;
            const float* b1 = b0 + n;
            size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 acc = _mm256_loadu_ps(crow + j);
                acc = _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j), acc);
                acc = _mm256_fmadd_ps(a1, _mm256_loadu_ps(b1 + j), acc);
                _mm256_storeu_ps(crow + j, acc);
            }
            for (; j < n; ++j) crow[j] += arow[p] * b0[j] + arow[p + 1] * b1[j];
        }
        for (; p < k; ++p) {
            const __m256 a0 = _mm256_set1_ps(arow[p]);
            const float* b0 = b + p * n;
            size_t j = 0;
            for (; j + 8 <= n; j += 8)
                _mm256_storeu_ps(crow + j,
                                 _mm256_fmadd_ps(a0, _mm256_loadu_ps(b0 + j), _mm256_loadu_ps(crow + j)));
            for (; j < n; ++j) crow[j] += arow[p] * b0[j];
        }
    }
}

void scan_forward(size_t T, size_t D, size_t S,
                  const float* A, const float* delta, const float* B,
                  const float* C, const float* x, const float* dskip,
                  float* h_state, float* y, float* h_all) {
    std::vector<float> h_local;
    float* h_buf = h_state;
    if (!h_buf) {
        h_local.assign(D * S, 0.0f);
        h_buf = h_local.data();
    }
    const size_t sv = S & ~size_t(7);
    for (size_t t = 0; t < T; ++t) {
        const float* Bt = B + t * S;
        const float* Ct = C + t * S;
        const float* xt = x + t * D;
        const float* dt = delta + t * D;
        float* yt = y + t * D;
        for (size_t d = 0; d < D; ++d) {
            const float dd = dt[d];
            const float dx = dd * xt[d];
            const float* Ad = A + d * S;
            float* hd = h_buf + d * S;
            const __m256 vdd = _mm256_set1_ps(dd);
            const __m256 vdx = _mm256_set1_ps(dx);
            __m256 vacc = _mm256_setzero_ps();
            size_t s = 0;
            for (; s < sv; s += 8) {
                const __m256 abar = v_expf(_mm256_mul_ps(vdd, _mm256_loadu_ps(Ad + s)));
                __m256 hv = _mm256_mul_ps(abar, _mm256_loadu_ps(hd + s));
                hv = _mm256_fmadd_ps(vdx, _mm256_loadu_ps(Bt + s), hv);
                _mm256_storeu_ps(hd + s, hv);
                vacc = _mm256_fmadd_ps(_mm256_loadu_ps(Ct + s), hv, vacc);
            }
            float acc = hsum(vacc);
            for (; s < S; ++s) {
                hd[s] = std::exp(dd * Ad[s]) * hd[s] + dx * Bt[s];
                acc += Ct[s] * hd[s];
            }
            yt[d] = acc + dskip[d] * xt[d];
        }
        if (h_all) {
            float* dst = h_all + t * D * S;
            size_t i = 0;
            for (; i + 8 <= D * S; i += 8) _mm256_storeu_ps(dst + i, _mm256_loadu_ps(h_buf + i));
            for (; i < D * S; ++i) dst[i] = h_buf[i];
        }
    }
}

void scan_backward(size_t T, size_t D, size_t S,
                   const float* A, const float* delta, const float* B,
                   const float* C, const float* x, const float* dskip,
                   const float* h_all, const float* gy,
                   float* gx, float* gdelta, float* gB, float* gC,
                   float* gA, float* gdskip) {
    std::vector<float> hhat(D * S, 0.0f);
    std::vector<float> abar_next(D * S, 0.0f);
    const size_t sv = S & ~size_t(7);
    for (size_t t = T; t-- > 0;) {
        const float* Bt = B + t * S;
        const float* Ct = C + t * S;
        const float* xt = x + t * D;
        const float* dt = delta + t * D;
        const float* gyt = gy + t * D;
        const float* ht = h_all + t * D * S;
        const float* hprev = t > 0 ? h_all + (t - 1) * D * S : nullptr;
        float* gBt = gB + t * S;
        float* gCt = gC + t * S;
        const bool has_next = t + 1 < T;
        for (size_t d = 0; d < D; ++d) {
            const float g = gyt[d];
            const float dd = dt[d];
            const float xv = xt[d];
            const float* Ad = A + d * S;
            const float* htd = ht + d * S;
            const float* hpd = hprev ? hprev + d * S : nullptr;
            float* hh = hhat.data() + d * S;
            float* ab = abar_next.data() + d * S;
            float* gAd = gA + d * S;
            const __m256 vg = _mm256_set1_ps(g);
            const __m256 vdd = _mm256_set1_ps(dd);
            const __m256 vxv = _mm256_set1_ps(xv);
            const __m256 vddxv = _mm256_set1_ps(dd * xv);
            __m256 vgdelta = _mm256_setzero_ps();
            __m256 vgx = _mm256_setzero_ps();
            size_t s = 0;
            for (; s < sv; s += 8) {
                const __m256 ct = _mm256_loadu_ps(Ct + s);
                const __m256 bt = _mm256_loadu_ps(Bt + s);
                __m256 hh_s = _mm256_mul_ps(vg, ct);
                if (has_next)
                    hh_s = _mm256_fmadd_ps(_mm256_loadu_ps(ab + s), _mm256_loadu_ps(hh + s), hh_s);
                _mm256_storeu_ps(gCt + s,
                                 _mm256_fmadd_ps(vg, _mm256_loadu_ps(htd + s), _mm256_loadu_ps(gCt + s)));
                const __m256 av = _mm256_loadu_ps(Ad + s);
                const __m256 abar = v_expf(_mm256_mul_ps(vdd, av));
                const __m256 hp = hpd ? _mm256_loadu_ps(hpd + s) : _mm256_setzero_ps();
                const __m256 gabar = _mm256_mul_ps(hh_s, hp);
                const __m256 gab = _mm256_mul_ps(gabar, abar);
                vgdelta = _mm256_fmadd_ps(gab, av, vgdelta);
                vgdelta = _mm256_fmadd_ps(hh_s, _mm256_mul_ps(bt, vxv), vgdelta);
                _mm256_storeu_ps(gAd + s, _mm256_fmadd_ps(gab, vdd, _mm256_loadu_ps(gAd + s)));
                _mm256_storeu_ps(gBt + s, _mm256_fmadd_ps(hh_s, vddxv, _mm256_loadu_ps(gBt + s)));
                vgx = _mm256_fmadd_ps(hh_s, _mm256_mul_ps(vdd, bt), vgx);
                _mm256_storeu_ps(hh + s, hh_s);
                _mm256_storeu_ps(ab + s, abar);
            }
            float gdelta_acc = hsum(vgdelta);
            float gx_acc = hsum(vgx);
            for (; s < S; ++s) {
                const float hh_s = g * Ct[s] + (has_next ? ab[s] * hh[s] : 0.0f);
                gCt[s] += g * htd[s];
                const float abar = std::exp(dd * Ad[s]);
                const float hp = hpd ? hpd[s] : 0.0f;
                const float gabar = hh_s * hp;
                gdelta_acc += gabar * abar * Ad[s] + hh_s * Bt[s] * xv;
                gAd[s] += gabar * abar * dd;
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

}  // namespace avx2

const Kernels* avx2_table() {
    static const Kernels table = {
        "avx2",
        avx2::add,
        avx2::sub,
        avx2::mul,
        avx2::div,
        avx2::scale,
        avx2::axpy,
        avx2::madd,
        avx2::dot,
        avx2::sum,
        avx2::max,
        avx2::vexp,
        avx2::vsigmoid,
        avx2::vsilu,
        avx2::vsoftplus,
        avx2::gemm,
        avx2::scan_forward,
        avx2::scan_backward,
    };
    return &table;
}

}  // namespace pumba::kern

#else

namespace pumba::kern {
const Kernels* avx2_table() { return nullptr; }
}  // namespace pumba::kern

#endif
