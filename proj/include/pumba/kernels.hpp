#pragma once

#include <cstddef>

namespace pumba::kern {

// Flat float32 kernels behind the tensor ops. Two providers: portable scalar
// reference code and an AVX2+FMA variant, selected once at startup from
// cpuid. Every entry must produce the same values as the scalar reference
// within float rounding; tests/test_kernels.cpp enforces the equivalence.
struct Kernels {
    const char* name;

    void (*add)(size_t n, const float* a, const float* b, float* out);
    void (*sub)(size_t n, const float* a, const float* b, float* out);
    void (*mul)(size_t n, const float* a, const float* b, float* out);
    void (*div)(size_t n, const float* a, const float* b, float* out);
    void (*scale)(size_t n, float alpha, const float* x, float* out);  // out  = alpha*x
    void (*axpy)(size_t n, float alpha, const float* x, float* y);     // y   += alpha*x
    void (*madd)(size_t n, const float* a, const float* b, float* out);  // out += a*b

    float (*dot)(size_t n, const float* a, const float* b);
    float (*sum)(size_t n, const float* x);
    float (*max)(size_t n, const float* x);  // n >= 1

    void (*vexp)(size_t n, const float* x, float* out);
    void (*vsigmoid)(size_t n, const float* x, float* out);
    void (*vsilu)(size_t n, const float* x, float* out);
    void (*vsoftplus)(size_t n, const float* x, float* out);

    // c[m x n] = a[m x k] * b[k x n] + beta * c ; beta is 0 or 1
    void (*gemm)(size_t m, size_t k, size_t n,
                 const float* a, const float* b, float beta, float* c);

    // Selective-scan recurrence over precomputed per-step projections.
    //   h[d,s]   = exp(delta[t,d]*A[d,s]) * h[d,s] + delta[t,d]*B[t,s]*x[t,d]
    //   y[t,d]   = sum_s C[t,s]*h[d,s] + dskip[d]*x[t,d]
    // h_state ([D x S]) carries the hidden state in and out, so chunked
    // evaluation can resume where the previous chunk stopped. h_all, when
    // non-null, receives h after every step ([T x D x S]) so the backward
    // sweep can replay states.
    void (*scan_forward)(size_t T, size_t D, size_t S,
                         const float* A, const float* delta, const float* B,
                         const float* C, const float* x, const float* dskip,
                         float* h_state, float* y, float* h_all);

    // Adjoint of scan_forward. h_all must hold the forward states. All g*
    // output buffers are accumulated into (callers zero them as needed).
    void (*scan_backward)(size_t T, size_t D, size_t S,
                          const float* A, const float* delta, const float* B,
                          const float* C, const float* x, const float* dskip,
                          const float* h_all, const float* gy,
                          float* gx, float* gdelta, float* gB, float* gC,
                          float* gA, float* gdskip);
};

// Active table (runtime-dispatched once, overridable for tests).
const Kernels& active();

const Kernels& scalar_table();
// nullptr when the CPU or build lacks AVX2+FMA.
const Kernels* avx2_table();

// Force a specific table (nullptr restores automatic selection). Test hook.
void force_table(const Kernels* table);

}  // namespace pumba::kern
