#include "pumba/kernels.hpp"

#include <cmath>

#include "pumba/detail/ref_kernels.hpp"

// Scalar provider: thin float32 wrappers over the shared reference
// templates plus the trivial elementwise loops.

namespace pumba::kern {
namespace generic {

void add(size_t n, const float* a, const float* b, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(size_t n, const float* a, const float* b, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(size_t n, const float* a, const float* b, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div(size_t n, const float* a, const float* b, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void scale(size_t n, float alpha, const float* x, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

void axpy(size_t n, float alpha, const float* x, float* y) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void madd(size_t n, const float* a, const float* b, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

float dot(size_t n, const float* a, const float* b) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float sum(size_t n, const float* x) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

float max(size_t n, const float* x) {
    float m = x[0];
    for (size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void vexp(size_t n, const float* x, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

void vsigmoid(size_t n, const float* x, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = 1.0f / (1.0f + std::exp(-x[i]));
}

void vsilu(size_t n, const float* x, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void vsoftplus(size_t n, const float* x, float* out) {
    for (size_t i = 0; i < n; ++i) out[i] = ref::softplus_scalar(x[i]);
}

void gemm(size_t m, size_t k, size_t n,
          const float* a, const float* b, float beta, float* c) {
    ref::gemm<float>(m, k, n, a, b, beta, c);
}

void scan_forward(size_t T, size_t D, size_t S,
                  const float* A, const float* delta, const float* B,
                  const float* C, const float* x, const float* dskip,
                  float* h_state, float* y, float* h_all) {
    ref::scan_forward<float>(T, D, S, A, delta, B, C, x, dskip, h_state, y, h_all);
}

void scan_backward(size_t T, size_t D, size_t S,
                   const float* A, const float* delta, const float* B,
                   const float* C, const float* x, const float* dskip,
                   const float* h_all, const float* gy,
                   float* gx, float* gdelta, float* gB, float* gC,
                   float* gA, float* gdskip) {
    ref::scan_backward<float>(T, D, S, A, delta, B, C, x, dskip, h_all, gy,
                              gx, gdelta, gB, gC, gA, gdskip);
}

}  // namespace generic

const Kernels& scalar_table() {
    static const Kernels table = {
        "scalar",
        generic::add,
        generic::sub,
        generic::mul,
        generic::div,
        generic::scale,
        generic::axpy,
        generic::madd,
        generic::dot,
        generic::sum,
        generic::max,
        generic::vexp,
        generic::vsigmoid,
        generic::vsilu,
        generic::vsoftplus,
        generic::gemm,
        generic::scan_forward,
        generic::scan_backward,
    };
    return table;
}

}  // namespace pumba::kern
