#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "pumba/ssm.hpp"
#include "testutil.hpp"

using namespace pumba;

namespace {

// Independent oracle: the recurrence written straight from its definition,
// step by step, entirely in double. No shared code with the library scan.
std::vector<double> naive_scan(const std::vector<double>& x, size_t T, size_t D, size_t S,
                               const std::vector<double>& A_log,
                               const std::vector<double>& W_B,
                               const std::vector<double>& W_C,
                               const std::vector<double>& W_delta,
                               const std::vector<double>& b_delta,
                               const std::vector<double>& D_skip) {
    std::vector<double> y(T * D, 0.0), h(D * S, 0.0);
    for (size_t t = 0; t < T; ++t) {
        std::vector<double> Bt(S, 0.0), Ct(S, 0.0), dt(D, 0.0);
        for (size_t s = 0; s < S; ++s)
            for (size_t d = 0; d < D; ++d) {
                Bt[s] += x[t * D + d] * W_B[d * S + s];
                Ct[s] += x[t * D + d] * W_C[d * S + s];
            }
        for (size_t d = 0; d < D; ++d) {
            double u = b_delta[d];
            for (size_t e = 0; e < D; ++e) u += x[t * D + e] * W_delta[e * D + d];
            dt[d] = u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
        }
        for (size_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (size_t s = 0; s < S; ++s) {
                const double a = -std::exp(A_log[d * S + s]);
                const double abar = std::exp(dt[d] * a);
                const double bbar = dt[d] * Bt[s];
                h[d * S + s] = abar * h[d * S + s] + bbar * x[t * D + d];
                acc += Ct[s] * h[d * S + s];
            }
            y[t * D + d] = acc + D_skip[d] * x[t * D + d];
        }
    }
    return y;
}

template <typename T>
SsmParamsT<T> random_params(Rng& rng, size_t D, size_t S) {
    auto p = init_ssm_params<T>(D, S, rng);
    // randomize beyond the structured init so tests see generic values
    for (auto& v : p.D_skip.vec()) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    return p;
}

template <typename U, typename T>
std::vector<U> to(const std::vector<T>& v) {
    return std::vector<U>(v.begin(), v.end());
}

}  // namespace

TEST_CASE("discretize: limit, analytic exponential, and high-precision oracle") {
    const size_t D = 3, S = 4;
    Rng rng(5);
    auto A = tu::random_tensor<float>(rng, {D, S}, -3.0, -0.2);
    auto B = tu::random_tensor<float>(rng, {S});

    // delta -> 0+: A_bar -> 1, B_bar -> 0
    auto tiny = Tensor::full({D}, 1e-12f);
    auto [Ab0, Bb0] = discretize(A, B, tiny);
    for (float v : Ab0.vec()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    for (float v : Bb0.vec()) CHECK(std::abs(v) < 1e-10);

    // A = -1, delta = ln 2 gives A_bar = 0.5
    auto Am1 = Tensor::full({1, 1}, -1.0f);
    auto [Ab1, Bb1] = discretize(Am1, Tensor::ones({1}), Tensor::full({1}, float(std::log(2.0))));
    CHECK(Ab1.at({0, 0}) == doctest::Approx(0.5).epsilon(1e-6));

    // random triple vs 64-bit reference exponential
    auto delta = tu::random_tensor<float>(rng, {D}, 0.01, 2.0);
    auto [Ab, Bb] = discretize(A, B, delta);
    for (size_t d = 0; d < D; ++d)
        for (size_t s = 0; s < S; ++s) {
            const double ref = std::exp(double(delta.at({d})) * double(A.at({d, s})));
            CHECK(std::abs(Ab.at({d, s}) - ref) <= 1e-6 * std::max(ref, 1e-12));
            const double refb = double(delta.at({d})) * double(B.at({s}));
            CHECK(std::abs(Bb.at({d, s}) - refb) <= 1e-6 * std::max(std::abs(refb), 1e-12));
        }

    // exact ZOH ablation agrees with the integral formula
    auto [Abz, Bbz] = discretize(A, B, delta, true);
    for (size_t d = 0; d < D; ++d)
        for (size_t s = 0; s < S; ++s) {
            const double a = A.at({d, s});
            const double refb = std::expm1(double(delta.at({d})) * a) / a * double(B.at({s}));
            CHECK(std::abs(Bbz.at({d, s}) - refb) <= 1e-6 * std::max(std::abs(refb), 1e-12));
        }

    CHECK_THROWS_AS(discretize(A, B, Tensor::zeros({D})), ContractError);
    CHECK_THROWS_AS(discretize(Tensor::ones({D, S}), B, delta), ContractError);
}

TEST_CASE("selective_scan: delta forced to zero leaves only the skip path") {
    Rng rng(7);
    const size_t T = 6, D = 3, S = 4;
    auto p = random_params<float>(rng, D, S);
    for (auto& v : p.b_delta.vec()) v = -80.0f;  // softplus(-80) ~ 1.8e-35
    for (auto& v : p.W_delta.vec()) v = 0.0f;
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto y = selective_scan(x, p);
    for (size_t t = 0; t < T; ++t)
        for (size_t d = 0; d < D; ++d)
            CHECK(y.at({t, d}) == p.D_skip.at({d}) * x.at({t, d}));
}

TEST_CASE("selective_scan: T=1 matches the hand-computed single step") {
    Rng rng(8);
    const size_t D = 3, S = 5;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {1, D});
    auto y = selective_scan(x, p);
    for (size_t d = 0; d < D; ++d) {
        double B1 = 0, C1 = 0, u = double(p.b_delta.at({d}));
        std::vector<double> Bs(S, 0), Cs(S, 0);
        for (size_t s = 0; s < S; ++s)
            for (size_t e = 0; e < D; ++e) {
                Bs[s] += double(x.at({0, e})) * p.W_B.at({e, s});
                Cs[s] += double(x.at({0, e})) * p.W_C.at({e, s});
            }
        for (size_t e = 0; e < D; ++e) u += double(x.at({0, e})) * p.W_delta.at({e, d});
        const double dl = u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
        double acc = 0;
        for (size_t s = 0; s < S; ++s) acc += Cs[s] * dl * Bs[s] * double(x.at({0, d}));
        acc += double(p.D_skip.at({d})) * double(x.at({0, d}));
        CHECK(std::abs(y.at({0, d}) - acc) <= 1e-5 * std::max(1.0, std::abs(acc)));
        (void)B1;
        (void)C1;
    }
}

TEST_CASE("selective_scan: empty sequence rejected") {
    Rng rng(9);
    auto p = random_params<float>(rng, 2, 3);
    CHECK_THROWS_AS(selective_scan(Tensor::zeros({0, 2}), p), ContractError);
}

TEST_CASE("selective_scan vs naive 64-bit recurrence oracle, fixed seed") {
    Rng rng(1234);
    const size_t T = 16, D = 4, S = 8;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto y = selective_scan(x, p);
    auto ref = naive_scan(to<double>(x.vec()), T, D, S, to<double>(p.A_log.vec()),
                          to<double>(p.W_B.vec()), to<double>(p.W_C.vec()),
                          to<double>(p.W_delta.vec()), to<double>(p.b_delta.vec()),
                          to<double>(p.D_skip.vec()));
    CHECK(tu::max_rel_error(y.vec(), ref) <= 1e-5);
}

TEST_CASE("scan == naive recurrence across a random (T, D, S) sweep") {
    for (int seed = 0; seed < 15; ++seed) {
        Rng rng(5000 + seed);
        const size_t T = 1 + rng.uniform_index(64);
        const size_t D = 1 + rng.uniform_index(8);
        const size_t S = 1 + rng.uniform_index(16);
        auto p = random_params<float>(rng, D, S);
        auto x = tu::random_tensor<float>(rng, {T, D});
        auto y = selective_scan(x, p);
        auto ref = naive_scan(to<double>(x.vec()), T, D, S, to<double>(p.A_log.vec()),
                              to<double>(p.W_B.vec()), to<double>(p.W_C.vec()),
                              to<double>(p.W_delta.vec()), to<double>(p.b_delta.vec()),
                              to<double>(p.D_skip.vec()));
        CHECK(tu::max_rel_error(y.vec(), ref) <= 1e-5);
    }
}

TEST_CASE("selective_scan_blocked: block=T bitwise, block=1 and odd blocks match") {
    Rng rng(11);
    const size_t T = 33, D = 4, S = 8;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto y = selective_scan(x, p);

    auto yT = selective_scan_blocked(x, p, T);
    CHECK(tu::max_abs_diff(y.vec(), yT.vec()) == 0.0);  // same kernel calls

    auto y1 = selective_scan_blocked(x, p, 1);
    CHECK(tu::max_rel_error(y1.vec(), y.vec()) <= 1e-6);
    auto ref = naive_scan(to<double>(x.vec()), T, D, S, to<double>(p.A_log.vec()),
                          to<double>(p.W_B.vec()), to<double>(p.W_C.vec()),
                          to<double>(p.W_delta.vec()), to<double>(p.b_delta.vec()),
                          to<double>(p.D_skip.vec()));
    CHECK(tu::max_rel_error(y1.vec(), ref) <= 1e-5);

    auto y8 = selective_scan_blocked(x, p, 8);
    CHECK(tu::max_rel_error(y8.vec(), y.vec()) <= 1e-6);

    CHECK_THROWS_AS(selective_scan_blocked(x, p, 0), ContractError);
}

TEST_CASE("causality: perturbing token j leaves earlier outputs untouched") {
    Rng rng(13);
    const size_t T = 12, D = 3, S = 6;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto y0 = selective_scan(x, p);
    const size_t j = 5;
    auto x2 = x.clone();
    for (size_t d = 0; d < D; ++d) x2.data()[j * D + d] += 0.75f;
    auto y1 = selective_scan(x2, p);
    for (size_t t = 0; t < j; ++t)
        for (size_t d = 0; d < D; ++d)
            CHECK(std::abs(y1.at({t, d}) - y0.at({t, d})) <= 1e-6);
    // and the perturbation does reach position j onward
    double late = 0;
    for (size_t t = j; t < T; ++t)
        for (size_t d = 0; d < D; ++d)
            late = std::max(late, std::abs(double(y1.at({t, d})) - y0.at({t, d})));
    CHECK(late > 1e-4);
}

TEST_CASE("stability: T=4096 stays below the geometric-series bound") {
    Rng rng(17);
    const size_t T = 4096, D = 2, S = 4;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto y = selective_scan(x, p);
    for (float v : y.vec()) CHECK(std::isfinite(v));

    // recompute projection maxima and the implied bound on |y|
    const size_t Tn = T;
    std::vector<float> delta(Tn * D), Bm(Tn * S, 0.f), Cm(Tn * S, 0.f);
    detail::k_gemm<float>(Tn, D, D, x.data(), p.W_delta.data(), 0.f, delta.data());
    for (size_t t = 0; t < Tn; ++t)
        for (size_t d = 0; d < D; ++d) delta[t * D + d] += p.b_delta.at({d});
    detail::k_vsoftplus<float>(Tn * D, delta.data(), delta.data());
    detail::k_gemm<float>(Tn, D, S, x.data(), p.W_B.data(), 0.f, Bm.data());
    detail::k_gemm<float>(Tn, D, S, x.data(), p.W_C.data(), 0.f, Cm.data());
    double max_abar = 0, max_bx = 0, max_c = 0, max_skip = 0;
    for (size_t t = 0; t < Tn; ++t)
        for (size_t d = 0; d < D; ++d) {
            const double dl = delta[t * D + d];
            for (size_t s = 0; s < S; ++s) {
                max_abar = std::max(max_abar, std::exp(dl * -std::exp(double(p.A_log.at({d, s})))));
                max_bx = std::max(max_bx, std::abs(dl * Bm[t * S + s] * x.at({t, d})));
            }
        }
    for (float v : Cm) max_c = std::max(max_c, std::abs(double(v)));
    for (size_t t = 0; t < Tn; ++t)
        for (size_t d = 0; d < D; ++d)
            max_skip = std::max(max_skip, std::abs(double(p.D_skip.at({d})) * x.at({t, d})));
    REQUIRE(max_abar < 1.0);
    const double bound = max_c * S * max_bx / (1.0 - max_abar) + max_skip;
    for (float v : y.vec()) CHECK(std::abs(v) <= bound * (1.0 + 1e-4));
}

TEST_CASE("scan gradients match finite differences (euler and zoh)") {
    for (bool zoh : {false, true}) {
        Rng rng(zoh ? 21 : 19);
        const size_t T = 5, D = 3, S = 4;
        auto p = init_ssm_params<double>(D, S, rng);
        auto x = tu::random_tensor<double>(rng, {T, D});
        x.set_requires_grad(true);
        auto w = tu::random_tensor<double>(rng, {T, D});
        const double err = tu::gradcheck(
            [&] { return sum_all(mul(selective_scan(x, p, zoh), w)); },
            {x, p.A_log, p.W_B, p.W_C, p.W_delta, p.b_delta, p.D_skip});
        CAPTURE(zoh);
        CHECK(err <= 1e-3);
    }
}

TEST_CASE("hidden attention: triangular structure and T=1 value") {
    Rng rng(23);
    const size_t T = 9, D = 3, S = 5;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto alpha = materialize_hidden_attention(x, p);
    REQUIRE(alpha.shape() == Shape{D, T, T});
    for (size_t d = 0; d < D; ++d)
        for (size_t i = 0; i < T; ++i)
            for (size_t j = i + 1; j < T; ++j) CHECK(alpha.at({d, i, j}) == 0.0f);

    // T=1: alpha[d,0,0] = <C_1, B_bar_1[d]>
    auto x1 = tu::random_tensor<float>(rng, {1, D});
    auto a1 = materialize_hidden_attention(x1, p);
    for (size_t d = 0; d < D; ++d) {
        std::vector<double> Bs(S, 0), Cs(S, 0);
        double u = p.b_delta.at({d});
        for (size_t s = 0; s < S; ++s)
            for (size_t e = 0; e < D; ++e) {
                Bs[s] += double(x1.at({0, e})) * p.W_B.at({e, s});
                Cs[s] += double(x1.at({0, e})) * p.W_C.at({e, s});
            }
        for (size_t e = 0; e < D; ++e) u += double(x1.at({0, e})) * p.W_delta.at({e, d});
        const double dl = u > 0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
        double want = 0;
        for (size_t s = 0; s < S; ++s) want += Cs[s] * dl * Bs[s];
        CHECK(std::abs(a1.at({d, 0, 0}) - want) <= 1e-5 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("hidden attention reconstructs the scan: alpha*x + skip == y") {
    for (int seed = 0; seed < 10; ++seed) {
        Rng rng(3000 + seed);
        const size_t T = 2 + rng.uniform_index(30);
        const size_t D = 1 + rng.uniform_index(6);
        const size_t S = 1 + rng.uniform_index(12);
        auto p = random_params<float>(rng, D, S);
        auto x = tu::random_tensor<float>(rng, {T, D});
        auto y = selective_scan(x, p);
        auto alpha = materialize_hidden_attention(x, p);
        for (size_t d = 0; d < D; ++d)
            for (size_t i = 0; i < T; ++i) {
                double acc = double(p.D_skip.at({d})) * x.at({i, d});
                for (size_t j = 0; j <= i; ++j)
                    acc += double(alpha.at({d, i, j})) * x.at({j, d});
                CHECK(std::abs(acc - y.at({i, d})) <= 1e-4);
            }
    }
}

TEST_CASE("bidirectional_fuse: gates, saturation, and reversal symmetry") {
    Rng rng(31);
    const size_t T = 7, D = 4;
    auto yf = tu::random_tensor<float>(rng, {T, D});
    auto yb = tu::random_tensor<float>(rng, {T, D});

    auto zero_gate = bidirectional_fuse(yf, yb, Tensor::zeros({T, D}));
    for (float v : zero_gate.vec()) CHECK(v == 0.0f);  // SiLU(0) = 0

    // gate saturation: sigma(z) -> 1 for large z, so SiLU(z) -> z and the
    // fused output approaches z * y_fwd
    auto sat = bidirectional_fuse(yf, Tensor::zeros({T, D}), Tensor::full({T, D}, 40.0f));
    auto scaled = mul_scalar(yf, 40.0f);
    CHECK(tu::max_rel_error(sat.vec(), scaled.vec()) <= 1e-6);

    CHECK_THROWS_AS(bidirectional_fuse(yf, Tensor::zeros({T, D + 1}), yb), ShapeError);

    // backward pipeline on reversed input == re-reversed forward output
    const size_t S = 6;
    auto p = random_params<float>(rng, D, S);
    auto x = tu::random_tensor<float>(rng, {T, D});
    auto fwd = selective_scan(x, p);
    auto bwd_on_reversed = reverse_rows(selective_scan(reverse_rows(x), p));
    auto rere = bwd_on_reversed;  // already reversed back; compare against fwd re-reversed
    auto fwd_rev = reverse_rows(fwd);
    // bwd(reverse(x)) = reverse(scan(x)); compare elementwise
    auto lhs = selective_scan(reverse_rows(x), p);
    CHECK(tu::max_rel_error(lhs.vec(), fwd_rev.vec()) > 0.0);  // different sequences in general
    auto bwd_path = reverse_rows(selective_scan(reverse_rows(reverse_rows(x)), p));
    (void)rere;
    (void)bwd_path;
    // the load-bearing identity: reverse(scan(reverse(z))) with z = reverse(x)
    auto z = reverse_rows(x);
    auto bwd_of_z = reverse_rows(selective_scan(reverse_rows(z), p));
    auto want = reverse_rows(fwd);
    CHECK(tu::max_rel_error(bwd_of_z.vec(), want.vec()) <= 1e-6);
}

TEST_CASE("reverse_attention_order maps causal to anticausal") {
    Rng rng(37);
    const size_t T = 5, D = 2, S = 4;
    auto p = random_params<float>(rng, D, S);
    auto xrev = tu::random_tensor<float>(rng, {T, D});
    auto a = materialize_hidden_attention(xrev, p);
    auto flipped = reverse_attention_order(a);
    for (size_t d = 0; d < D; ++d)
        for (size_t i = 0; i < T; ++i)
            for (size_t j = 0; j < i; ++j) CHECK(flipped.at({d, i, j}) == 0.0f);
}
