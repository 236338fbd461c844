#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pumba/encoder.hpp"
#include "testutil.hpp"

using namespace pumba;

namespace {

VimConfig small_cfg() {
    VimConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 2;
    cfg.channels = 3;
    cfg.embed_dim = 8;
    cfg.layers = 2;
    cfg.expand = 2;
    cfg.conv_kernel = 4;
    cfg.state_size = 4;
    return cfg;
}

template <typename T>
void zero_all(VimBlockParamsT<T>& b) {
    for (auto* t : {&b.norm_gain, &b.norm_bias, &b.W_x, &b.b_x, &b.W_z, &b.b_z,
                    &b.W_out, &b.b_out, &b.fwd.conv_w, &b.bwd.conv_w})
        for (auto& v : t->vec()) v = T(0);
    for (auto* s : {&b.fwd.ssm, &b.bwd.ssm})
        for (auto* t : {&s->A_log, &s->W_B, &s->W_C, &s->W_delta, &s->b_delta, &s->D_skip})
            for (auto& v : t->vec()) v = T(0);
}

}  // namespace

TEST_CASE("patchify: token counts, widths, and the bijection") {
    Rng rng(1);
    // a=32, l=4: P = (a/l)^2 = 64 mini-patches of width N*l*l
    auto img32 = tu::random_tensor<float>(rng, {13, 32, 32});
    auto p32 = patchify(img32, 4);
    CHECK(p32.shape() == Shape{64, 13 * 16});

    // a = l: a single token holding the whole flattened image
    auto img4 = tu::random_tensor<float>(rng, {3, 4, 4});
    auto p44 = patchify(img4, 4);
    CHECK(p44.shape() == Shape{1, 3 * 16});

    // reconstruction is exact
    auto back = unpatchify(p32, 13, 32, 4);
    CHECK(tu::max_abs_diff(back.vec(), img32.vec()) == 0.0);

    CHECK_THROWS_WITH_AS(patchify(img32, 5), doctest::Contains("32"), ConfigError);
    CHECK_THROWS_AS(patchify(img32, 5), ConfigError);
}

TEST_CASE("patchify: patch ordering is row-major") {
    // 1-channel 4x4 image, l=2: patch 1 is the top-right block
    auto img = Tensor::from_data({1, 4, 4}, {0, 1, 2, 3, 4, 5, 6, 7,
                                             8, 9, 10, 11, 12, 13, 14, 15});
    auto p = patchify(img, 2);
    CHECK(p.shape() == Shape{4, 4});
    CHECK(p.at({0, 0}) == 0.0f);
    CHECK(p.at({1, 0}) == 2.0f);   // top-right patch starts at column 2
    CHECK(p.at({2, 0}) == 8.0f);   // bottom-left patch starts at row 2
    CHECK(p.at({3, 3}) == 15.0f);
}

TEST_CASE("patchify gradient flows through the permutation") {
    Rng rng(2);
    auto img = tu::random_tensor<double>(rng, {2, 4, 4});
    img.set_requires_grad(true);
    auto w = tu::random_tensor<double>(rng, {4, 2 * 4});
    CHECK(tu::gradcheck([&] { return sum_all(exp(mul_scalar(patchify(img, 2), 0.3))); },
                        {img}) <= 1e-3);
    (void)w;
}

TEST_CASE("embed_and_insert_cls: center insertion arithmetic") {
    Rng rng(3);
    for (size_t P : {1u, 4u, 16u, 64u}) {
        const size_t Q = 12, M = 8;
        auto patches = tu::random_tensor<float>(rng, {P, Q});
        auto W = tu::random_tensor<float>(rng, {Q, M});
        auto cls = tu::random_tensor<float>(rng, {M});
        auto pos = tu::random_tensor<float>(rng, {P + 1, M});
        auto seq = embed_and_insert_cls(patches, W, cls, pos);
        CHECK(seq.embeddings.shape() == Shape{P + 1, M});
        CHECK(seq.class_index == P / 2);
    }

    // all-zero inputs give the all-zero sequence
    auto z = embed_and_insert_cls(Tensor::zeros({4, 6}), Tensor::zeros({6, 5}),
                                  Tensor::zeros({5}), Tensor::zeros({5, 5}));
    for (float v : z.embeddings.vec()) CHECK(v == 0.0f);
    CHECK(z.class_index == 2);

    // the class token actually lands at the center row (pos = 0 to see it)
    auto patches = Tensor::ones({4, 6});
    auto W = Tensor::zeros({6, 5});
    auto cls = Tensor::from_data({5}, {1, 2, 3, 4, 5});
    auto seq = embed_and_insert_cls(patches, W, cls, Tensor::zeros({5, 5}));
    for (size_t j = 0; j < 5; ++j) CHECK(seq.embeddings.at({2, j}) == float(j + 1));
}

TEST_CASE("vim_block: zeroed parameters give exact residual identity") {
    Rng rng(4);
    auto cfg = small_cfg();
    auto block = init_vim_block<float>(cfg.embed_dim, cfg.expand, cfg.conv_kernel,
                                       cfg.state_size, rng);
    zero_all(block);
    auto tokens = tu::random_tensor<float>(rng, {5, cfg.embed_dim});
    auto out = vim_block(tokens, block);
    CHECK(tu::max_abs_diff(out.vec(), tokens.vec()) == 0.0);
}

TEST_CASE("vim_block: swapping directions is a no-op for a single token") {
    Rng rng(5);
    auto cfg = small_cfg();
    auto a = init_vim_block<float>(cfg.embed_dim, cfg.expand, cfg.conv_kernel,
                                   cfg.state_size, rng);
    auto b = a;  // share the common projections
    b.fwd = a.bwd;
    b.bwd = a.fwd;
    auto tokens = tu::random_tensor<float>(rng, {1, cfg.embed_dim});
    auto ya = vim_block(tokens, a);
    auto yb = vim_block(tokens, b);
    CHECK(tu::max_abs_diff(ya.vec(), yb.vec()) == 0.0);
}

TEST_CASE("vim_block: two stacked blocks equal the hand-unrolled composition") {
    Rng rng(6);
    auto cfg = small_cfg();
    auto b0 = init_vim_block<float>(cfg.embed_dim, cfg.expand, cfg.conv_kernel,
                                    cfg.state_size, rng);
    auto b1 = init_vim_block<float>(cfg.embed_dim, cfg.expand, cfg.conv_kernel,
                                    cfg.state_size, rng);
    auto tokens = tu::random_tensor<float>(rng, {6, cfg.embed_dim});
    auto got = vim_block(vim_block(tokens, b0), b1);

    // unrolled composition of the documented op sequence
    auto unroll = [&](const Tensor& t, const VimBlockParamsT<float>& p) {
        auto n = layer_norm(t, p.norm_gain, p.norm_bias, kLayerNormEps);
        auto xp = add(matmul(n, p.W_x), p.b_x);
        auto zg = add(matmul(n, p.W_z), p.b_z);
        auto yf = selective_scan(silu(conv1d_depthwise(xp, p.fwd.conv_w)), p.fwd.ssm);
        auto yb = reverse_rows(
            selective_scan(silu(conv1d_depthwise(reverse_rows(xp), p.bwd.conv_w)), p.bwd.ssm));
        auto fused = bidirectional_fuse(yf, yb, zg);
        return add(add(matmul(fused, p.W_out), p.b_out), t);
    };
    auto want = unroll(unroll(tokens, b0), b1);
    CHECK(tu::max_rel_error(got.vec(), want.vec()) <= 1e-6);
}

TEST_CASE("encode: deterministic, channel- and patch-sensitive") {
    Rng rng(7);
    auto cfg = small_cfg();
    auto enc = init_image_encoder<float>(cfg, rng);
    auto img = tu::random_tensor<float>(rng, {cfg.channels, cfg.image_size, cfg.image_size});

    auto e1 = encode(img, enc, cfg.patch_size);
    auto e2 = encode(img, enc, cfg.patch_size);
    CHECK(e1.shape() == Shape{cfg.embed_dim});
    CHECK(tu::max_abs_diff(e1.vec(), e2.vec()) == 0.0);

    // permuting feature channels must change the embedding
    auto flat = reshape(img, {cfg.channels, cfg.image_size * cfg.image_size});
    auto permuted = reshape(select_rows(flat, {2, 0, 1}),
                            {cfg.channels, cfg.image_size, cfg.image_size});
    auto ep = encode(permuted, enc, cfg.patch_size);
    CHECK(tu::max_abs_diff(ep.vec(), e1.vec()) > 1e-3);

    // swapping two distinct patches must change the embedding
    auto swapped = img.clone();
    for (size_t c = 0; c < cfg.channels; ++c)
        for (size_t i = 0; i < cfg.patch_size; ++i)
            for (size_t j = 0; j < cfg.patch_size; ++j) {
                auto& p0 = swapped.vec()[c * 64 + i * 8 + j];
                auto& p1 = swapped.vec()[c * 64 + (4 + i) * 8 + (4 + j)];
                std::swap(p0, p1);
            }
    auto es = encode(swapped, enc, cfg.patch_size);
    CHECK(tu::max_abs_diff(es.vec(), e1.vec()) > 1e-6);
}

TEST_CASE("encode: every block parameter receives gradient") {
    Rng rng(8);
    auto cfg = small_cfg();
    auto enc = init_image_encoder<float>(cfg, rng);
    ParamMap params;
    register_image_encoder(enc, "enc", params);
    auto img = tu::random_tensor<float>(rng, {cfg.channels, cfg.image_size, cfg.image_size});
    auto head = tu::random_tensor<float>(rng, {cfg.embed_dim});

    GradTape tape;
    {
        TapeScope<float> scope(tape);
        auto emb = encode(img, enc, cfg.patch_size);
        auto loss = sum_all(mul(emb, head));
        tape.backward(loss);
    }
    for (auto& [name, p] : params) {
        double norm = 0;
        for (float g : p.grad()) norm += std::abs(double(g));
        CAPTURE(name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("encode gradients pass the finite-difference oracle (shadow mode)") {
    Rng rng(9);
    VimConfig cfg = small_cfg();
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.channels = 2;
    cfg.embed_dim = 4;
    cfg.layers = 1;
    cfg.state_size = 3;
    cfg.conv_kernel = 2;
    auto enc = init_image_encoder<double>(cfg, rng);
    ParamMapT<double> params;
    register_image_encoder(enc, "enc", params);
    auto img = tu::random_tensor<double>(rng, {cfg.channels, cfg.image_size, cfg.image_size});
    auto head = tu::random_tensor<double>(rng, {cfg.embed_dim});
    std::vector<TensorT<double>> plist;
    for (auto& [n, p] : params) plist.push_back(p);
    const double err = tu::gradcheck(
        [&] { return sum_all(mul(encode(img, enc, cfg.patch_size), head)); }, plist);
    CHECK(err <= 5e-3);
}
