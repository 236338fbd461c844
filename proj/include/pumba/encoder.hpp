#pragma once

// Image-to-embedding encoder: patchify into tokens, insert the class token
// at the center of the sequence, run bidirectional ViM blocks, read out the
// class-token embedding.

#include <string>
#include <vector>

#include "pumba/ssm.hpp"

namespace pumba {

struct VimConfig {
    size_t image_size = 32;  // a, pixels per side
    size_t patch_size = 4;   // l
    size_t channels = 13;    // N
    size_t embed_dim = 64;   // M
    size_t layers = 4;       // L
    size_t expand = 2;       // E
    size_t conv_kernel = 4;
    size_t state_size = 16;  // S
    bool exact_zoh = false;

    size_t grid() const { return image_size / patch_size; }
    size_t tokens() const { return grid() * grid(); }
    size_t inner_dim() const { return expand * embed_dim; }
    size_t patch_dim() const { return channels * patch_size * patch_size; }
};

struct PatchGrid {
    size_t image_size = 0;
    size_t patch_size = 0;
    size_t channels = 0;

    PatchGrid(size_t a, size_t l, size_t n) : image_size(a), patch_size(l), channels(n) {
        if (l == 0 || a % l != 0)
            throw ConfigError("patch grid: image size " + std::to_string(a) +
                              " is not divisible by patch size " + std::to_string(l));
    }
    size_t grid() const { return image_size / patch_size; }
    size_t tokens() const { return grid() * grid(); }
};

constexpr float kLayerNormEps = 1e-5f;

// Row-major patch extraction: patch p covers rows [pr*l, pr*l+l) and columns
// [pc*l, pc*l+l) with pr = p / (a/l), pc = p % (a/l); each output row is the
// flattened [N x l x l] patch. Bijective, exactly inverted by unpatchify.
template <typename T>
TensorT<T> patchify(const TensorT<T>& image, size_t l) {
    if (image.rank() != 3 || image.extent(1) != image.extent(2))
        throw ShapeError("patchify: expects [N x a x a], got " + shape_str(image.shape()));
    const size_t N = image.extent(0), a = image.extent(1);
    PatchGrid grid(a, l, N);
    const size_t g = grid.grid(), P = grid.tokens(), Q = N * l * l;
    auto map = std::make_shared<std::vector<size_t>>(P * Q);
    for (size_t p = 0; p < P; ++p) {
        const size_t pr = p / g, pc = p % g;
        for (size_t c = 0; c < N; ++c)
            for (size_t di = 0; di < l; ++di)
                for (size_t dj = 0; dj < l; ++dj)
                    (*map)[p * Q + c * l * l + di * l + dj] =
                        c * a * a + (pr * l + di) * a + (pc * l + dj);
    }
    TensorT<T> out(Shape{P, Q});
    for (size_t i = 0; i < P * Q; ++i) out.data()[i] = image.data()[(*map)[i]];
    if (detail::recording<T>({&image})) {
        out.set_requires_grad(true);
        auto xi = image.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, map] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < map->size(); ++i)
                xi->grad[(*map)[i]] += oi->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorT<T> unpatchify(const TensorT<T>& patches, size_t N, size_t a, size_t l) {
    PatchGrid grid(a, l, N);
    const size_t g = grid.grid(), P = grid.tokens(), Q = N * l * l;
    if (patches.shape() != Shape{P, Q})
        throw ShapeError("unpatchify: expected " + shape_str({P, Q}) + ", got " +
                         shape_str(patches.shape()));
    auto map = std::make_shared<std::vector<size_t>>(P * Q);
    for (size_t p = 0; p < P; ++p) {
        const size_t pr = p / g, pc = p % g;
        for (size_t c = 0; c < N; ++c)
            for (size_t di = 0; di < l; ++di)
                for (size_t dj = 0; dj < l; ++dj)
                    (*map)[p * Q + c * l * l + di * l + dj] =
                        c * a * a + (pr * l + di) * a + (pc * l + dj);
    }
    TensorT<T> out(Shape{N, a, a});
    for (size_t i = 0; i < P * Q; ++i) out.data()[(*map)[i]] = patches.data()[i];
    if (detail::recording<T>({&patches})) {
        out.set_requires_grad(true);
        auto xi = patches.impl();
        auto oi = out.impl();
        detail::record_node<T>(oi, [xi, oi, map] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (size_t i = 0; i < map->size(); ++i)
                xi->grad[i] += oi->grad[(*map)[i]];
        });
    }
    return out;
}

template <typename T>
struct TokenSequenceT {
    TensorT<T> embeddings;  // [(P+1) x M]
    size_t class_index = 0;
};

// Linear projection to M dims, class token spliced in at floor(P/2),
// learned position embeddings added after insertion.
template <typename T>
TokenSequenceT<T> embed_and_insert_cls(const TensorT<T>& patches, const TensorT<T>& W_embed,
                                       const TensorT<T>& cls_token, const TensorT<T>& pos_embed) {
    auto proj = matmul(patches, W_embed);  // [P x M]
    const size_t P = proj.extent(0), M = proj.extent(1);
    if (pos_embed.shape() != Shape{P + 1, M})
        throw ShapeError("embed_and_insert_cls: pos " + shape_str(pos_embed.shape()) +
                         " vs expected " + shape_str({P + 1, M}));
    const size_t c = P / 2;
    auto cls_row = reshape(cls_token, {1, M});
    auto seq = concat<T>({row_range(proj, 0, c), cls_row, row_range(proj, c, P)}, 0);
    return {add(seq, pos_embed), c};
}

template <typename T>
struct DirectionParamsT {
    TensorT<T> conv_w;  // [K x D], depthwise along tokens
    SsmParamsT<T> ssm;
};

template <typename T>
struct VimBlockParamsT {
    TensorT<T> norm_gain, norm_bias;  // [M]
    TensorT<T> W_x, b_x;              // [M x EM], [EM]
    TensorT<T> W_z, b_z;              // [M x EM], [EM]
    TensorT<T> W_out, b_out;          // [EM x M], [M]
    DirectionParamsT<T> fwd, bwd;
};

// One bidirectional ViM block. att_fwd/att_bwd, when non-null, receive the
// hidden-attention matrices of the two scans in original token order.
template <typename T>
TensorT<T> vim_block(const TensorT<T>& tokens, const VimBlockParamsT<T>& p,
                     bool zoh = false, TensorT<T>* att_fwd = nullptr,
                     TensorT<T>* att_bwd = nullptr) {
    auto normed = layer_norm(tokens, p.norm_gain, p.norm_bias, T(kLayerNormEps));
    auto x_path = add(matmul(normed, p.W_x), p.b_x);  // [T x EM]
    auto z_gate = add(matmul(normed, p.W_z), p.b_z);

    auto x_f = silu(conv1d_depthwise(x_path, p.fwd.conv_w));
    auto y_f = selective_scan(x_f, p.fwd.ssm, zoh);
    if (att_fwd) *att_fwd = materialize_hidden_attention(x_f, p.fwd.ssm, zoh);

    auto x_b = silu(conv1d_depthwise(reverse_rows(x_path), p.bwd.conv_w));
    auto y_b_rev = selective_scan(x_b, p.bwd.ssm, zoh);
    if (att_bwd) *att_bwd = reverse_attention_order(materialize_hidden_attention(x_b, p.bwd.ssm, zoh));
    auto y_b = reverse_rows(y_b_rev);

    auto fused = bidirectional_fuse(y_f, y_b, z_gate);
    auto out = add(matmul(fused, p.W_out), p.b_out);
    return add(out, tokens);
}

template <typename T>
struct TokenEncoderParamsT {
    TensorT<T> cls;  // [M]
    TensorT<T> pos;  // [(P+1) x M]
    std::vector<VimBlockParamsT<T>> blocks;
    TensorT<T> final_gain, final_bias;  // [M]
};

template <typename T>
struct ImageEncoderParamsT {
    TensorT<T> W_embed;  // [N*l*l x M]
    TokenEncoderParamsT<T> tokens;
};

struct EncodeAttention {
    // per block: [2 x D x T x T] matrices flattened into the stack later
    std::vector<Tensor> fwd, bwd;
};

// Class-token sequence encoder shared by the image branches (after patch
// embedding) and the final 5-token aggregator.
template <typename T>
TokenSequenceT<T> encode_token_sequence(const TokenSequenceT<T>& seq,
                                        const TokenEncoderParamsT<T>& p, bool zoh = false,
                                        EncodeAttention* attention = nullptr) {
    TensorT<T> h = seq.embeddings;
    for (size_t l = 0; l < p.blocks.size(); ++l) {
        if (attention) {
            TensorT<T> af, ab;
            if constexpr (std::is_same_v<T, float>) {
                h = vim_block(h, p.blocks[l], zoh, &af, &ab);
                attention->fwd.push_back(af);
                attention->bwd.push_back(ab);
            } else {
                h = vim_block(h, p.blocks[l], zoh);
            }
        } else {
            h = vim_block(h, p.blocks[l], zoh);
        }
    }
    h = layer_norm(h, p.final_gain, p.final_bias, T(kLayerNormEps));
    return {h, seq.class_index};
}

// patchify -> embed + center class token -> L blocks -> final norm -> the
// class-token row.
template <typename T>
TensorT<T> encode(const TensorT<T>& image, const ImageEncoderParamsT<T>& p,
                  size_t patch_size, bool zoh = false,
                  EncodeAttention* attention = nullptr) {
    auto patches = patchify(image, patch_size);
    auto seq = embed_and_insert_cls(patches, p.W_embed, p.tokens.cls, p.tokens.pos);
    auto out = encode_token_sequence(seq, p.tokens, zoh, attention);
    return row(out.embeddings, out.class_index);
}

// ---- initialization ----

template <typename T>
TensorT<T> init_linear(size_t fan_in, size_t fan_out, Rng& rng) {
    TensorT<T> w(Shape{fan_in, fan_out});
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
    w.set_requires_grad(true);
    return w;
}

template <typename T>
TensorT<T> init_bias(size_t n, Rng& rng, double scale = 0.0) {
    TensorT<T> b(Shape{n});
    for (auto& v : b.vec()) v = static_cast<T>(rng.uniform(-scale, scale));
    b.set_requires_grad(true);
    return b;
}

template <typename T>
TensorT<T> init_embedding(Shape shape, Rng& rng, double stddev = 0.02) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(rng.normal(0.0, stddev));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
VimBlockParamsT<T> init_vim_block(size_t M, size_t E, size_t conv_k, size_t S, Rng& rng) {
    VimBlockParamsT<T> p;
    const size_t inner = E * M;
    p.norm_gain = TensorT<T>::ones({M}).set_requires_grad(true);
    p.norm_bias = TensorT<T>::zeros({M}).set_requires_grad(true);
    p.W_x = init_linear<T>(M, inner, rng);
    p.b_x = init_bias<T>(inner, rng);
    p.W_z = init_linear<T>(M, inner, rng);
    p.b_z = init_bias<T>(inner, rng);
    p.W_out = init_linear<T>(inner, M, rng);
    p.b_out = init_bias<T>(M, rng);
    for (auto* dir : {&p.fwd, &p.bwd}) {
        dir->conv_w = TensorT<T>(Shape{conv_k, inner});
        const double cb = 1.0 / std::sqrt(double(conv_k));
        for (auto& v : dir->conv_w.vec()) v = static_cast<T>(rng.uniform(-cb, cb));
        dir->conv_w.set_requires_grad(true);
        dir->ssm = init_ssm_params<T>(inner, S, rng);
    }
    return p;
}

template <typename T>
TokenEncoderParamsT<T> init_token_encoder(size_t num_tokens, size_t M, size_t L, size_t E,
                                          size_t conv_k, size_t S, Rng& rng) {
    TokenEncoderParamsT<T> p;
    p.cls = init_embedding<T>({M}, rng);
    p.pos = init_embedding<T>({num_tokens + 1, M}, rng);
    for (size_t l = 0; l < L; ++l) p.blocks.push_back(init_vim_block<T>(M, E, conv_k, S, rng));
    p.final_gain = TensorT<T>::ones({M}).set_requires_grad(true);
    p.final_bias = TensorT<T>::zeros({M}).set_requires_grad(true);
    return p;
}

template <typename T>
ImageEncoderParamsT<T> init_image_encoder(const VimConfig& cfg, Rng& rng) {
    ImageEncoderParamsT<T> p;
    p.W_embed = init_linear<T>(cfg.patch_dim(), cfg.embed_dim, rng);
    p.tokens = init_token_encoder<T>(cfg.tokens(), cfg.embed_dim, cfg.layers, cfg.expand,
                                     cfg.conv_kernel, cfg.state_size, rng);
    return p;
}

// ---- registration ----

template <typename T>
void register_vim_block(VimBlockParamsT<T>& p, const std::string& prefix, ParamMapT<T>& out) {
    out.emplace(prefix + ".norm_gain", p.norm_gain);
    out.emplace(prefix + ".norm_bias", p.norm_bias);
    out.emplace(prefix + ".W_x", p.W_x);
    out.emplace(prefix + ".b_x", p.b_x);
    out.emplace(prefix + ".W_z", p.W_z);
    out.emplace(prefix + ".b_z", p.b_z);
    out.emplace(prefix + ".W_out", p.W_out);
    out.emplace(prefix + ".b_out", p.b_out);
    out.emplace(prefix + ".fwd.conv_w", p.fwd.conv_w);
    out.emplace(prefix + ".bwd.conv_w", p.bwd.conv_w);
    register_ssm_params(p.fwd.ssm, prefix + ".fwd.ssm", out);
    register_ssm_params(p.bwd.ssm, prefix + ".bwd.ssm", out);
}

template <typename T>
void register_token_encoder(TokenEncoderParamsT<T>& p, const std::string& prefix,
                            ParamMapT<T>& out) {
    out.emplace(prefix + ".cls", p.cls);
    out.emplace(prefix + ".pos", p.pos);
    for (size_t l = 0; l < p.blocks.size(); ++l)
        register_vim_block(p.blocks[l], prefix + ".block" + std::to_string(l), out);
    out.emplace(prefix + ".final_gain", p.final_gain);
    out.emplace(prefix + ".final_bias", p.final_bias);
}

template <typename T>
void register_image_encoder(ImageEncoderParamsT<T>& p, const std::string& prefix,
                            ParamMapT<T>& out) {
    out.emplace(prefix + ".W_embed", p.W_embed);
    register_token_encoder(p.tokens, prefix + ".tokens", out);
}

}  // namespace pumba
