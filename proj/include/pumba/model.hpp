#pragma once

// The full scoring network: image channels and energy terms routed into
// five functional groups, each through a hybrid branch (ViM encoder plus a
// fully connected integration), aggregated by a final ViM encoder over the
// five branch tokens, squashed to a binding score in (0, 1).

#include <array>
#include <string>
#include <vector>

#include "pumba/capri.hpp"
#include "pumba/encoder.hpp"

namespace pumba {

constexpr size_t kEnergyCount = 9;

// Fixed energy-vector order.
inline const std::array<const char*, kEnergyCount>& energy_names() {
    static const std::array<const char*, kEnergyCount> names = {
        "van_der_waals", "desolvation",    "insideness",
        "hydrogen_bonds", "disulfide_bonds", "electrostatics",
        "pi_stacking",    "cation_pi",      "aliphatic"};
    return names;
}

// Default channel layout (N = 13): per-point features for both patches,
// paired per feature, plus the single patch-distance channel.
inline const std::array<const char*, 13>& channel_names() {
    static const std::array<const char*, 13> names = {
        "shape_p1",      "shape_p2",      "curvature_p1", "curvature_p2",
        "hbond_p1",      "hbond_p2",      "charge_p1",    "charge_p2",
        "hydropathy_p1", "hydropathy_p2", "rasa_p1",      "rasa_p2",
        "patch_dist"};
    return names;
}

// One scored docking model: paired-interface feature image, the nine
// empirical energy terms, and its labels.
struct InterfacePairSample {
    std::string complex_id;
    std::string model_id;
    int label = 0;  // native 1 / non-native 0
    CapriCategory category = CapriCategory::incorrect;
    Tensor image;                 // [N x a x a]
    std::vector<float> energies;  // kEnergyCount values, fixed order
};

struct BranchGroup {
    std::string name;
    std::vector<size_t> channels;
    std::vector<size_t> energies;
};

constexpr size_t kGroupCount = 5;

// Assignment of channels and energy terms into the five functional groups.
// Every channel and every energy term belongs to exactly one group.
struct BranchGroupSpec {
    std::array<BranchGroup, kGroupCount> groups;

    static BranchGroupSpec defaults() {
        BranchGroupSpec s;
        s.groups[0] = {"shape", {0, 1, 2, 3, 12}, {0, 2, 8}};
        s.groups[1] = {"rasa", {10, 11}, {4}};
        s.groups[2] = {"charge", {6, 7}, {5, 6, 7}};
        s.groups[3] = {"hbond", {4, 5}, {3}};
        s.groups[4] = {"hydropathy", {8, 9}, {1}};
        return s;
    }

    size_t channel_count() const {
        size_t n = 0;
        for (const auto& g : groups) n += g.channels.size();
        return n;
    }

    void validate(size_t n_channels, size_t n_energies) const {
        static const std::array<const char*, kGroupCount> want_names = {
            "shape", "rasa", "charge", "hbond", "hydropathy"};
        for (size_t i = 0; i < kGroupCount; ++i)
            if (groups[i].name != want_names[i])
                throw ConfigError("branch group " + std::to_string(i) + " must be named '" +
                                  want_names[i] + "', got '" + groups[i].name + "'");
        auto check_partition = [](const char* what, size_t n,
                                  const std::array<BranchGroup, kGroupCount>& groups,
                                  bool energies) {
            std::vector<int> count(n, 0);
            for (const auto& g : groups)
                for (size_t idx : energies ? g.energies : g.channels) {
                    if (idx >= n)
                        throw ConfigError(std::string("branch spec: ") + what + " index " +
                                          std::to_string(idx) + " out of range [0, " +
                                          std::to_string(n) + ")");
                    ++count[idx];
                }
            std::string missing, dup;
            for (size_t i = 0; i < n; ++i) {
                if (count[i] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(i);
                if (count[i] > 1) dup += (dup.empty() ? "" : ", ") + std::to_string(i);
            }
            if (!missing.empty() || !dup.empty())
                throw ConfigError(std::string("branch spec: ") + what +
                                  " indices must form a partition; uncovered: [" + missing +
                                  "], doubly assigned: [" + dup + "]");
        };
        check_partition("channel", n_channels, groups, false);
        check_partition("energy", n_energies, groups, true);
    }
};

struct ModelConfig {
    VimConfig vim;             // branch encoder geometry (channels set per group)
    size_t fc_hidden = 64;     // integration-layer width
    size_t final_layers = 4;   // blocks in the 5-token aggregator
    BranchGroupSpec spec = BranchGroupSpec::defaults();
};

template <typename T>
struct GroupSliceT {
    TensorT<T> sub_image;   // [n_g x a x a]
    TensorT<T> sub_energy;  // [e_g]
};

// Channel-sliced sub-images and energy sub-vectors in the fixed group order
// (shape, rasa, charge, hbond, hydropathy).
template <typename T>
std::array<GroupSliceT<T>, kGroupCount> split_groups(const TensorT<T>& image,
                                                     const TensorT<T>& energies,
                                                     const BranchGroupSpec& spec) {
    if (image.rank() != 3)
        throw ShapeError("split_groups: image must be [N x a x a], got " +
                         shape_str(image.shape()));
    spec.validate(image.extent(0), energies.size());
    const size_t a = image.extent(1);
    std::array<GroupSliceT<T>, kGroupCount> out;
    for (size_t g = 0; g < kGroupCount; ++g) {
        auto sub = select_rows(image, spec.groups[g].channels);  // leading-axis gather
        out[g].sub_image = sub;
        out[g].sub_energy = select_rows(energies, spec.groups[g].energies);
        (void)a;
    }
    return out;
}

template <typename T>
struct BranchParamsT {
    ImageEncoderParamsT<T> encoder;
    TensorT<T> W_fc1, b_fc1;  // [(M + e_g) x H]
    TensorT<T> W_fc2, b_fc2;  // [H x M]
};

template <typename T>
struct PumbaParamsT {
    ModelConfig cfg;
    std::array<BranchParamsT<T>, kGroupCount> branches;
    TokenEncoderParamsT<T> final_encoder;  // over the 5 branch tokens
    TensorT<T> W_head, b_head;             // [M x 1], [1]
};

using PumbaParams = PumbaParamsT<float>;

template <typename T>
PumbaParamsT<T> init_pumba_params(const ModelConfig& cfg, Rng& rng) {
    cfg.spec.validate(cfg.vim.channels, kEnergyCount);
    PumbaParamsT<T> p;
    p.cfg = cfg;
    const size_t M = cfg.vim.embed_dim;
    for (size_t g = 0; g < kGroupCount; ++g) {
        VimConfig bc = cfg.vim;
        bc.channels = cfg.spec.groups[g].channels.size();
        auto sub = rng.fork(g + 1);
        p.branches[g].encoder = init_image_encoder<T>(bc, sub);
        const size_t e_g = cfg.spec.groups[g].energies.size();
        p.branches[g].W_fc1 = init_linear<T>(M + e_g, cfg.fc_hidden, sub);
        p.branches[g].b_fc1 = init_bias<T>(cfg.fc_hidden, sub);
        p.branches[g].W_fc2 = init_linear<T>(cfg.fc_hidden, M, sub);
        p.branches[g].b_fc2 = init_bias<T>(M, sub);
    }
    auto fin = rng.fork(99);
    p.final_encoder = init_token_encoder<T>(kGroupCount, M, cfg.final_layers, cfg.vim.expand,
                                            cfg.vim.conv_kernel, cfg.vim.state_size, fin);
    p.W_head = init_linear<T>(M, 1, fin);
    p.b_head = init_bias<T>(1, fin);
    return p;
}

template <typename T>
void register_pumba_params(PumbaParamsT<T>& p, ParamMapT<T>& out) {
    for (size_t g = 0; g < kGroupCount; ++g) {
        const std::string prefix = "branch." + p.cfg.spec.groups[g].name;
        register_image_encoder(p.branches[g].encoder, prefix + ".encoder", out);
        out.emplace(prefix + ".W_fc1", p.branches[g].W_fc1);
        out.emplace(prefix + ".b_fc1", p.branches[g].b_fc1);
        out.emplace(prefix + ".W_fc2", p.branches[g].W_fc2);
        out.emplace(prefix + ".b_fc2", p.branches[g].b_fc2);
    }
    register_token_encoder(p.final_encoder, "final", out);
    out.emplace("head.W", p.W_head);
    out.emplace("head.b", p.b_head);
}

// ViM encoding of the sub-image, concatenated with the energy sub-vector,
// through the two-layer integration with SiLU between.
template <typename T>
TensorT<T> hybrid_branch(const TensorT<T>& sub_image, const TensorT<T>& sub_energy,
                         const BranchParamsT<T>& p, size_t patch_size, bool zoh = false,
                         EncodeAttention* attention = nullptr) {
    auto emb = encode(sub_image, p.encoder, patch_size, zoh, attention);
    auto cat = concat<T>({emb, sub_energy}, 0);
    auto h1 = silu(add(matmul(reshape(cat, {1, cat.size()}), p.W_fc1), p.b_fc1));
    auto h2 = add(matmul(h1, p.W_fc2), p.b_fc2);
    return reshape(h2, {h2.extent(1)});
}

template <typename T>
struct ModelOutputT {
    TensorT<T> score;              // [1], in (0, 1)
    TensorT<T> final_cls;          // [M], pre-head class embedding
    TensorT<T> branch_embeddings;  // [5 x M]
};

// Per-encoder hidden-attention stacks collected during a scoring pass.
struct ModelAttention {
    std::array<HiddenAttentionStack, kGroupCount> branch_stacks;
    HiddenAttentionStack final_stack;
};

namespace detail {

inline HiddenAttentionStack build_stack(const EncodeAttention& att, size_t token_count) {
    HiddenAttentionStack stack;
    stack.token_count = token_count;
    const size_t L = att.fwd.size();
    if (L == 0) return stack;
    const size_t D = att.fwd[0].extent(0);
    const size_t Tn = att.fwd[0].extent(1);
    stack.matrices = Tensor(Shape{L, 2, D, Tn, Tn});
    const size_t block = D * Tn * Tn;
    for (size_t l = 0; l < L; ++l) {
        std::copy_n(att.fwd[l].data(), block, stack.matrices.data() + (l * 2 + 0) * block);
        std::copy_n(att.bwd[l].data(), block, stack.matrices.data() + (l * 2 + 1) * block);
    }
    return stack;
}

}  // namespace detail

// Aggregate the five branch embeddings through the final encoder and the
// logistic head. Exposed separately so a branch embedding can be substituted
// wholesale (branch-isolation analysis).
template <typename T>
ModelOutputT<T> score_from_embeddings(const TensorT<T>& branch_embeddings,
                                      const PumbaParamsT<T>& p,
                                      EncodeAttention* attention = nullptr) {
    if (branch_embeddings.rank() != 2 || branch_embeddings.extent(0) != kGroupCount)
        throw ShapeError("score_from_embeddings: want [5 x M], got " +
                         shape_str(branch_embeddings.shape()));
    const size_t M = branch_embeddings.extent(1);
    const size_t c = kGroupCount / 2;
    auto cls_row = reshape(p.final_encoder.cls, {1, M});
    auto seq0 = concat<T>({row_range(branch_embeddings, 0, c), cls_row,
                           row_range(branch_embeddings, c, kGroupCount)},
                          0);
    TokenSequenceT<T> seq{add(seq0, p.final_encoder.pos), c};
    auto encoded = encode_token_sequence(seq, p.final_encoder, p.cfg.vim.exact_zoh, attention);
    auto cls = row(encoded.embeddings, encoded.class_index);
    auto logit = add(matmul(reshape(cls, {1, M}), p.W_head), p.b_head);
    ModelOutputT<T> out;
    out.score = sigmoid(reshape(logit, {1}));
    out.final_cls = cls;
    out.branch_embeddings = branch_embeddings;
    return out;
}

template <typename T>
ModelOutputT<T> model_forward(const TensorT<T>& image, const TensorT<T>& energies,
                              const PumbaParamsT<T>& p, ModelAttention* attention = nullptr) {
    auto slices = split_groups(image, energies, p.cfg.spec);
    std::vector<TensorT<T>> embs;
    embs.reserve(kGroupCount);
    for (size_t g = 0; g < kGroupCount; ++g) {
        EncodeAttention att;
        EncodeAttention* att_ptr = attention ? &att : nullptr;
        embs.push_back(hybrid_branch(slices[g].sub_image, slices[g].sub_energy,
                                     p.branches[g], p.cfg.vim.patch_size,
                                     p.cfg.vim.exact_zoh, att_ptr));
        if (attention)
            attention->branch_stacks[g] =
                detail::build_stack(att, p.cfg.vim.tokens() + 1);
    }
    auto tokens = stack_rows(embs);  // [5 x M]
    EncodeAttention fin_att;
    auto out = score_from_embeddings(tokens, p, attention ? &fin_att : nullptr);
    if (attention) attention->final_stack = detail::build_stack(fin_att, kGroupCount + 1);
    return out;
}

// The public scoring result: a probability-like score plus the branch
// embeddings retained for explainability and the contrastive loss.
struct BindingScore {
    float score = 0.0f;
    Tensor branch_embeddings;  // [5 x M]
};

inline Tensor energies_tensor(const std::vector<float>& energies) {
    if (energies.size() != kEnergyCount)
        throw ShapeError("energies: want " + std::to_string(kEnergyCount) + " values, got " +
                         std::to_string(energies.size()));
    return Tensor::from_data({kEnergyCount}, std::vector<float>(energies));
}

inline BindingScore score_sample(const InterfacePairSample& sample, const PumbaParams& p,
                                 ModelAttention* attention = nullptr) {
    auto out = model_forward(sample.image, energies_tensor(sample.energies), p, attention);
    return BindingScore{out.score.item(), out.branch_embeddings};
}

}  // namespace pumba
